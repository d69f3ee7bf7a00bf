use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use soundmorph::nn::*;
use soundmorph::train::{class_gradients, vae_gradients, Example, LossWeights};

use super::wave;

/// Central-difference steps. The first is tried for every parameter; the
/// others only when a leaky-ReLU kink sits within one step of a
/// pre-activation, which makes that difference meaningless.
pub const STEPS: [f64; 4] = [1e-5, 1e-6, 1e-7, 1e-8];
/// Below this magnitude the central difference is dominated by rounding
/// (about 1e-11 at 1e-5), so the error is measured against the floor.
pub const FLOOR: f64 = 1e-7;
pub const TOLERANCE: f64 = 1e-3;

pub struct Fixture {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub eps: Vec<Vec<f64>>,
}

impl Fixture {
    pub fn new(len: usize, latent: usize) -> Self {
        Self {
            inputs: (0..3).map(|i| wave(len, 1.3 + i as f64)).collect(),
            labels: vec![0, 2, 1],
            eps: (0..3).map(|i| (0..latent).map(|d| ((i * 7 + d) as f64 * 0.9).sin()).collect()).collect(),
        }
    }

    pub fn batch(&self) -> Vec<Example<'_>> {
        self.inputs
            .iter()
            .zip(&self.labels)
            .map(|(x, &label)| Example { input: x, label })
            .collect()
    }

    fn losses(&self, params: &ModelParams, w: &LossWeights) -> (f64, f64) {
        let b = self.batch();
        (
            vae_gradients(params, &b, &self.eps, w).unwrap().0,
            class_gradients(params, &b, &self.eps, w).unwrap().0,
        )
    }
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Fresh parameters with random biases. Zero-initialized biases put many
/// pre-activations of the single-channel stages within 1e-9 of the leaky-ReLU
/// kink, where no finite difference is meaningful.
pub fn generic_point(cfg: ModelConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 100);
    let mut params = ModelParams::new(cfg).unwrap();
    for entry in params.store_mut().entries_mut() {
        if entry.name.ends_with(".bias") {
            for v in entry.tensor.data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
    }
    params
}

pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    /// Parameters that needed a smaller step than the first.
    pub retried: usize,
    /// One entry per partial that never came within tolerance.
    pub failures: Vec<String>,
}

/// Compares every reverse-mode partial with a central difference.
pub fn compare(cfg: ModelConfig, weights: LossWeights) -> GradReport {
    let params = generic_point(cfg.clone());
    let fx = Fixture::new(cfg.input_len, cfg.latent_dim);
    let batch = fx.batch();
    let (_, g_vae) = vae_gradients(&params, &batch, &fx.eps, &weights).unwrap();
    let (_, g_class) = class_gradients(&params, &batch, &fx.eps, &weights).unwrap();

    let mut worst: f64 = 0.0;
    let mut retried = 0;
    let mut checked = 0;
    let mut failures = Vec::new();
    let mut probe = params.clone();
    for (idx, entry) in params.store().entries().iter().enumerate() {
        for j in 0..entry.tensor.len() {
            let orig = entry.tensor.data()[j];
            let (a_vae, a_class) = (g_vae.by_index(idx)[j], g_class.by_index(idx)[j]);
            let mut best = f64::INFINITY;
            let mut last = (0.0, 0.0);
            for (attempt, h) in STEPS.iter().enumerate() {
                probe.store_mut().entries_mut()[idx].tensor.data_mut()[j] = orig + h;
                let (vp, cp) = fx.losses(&probe, &weights);
                probe.store_mut().entries_mut()[idx].tensor.data_mut()[j] = orig - h;
                let (vm, cm) = fx.losses(&probe, &weights);
                probe.store_mut().entries_mut()[idx].tensor.data_mut()[j] = orig;
                last = ((vp - vm) / (2.0 * h), (cp - cm) / (2.0 * h));
                let err = relative_error(a_vae, last.0).max(relative_error(a_class, last.1));
                best = best.min(err);
                if best <= TOLERANCE {
                    retried += usize::from(attempt > 0);
                    break;
                }
            }
            if best > TOLERANCE {
                failures.push(format!(
                    "{}[{j}]: vae {a_vae} vs {}, class {a_class} vs {}",
                    entry.name, last.0, last.1
                ));
            }
            checked += 1;
            worst = worst.max(best);
        }
    }
    GradReport {
        checked,
        worst,
        retried,
        failures,
    }
}

/// Panics on the first mismatch; returns the worst relative error.
pub fn check(cfg: ModelConfig, weights: LossWeights) -> f64 {
    let report = compare(cfg, weights);
    assert!(report.failures.is_empty(), "{}", report.failures.join("\n"));
    if report.retried > 0 {
        eprintln!("{} parameters needed a second step size", report.retried);
    }
    report.worst
}

pub fn unit_weights() -> LossWeights {
    LossWeights {
        lambda_recon: 1.0,
        lambda_kl: 1.0,
        lambda_class: 1.0,
    }
}

