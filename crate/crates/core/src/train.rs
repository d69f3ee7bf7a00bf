//! Losses, optimizer and the alternating two-gradient training loop.
//!
//! Every batch receives two updates in a fixed order. The first descends
//! `λ_recon·MSE + λ_kl·KL` on encoder and decoder parameters, the second
//! descends `λ_class·CE` on encoder and classifier parameters. Each route
//! keeps its own optimizer state and learning rate. The same noise draw is
//! used for both updates and for the loss record taken afterwards.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::DatasetSplit;
use crate::error::{Error, Result};
use crate::nn::{save_checkpoint, Gradients, Group, Heads, ModelParams, OutputGrads, ParamStore};

fn check_batch<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B], what: &str) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!(
            "{what}: batches of {} and {} rows",
            a.len(),
            b.len()
        )));
    }
    for (ra, rb) in a.iter().zip(b) {
        if ra.as_ref().len() != rb.as_ref().len() {
            return Err(Error::Shape(format!(
                "{what}: rows of length {} and {}",
                ra.as_ref().len(),
                rb.as_ref().len()
            )));
        }
    }
    Ok(())
}

/// Mean squared difference over every sample of every clip in the batch.
pub fn mse_loss<A: AsRef<[f64]>, B: AsRef<[f64]>>(x: &[A], y: &[B]) -> Result<f64> {
    check_batch(x, y, "mse")?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in x.iter().zip(y) {
        for (p, q) in a.as_ref().iter().zip(b.as_ref()) {
            total += (p - q) * (p - q);
        }
        count += a.as_ref().len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// KL divergence from `N(mu, exp(log_var))` to the standard normal, summed
/// over latent dimensions and averaged over the batch.
pub fn kl_gaussian_standard<A: AsRef<[f64]>, B: AsRef<[f64]>>(mu: &[A], log_var: &[B]) -> Result<f64> {
    check_batch(mu, log_var, "kl")?;
    let mut total = 0.0;
    for (m, lv) in mu.iter().zip(log_var) {
        for (&m, &lv) in m.as_ref().iter().zip(lv.as_ref()) {
            if !m.is_finite() || !lv.is_finite() {
                return Err(Error::NonFinite("KL input".into()));
            }
            total += 0.5 * (m * m + lv.exp() - 1.0 - lv);
        }
    }
    Ok(total / mu.len() as f64)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Mean negative log softmax probability of the true class.
pub fn cross_entropy<A: AsRef<[f64]>>(logits: &[A], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::Shape(format!(
            "cross entropy over {} logit rows and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in logits.iter().zip(labels) {
        let row = row.as_ref();
        if label >= row.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} outside {} classes",
                row.len()
            )));
        }
        total -= log_softmax(row)[label];
    }
    Ok(total / logits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_recon: f64,
    pub lambda_kl: f64,
    pub lambda_class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            lambda_kl: 0.0001,
            lambda_class: 1.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_vae: f64,
    pub lr_class: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 117,
            batch_size: 10,
            lr_vae: 0.0005,
            lr_class: 0.001,
            seed: 0,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if [w.lambda_recon, w.lambda_kl, w.lambda_class]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::InvalidArgument("loss weights must be finite and >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if !(self.lr_vae >= 0.0 && self.lr_class >= 0.0) {
            return Err(Error::InvalidArgument("learning rates must be >= 0".into()));
        }
        Ok(())
    }
}

/// Unweighted loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub class_ce: f64,
}

/// Adam restricted to a fixed set of parameter groups.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    cfg: AdamConfig,
    groups: Vec<Group>,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, cfg: AdamConfig, groups: &[Group]) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; e.tensor.len()])
            .collect();
        Self {
            lr,
            cfg,
            groups: groups.to_vec(),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.step);
        let c2 = 1.0 - self.cfg.beta2.powi(self.step);
        for (i, entry) in store.entries_mut().iter_mut().enumerate() {
            if !self.groups.contains(&entry.group) {
                continue;
            }
            let g = grads.by_index(i);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, p) in entry.tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                *p -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.cfg.epsilon);
            }
        }
    }
}

/// One training clip and its class.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub input: &'a [f64],
    pub label: usize,
}

fn check_examples(params: &ModelParams, batch: &[Example], eps: &[Vec<f64>]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if eps.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} noise rows for {} examples",
            eps.len(),
            batch.len()
        )));
    }
    for ex in batch {
        if ex.label >= params.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {} outside {} classes",
                ex.label,
                params.num_classes()
            )));
        }
    }
    Ok(())
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{term} loss diverged ({value})")))
    }
}

fn vae_sample(
    params: &ModelParams,
    ex: &Example,
    eps: &[f64],
    weights: &LossWeights,
    n: f64,
) -> Result<(f64, f64, Gradients)> {
    let trace = params.forward_trace(ex.input, eps, Heads::DECODER)?;
    let y = trace.output.as_ref().expect("decoder head");
    let recon = finite(mse_loss(&[ex.input], &[y.as_slice()])?, "reconstruction")?;
    let kl = finite(
        kl_gaussian_standard(&[&trace.latent.mu], &[&trace.latent.log_var])?,
        "KL",
    )?;
    let scale = weights.lambda_recon * 2.0 / (n * params.input_len() as f64);
    let seeds = OutputGrads {
        d_output: Some(y.iter().zip(ex.input).map(|(p, q)| scale * (p - q)).collect()),
        d_logits: None,
        d_mu: Some(trace.latent.mu.iter().map(|m| weights.lambda_kl * m / n).collect()),
        d_log_var: Some(
            trace
                .latent
                .log_var
                .iter()
                .map(|lv| weights.lambda_kl * 0.5 * (lv.exp() - 1.0) / n)
                .collect(),
        ),
    };
    let mut grads = Gradients::zeros_like(params.store());
    params.backward(&trace, &seeds, &mut grads)?;
    Ok((recon, kl, grads))
}

fn class_sample(
    params: &ModelParams,
    ex: &Example,
    eps: &[f64],
    weights: &LossWeights,
    n: f64,
) -> Result<(f64, Gradients)> {
    let trace = params.forward_trace(ex.input, eps, Heads::CLASSIFIER)?;
    let logp = log_softmax(trace.logits.as_ref().expect("classifier head"));
    let ce = finite(-logp[ex.label], "cross-entropy")?;
    let d_logits = logp
        .iter()
        .enumerate()
        .map(|(k, lp)| {
            let target = if k == ex.label { 1.0 } else { 0.0 };
            weights.lambda_class * (lp.exp() - target) / n
        })
        .collect();
    let seeds = OutputGrads {
        d_logits: Some(d_logits),
        ..OutputGrads::default()
    };
    let mut grads = Gradients::zeros_like(params.store());
    params.backward(&trace, &seeds, &mut grads)?;
    Ok((ce, grads))
}

/// Weighted reconstruction + KL loss and its gradient over every parameter.
/// Only encoder and decoder entries can be nonzero. Samples are processed in
/// parallel and reduced in batch order, so results do not depend on the
/// thread count.
pub fn vae_gradients(
    params: &ModelParams,
    batch: &[Example],
    eps: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<(f64, Gradients)> {
    check_examples(params, batch, eps)?;
    let n = batch.len() as f64;
    let parts: Vec<Result<(f64, f64, Gradients)>> = batch
        .par_iter()
        .zip(eps.par_iter())
        .map(|(ex, e)| vae_sample(params, ex, e, weights, n))
        .collect();
    let mut grads = Gradients::zeros_like(params.store());
    let (mut recon, mut kl) = (0.0, 0.0);
    for part in parts {
        let (r, k, g) = part?;
        recon += r / n;
        kl += k / n;
        grads.add_assign(&g);
    }
    Ok((weights.lambda_recon * recon + weights.lambda_kl * kl, grads))
}

/// Weighted cross-entropy of the bottleneck classifier and its gradient.
/// Only encoder and classifier entries can be nonzero.
pub fn class_gradients(
    params: &ModelParams,
    batch: &[Example],
    eps: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<(f64, Gradients)> {
    check_examples(params, batch, eps)?;
    let n = batch.len() as f64;
    let parts: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .zip(eps.par_iter())
        .map(|(ex, e)| class_sample(params, ex, e, weights, n))
        .collect();
    let mut grads = Gradients::zeros_like(params.store());
    let mut ce = 0.0;
    for part in parts {
        let (c, g) = part?;
        ce += c / n;
        grads.add_assign(&g);
    }
    Ok((weights.lambda_class * ce, grads))
}

/// Unweighted loss terms of a batch at fixed noise.
pub fn evaluate_losses(params: &ModelParams, batch: &[Example], eps: &[Vec<f64>]) -> Result<LossRecord> {
    check_examples(params, batch, eps)?;
    let traces: Vec<Result<_>> = batch
        .par_iter()
        .zip(eps.par_iter())
        .map(|(ex, e)| {
            let t = params.forward_trace(ex.input, e, Heads::ALL)?;
            Ok((
                t.output.expect("decoder head"),
                t.logits.expect("classifier head"),
                t.latent.mu,
                t.latent.log_var,
            ))
        })
        .collect();
    let mut outputs = Vec::new();
    let mut mus = Vec::new();
    let mut log_vars = Vec::new();
    let mut logits = Vec::new();
    for t in traces {
        let (y, l, m, lv) = t?;
        outputs.push(y);
        logits.push(l);
        mus.push(m);
        log_vars.push(lv);
    }
    let inputs: Vec<&[f64]> = batch.iter().map(|ex| ex.input).collect();
    let labels: Vec<usize> = batch.iter().map(|ex| ex.label).collect();
    Ok(LossRecord {
        epoch: 0,
        recon: finite(mse_loss(&inputs, &outputs)?, "reconstruction")?,
        kl: finite(kl_gaussian_standard(&mus, &log_vars)?, "KL")?,
        class_ce: finite(cross_entropy(&logits, &labels)?, "cross-entropy")?,
    })
}

/// Optimizer states and the noise/shuffle generator of a training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    vae_opt: Adam,
    class_opt: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(params: &ModelParams, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            vae_opt: Adam::new(params.store(), cfg.lr_vae, cfg.adam, &[Group::Encoder, Group::Decoder]),
            class_opt: Adam::new(
                params.store(),
                cfg.lr_class,
                cfg.adam,
                &[Group::Encoder, Group::Classifier],
            ),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn draw_noise(&mut self, rows: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut self.rng)).collect())
            .collect()
    }

    /// Both updates on one batch, then the losses of the updated model.
    pub fn step(&mut self, params: &mut ModelParams, batch: &[Example]) -> Result<LossRecord> {
        let eps = self.draw_noise(batch.len(), params.latent_dim());
        self.step_with_noise(params, batch, &eps)
    }

    pub fn step_with_noise(
        &mut self,
        params: &mut ModelParams,
        batch: &[Example],
        eps: &[Vec<f64>],
    ) -> Result<LossRecord> {
        let weights = self.cfg.weights;
        let (_, grads) = vae_gradients(params, batch, eps, &weights)?;
        self.vae_opt.apply(params.store_mut(), &grads);
        let (_, grads) = class_gradients(params, batch, eps, &weights)?;
        self.class_opt.apply(params.store_mut(), &grads);
        if !params.store().all_finite() {
            return Err(Error::NonFinite("parameters after update".into()));
        }
        evaluate_losses(params, batch, eps)
    }

    /// One pass over the training part in seeded shuffled order; returns the
    /// mean of the per-batch records.
    pub fn epoch(&mut self, params: &mut ModelParams, split: &DatasetSplit, epoch: usize) -> Result<LossRecord> {
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossRecord {
            epoch,
            recon: 0.0,
            kl: 0.0,
            class_ce: 0.0,
        };
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<Example> = chunk
                .iter()
                .map(|&i| Example {
                    input: split.train[i].clip.samples(),
                    label: split.train[i].label,
                })
                .collect();
            let rec = self.step(params, &batch)?;
            sum.recon += rec.recon;
            sum.kl += rec.kl;
            sum.class_ce += rec.class_ce;
            batches += 1;
        }
        let b = batches as f64;
        sum.recon /= b;
        sum.kl /= b;
        sum.class_ce /= b;
        Ok(sum)
    }
}

/// Where and how `train` reports progress.
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Directory receiving `epoch-NNNN.ckpt` after each epoch and `final.ckpt`.
    pub checkpoint_dir: Option<&'a Path>,
    pub on_epoch: Option<Box<dyn FnMut(&LossRecord) + 'a>>,
}

/// Full training run; records are 1-based by epoch.
pub fn train(
    mut params: ModelParams,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut hooks: TrainHooks,
) -> Result<(ModelParams, Vec<LossRecord>)> {
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let mut trainer = Trainer::new(&params, cfg.clone())?;
    if let Some(dir) = hooks.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let rec = trainer.epoch(&mut params, split, epoch)?;
        if let Some(dir) = hooks.checkpoint_dir {
            save_checkpoint(&params, &dir.join(format!("epoch-{epoch:04}.ckpt")))?;
        }
        if let Some(cb) = hooks.on_epoch.as_mut() {
            cb(&rec);
        }
        records.push(rec);
    }
    if let Some(dir) = hooks.checkpoint_dir {
        save_checkpoint(&params, &dir.join("final.ckpt"))?;
    }
    Ok((params, records))
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_closed_forms() {
        assert_eq!(mse_loss(&[[1.0, 1.0]], &[[0.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(kl_gaussian_standard(&[[0.0]], &[[0.0]]).unwrap(), 0.0);
        assert_eq!(kl_gaussian_standard(&[[1.0]], &[[0.0]]).unwrap(), 0.5);
        let ce = cross_entropy(&[[0.0; 10]], &[3]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        let mut hot = [0.0; 10];
        hot[2] = 1e6;
        assert!(cross_entropy(&[hot], &[2]).unwrap() < 1e-12);
        assert!(cross_entropy(&[[0.0; 3]], &[3]).is_err());
        assert!(mse_loss(&[[1.0]], &[[1.0, 2.0]]).is_err());
        assert!(kl_gaussian_standard(&[[f64::NAN]], &[[0.0]]).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let params = crate::nn::ModelParams::new(crate::nn::ModelConfig::new(
            crate::nn::Architecture::convolutional(),
            64,
            3,
            0,
        ))
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(Trainer::new(&params, cfg).is_err());
        let cfg = TrainConfig {
            weights: LossWeights {
                lambda_kl: -1.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        };
        assert!(Trainer::new(&params, cfg).is_err());
    }
}
