//! Acceptance checks, one line each. Run with
//! `cargo test -p soundmorph --test acceptance [-- <name filter>]`.
//!
//! The desk-scale reproduction needs the spoken-digit recordings and hours of
//! CPU time; it runs only when `SOUNDMORPH_DIGITS_DIR` points at them.

mod common;

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soundmorph::audio::{build_digit_dataset, DatasetSplit};
use soundmorph::eval::*;
use soundmorph::features::{dtw, MfccConfig, MfccSequence};
use soundmorph::morph::{gap_samples, morph_path, render_morph, MorphRequest};
use soundmorph::nn::*;
use soundmorph::synthetic::synthetic_digit_split;
use soundmorph::train::*;

const DIGITS_ENV: &str = "SOUNDMORPH_DIGITS_DIR";

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(pass: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

struct Criterion {
    name: &'static str,
    run: fn() -> Outcome,
    /// Failure that is recorded in notes/decisions.md and does not fail the run.
    known_conflict: Option<&'static str>,
}

fn receptive_field_formula() -> Outcome {
    let ten = receptive_field(50, 10).unwrap();
    let five = receptive_field(50, 5).unwrap();
    judge(
        ten == 5119 && five == 319,
        format!("receptive_field(50,10) = {ten} (expected 5119), receptive_field(50,5) = {five} (expected 319)"),
    )
}

fn shape_contract() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for tag in [ArchTag::Dc, ArchTag::Cc] {
        let params = ModelParams::new(ModelConfig::digits(tag, 0)).unwrap();
        let (_, pre) = params.pre_dense_shape();
        let out = params.decode_one(&[0.0; 20]).unwrap().len();
        ok &= pre == 128 && out == 4096;
        notes.push(format!("{tag}: pre-dense length {pre}, decode length {out}"));
    }
    judge(ok, notes.join("; "))
}

fn locality_probe() -> Outcome {
    let spec = DilationBlockSpec {
        num_layers: 10,
        channels: 2,
        kernel: 2,
        m1: 5,
        m2: 5,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let block = DilationBlock::new(&mut store, &mut rng, "b", Group::Encoder, &spec);
    for e in store.entries_mut() {
        for v in e.tensor.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let field = receptive_field(10, 5).unwrap();
    let len = 160;
    let x = Array2::from_shape_fn((2, len), |_| rng.gen_range(-1.0..1.0));
    let base = block.forward(&store, x.view(), None);
    let t = 140;
    let (mut leaks, mut dead) = (0, 0);
    for s in 0..len {
        let mut y = x.clone();
        y[[0, s]] += 0.5;
        let out = block.forward(&store, y.view(), None);
        let change = (0..2).map(|c| (out[[c, t]] - base[[c, t]]).abs()).fold(0.0, f64::max);
        let inside = s <= t && t - s < field;
        if inside && change == 0.0 {
            dead += 1;
        }
        if !inside && change != 0.0 {
            leaks += 1;
        }
    }
    judge(
        leaks == 0 && dead == 0,
        format!("field {field}; {leaks} outside inputs moved the output, {dead} inside inputs did not"),
    )
}

fn gradient_correctness() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, cfg) in [("DC", common::micro_dc(1)), ("CC", common::micro_cc(1))] {
        let r = common::gradcheck::compare(cfg, common::gradcheck::unit_weights());
        ok &= r.failures.is_empty();
        notes.push(format!(
            "{name}: {} partials, worst relative error {:.2e}, {} mismatches",
            r.checked,
            r.worst,
            r.failures.len()
        ));
    }
    judge(ok, notes.join("; "))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn enumerate_paths(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
    let acc = acc + dist(&a[i], &b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        *best = best.min(acc);
        return;
    }
    if i + 1 < a.len() {
        enumerate_paths(a, b, i + 1, j, acc, best);
    }
    if j + 1 < b.len() {
        enumerate_paths(a, b, i, j + 1, acc, best);
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        enumerate_paths(a, b, i + 1, j + 1, acc, best);
    }
}

fn dtw_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = 0;
    for _ in 0..200 {
        let dim = rng.gen_range(1..4);
        let (n, m) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let mut draw = |len: usize| -> Vec<Vec<f64>> {
            (0..len).map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
        };
        let (a, b) = (draw(n), draw(m));
        let mut best = f64::INFINITY;
        enumerate_paths(&a, &b, 0, 0, 0.0, &mut best);
        let ours = dtw(
            &MfccSequence::from_rows(&a).unwrap(),
            &MfccSequence::from_rows(&b).unwrap(),
        )
        .unwrap();
        if ours != best {
            mismatches += 1;
        }
    }
    judge(mismatches == 0, format!("{mismatches}/200 pairs differ from path enumeration"))
}

fn kl_closed_form() -> Outcome {
    let cases: [(&[f64], &[f64]); 4] = [
        (&[1.0], &[0.0]),
        (&[0.5, -0.3], &[0.4, -0.8]),
        (&[-1.2, 0.0, 0.7], &[0.0, 1.0, -0.5]),
        (&[0.2, 0.4, -0.6, 1.1], &[-0.3, 0.3, 0.9, -1.2]),
    ];
    let mut ok = kl_gaussian_standard(&[[0.0]], &[[0.0]]).unwrap() == 0.0;
    let mut worst: f64 = 0.0;
    for (k, (mu, lv)) in cases.iter().enumerate() {
        let exact = kl_gaussian_standard(&[mu], &[lv]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let draws = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let mut log_ratio = 0.0;
            for (m, v) in mu.iter().zip(lv.iter()) {
                let e: f64 = rng.sample(StandardNormal);
                let z = m + (v / 2.0).exp() * e;
                log_ratio += -0.5 * v - 0.5 * e * e + 0.5 * z * z;
            }
            sum += log_ratio;
            sum_sq += log_ratio * log_ratio;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
        let z = (exact - mean).abs() / se;
        worst = worst.max(z);
        ok &= z < 3.0;
    }
    judge(ok, format!("largest gap {worst:.2} standard errors over dims 1..4; kl(0,0) = 0"))
}

fn smoke(tag: ArchTag) -> Outcome {
    let started = Instant::now();
    let split = synthetic_digit_split(2, 10, 0, 0);
    let mut model = ModelConfig::digits(tag, 0);
    model.classifier.num_classes = 2;
    let params = ModelParams::new(model).unwrap();
    let examples: Vec<Example> = split
        .train
        .iter()
        .map(|c| Example {
            input: c.clip.samples(),
            label: c.label,
        })
        .collect();
    let zero = vec![vec![0.0; 20]; examples.len()];
    let before = evaluate_losses(&params, &examples, &zero).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (trained, _) = train(params, &split, &cfg, TrainHooks::default()).unwrap();
    let after = evaluate_losses(&trained, &examples, &zero).unwrap();
    let latent = project_dataset(&trained, &split.train, 2).unwrap();
    let acc = knn1_leave_one_out_accuracy(&latent).unwrap();
    judge(
        after.recon < before.recon && after.class_ce < before.class_ce && acc >= 0.9,
        format!(
            "{tag}: recon {:.4e} -> {:.4e}, class CE {:.4} -> {:.4}, leave-one-out 1-NN {acc:.2} ({:.0} s)",
            before.recon,
            after.recon,
            before.class_ce,
            after.class_ce,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn smoke_dc() -> Outcome {
    smoke(ArchTag::Dc)
}

fn smoke_cc() -> Outcome {
    smoke(ArchTag::Cc)
}

struct DeskRun {
    accuracy: f64,
    deviation: f64,
}

fn desk_run(split: &DatasetSplit, tag: ArchTag, seed: u64, lambda_class: f64) -> DeskRun {
    let params = ModelParams::new(ModelConfig::digits(tag, seed)).unwrap();
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    cfg.weights.lambda_class = lambda_class;
    let (trained, _) = train(params, split, &cfg, TrainHooks::default()).unwrap();
    let reference = project_dataset(&trained, &split.train, 10).unwrap();
    let queries = project_dataset(&trained, &split.test, 10).unwrap();
    let report = deviation_report(&trained, split, &MfccConfig::default()).unwrap();
    DeskRun {
        accuracy: knn1_accuracy(&reference, &queries).unwrap(),
        deviation: report.overall_mean,
    }
}

fn desk_scale() -> Outcome {
    let Ok(dir) = std::env::var(DIGITS_ENV) else {
        return Outcome {
            verdict: Verdict::Skip,
            detail: format!("not run; set {DIGITS_ENV} to the spoken-digit recordings (hours of CPU)"),
        };
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..3 {
        let split = build_digit_dataset(Path::new(&dir), seed).unwrap();
        let lambda = LossWeights::default().lambda_class;
        let dc = desk_run(&split, ArchTag::Dc, seed, lambda);
        let cc = desk_run(&split, ArchTag::Cc, seed, lambda);
        let plain = desk_run(&split, ArchTag::Dc, seed, 0.0);
        let pass = dc.accuracy >= 0.85
            && cc.accuracy >= 0.85
            && dc.deviation < cc.deviation
            && dc.deviation < 0.0
            && plain.deviation > 2.0;
        ok &= pass;
        notes.push(format!(
            "seed {seed}: 1-NN DC {:.2} CC {:.2}, deviation DC {:.2} CC {:.2} DC-no-classifier {:.2}",
            dc.accuracy, cc.accuracy, dc.deviation, cc.deviation, plain.deviation
        ));
    }
    judge(ok, notes.join("; "))
}

fn deviation_properties() -> Outcome {
    let mut ok = deviation_from_dtw(2.0, &[3.0, 5.0]).unwrap() == -2.0;
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let d: Vec<f64> = (0..rng.gen_range(2..20)).map(|_| rng.gen_range(0.0..50.0)).collect();
        let mu = rng.gen_range(0.0..50.0);
        let base = deviation_from_dtw(mu, &d).unwrap();
        let c = rng.gen_range(-20.0..20.0);
        let k = rng.gen_range(0.1..10.0);
        let shifted: Vec<f64> = d.iter().map(|v| v + c).collect();
        let scaled: Vec<f64> = d.iter().map(|v| v * k).collect();
        // shifting and scaling the inputs rounds them, so compare relative to the value
        let scale = base.abs().max(1.0);
        worst = worst
            .max((deviation_from_dtw(mu + c, &shifted).unwrap() - base).abs() / scale)
            .max((deviation_from_dtw(mu * k, &scaled).unwrap() - base).abs() / scale);
    }
    ok &= worst <= 1e-12;
    judge(
        ok,
        format!("worst invariance error {worst:.1e} relative to max(1, |dev|) over 1000 draws; dev(2; mean 4, std 1) = -2"),
    )
}

fn morph_contract() -> Outcome {
    let a = vec![0.3, -1.1, 2.5];
    let b = vec![-0.7, 0.4, 2.5];
    let two = morph_path(&MorphRequest::new(a.clone(), b.clone(), 2, 0.0).unwrap()).unwrap();
    let three = morph_path(&MorphRequest::new(a.clone(), b.clone(), 3, 0.0).unwrap()).unwrap();
    let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
    let ten = morph_path(&MorphRequest::new(a.clone(), b.clone(), 10, 0.0).unwrap()).unwrap();
    let mut ok = two == vec![a.clone(), b.clone()] && three[1] == mid && ten[0] == a && ten[9] == b;

    let params = ModelParams::new(common::micro_cc(0)).unwrap();
    let mut lengths = Vec::new();
    for (steps, gap_ms) in [(2, 200.0), (3, 0.0), (10, 200.0), (7, 12.5)] {
        let req = MorphRequest::new(vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.0], steps, gap_ms).unwrap();
        let out = render_morph(&params, &req).unwrap();
        let expected = steps * 32 + (steps - 1) * gap_samples(gap_ms, 8000);
        ok &= out.concatenated.len() == expected && out.step_clips.len() == steps;
        lengths.push(format!("{}={expected}", out.concatenated.len()));
    }
    judge(ok, format!("endpoints and midpoint exact; concatenated lengths {}", lengths.join(", ")))
}

fn chance_level() -> Outcome {
    let split = synthetic_digit_split(10, 40, 10, 0);
    let mut ok = true;
    let mut notes = Vec::new();
    for tag in [ArchTag::Dc, ArchTag::Cc] {
        let params = ModelParams::new(ModelConfig::digits(tag, 0)).unwrap();
        let reference = project_dataset(&params, &split.train, 10).unwrap();
        let queries = project_dataset(&params, &split.test, 10).unwrap();
        let acc = knn1_accuracy(&reference, &queries).unwrap();
        ok &= (0.0..=0.3).contains(&acc);
        notes.push(format!("{tag} untrained 1-NN {acc:.2}"));
    }
    judge(ok, notes.join("; "))
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        name: "receptive-field formula",
        run: receptive_field_formula,
        known_conflict: Some("the closed form of the dilation stack gives 5116/311; see notes/decisions.md"),
    },
    Criterion {
        name: "shape contract",
        run: shape_contract,
        known_conflict: None,
    },
    Criterion {
        name: "receptive-field locality",
        run: locality_probe,
        known_conflict: None,
    },
    Criterion {
        name: "gradient correctness",
        run: gradient_correctness,
        known_conflict: None,
    },
    Criterion {
        name: "dtw oracle",
        run: dtw_oracle,
        known_conflict: None,
    },
    Criterion {
        name: "kl closed form",
        run: kl_closed_form,
        known_conflict: None,
    },
    Criterion {
        name: "smoke training DC",
        run: smoke_dc,
        known_conflict: None,
    },
    Criterion {
        name: "smoke training CC",
        run: smoke_cc,
        known_conflict: None,
    },
    Criterion {
        name: "desk-scale reproduction",
        run: desk_scale,
        known_conflict: None,
    },
    Criterion {
        name: "deviation properties",
        run: deviation_properties,
        known_conflict: None,
    },
    Criterion {
        name: "morph contract",
        run: morph_contract,
        known_conflict: None,
    },
    Criterion {
        name: "chance level",
        run: chance_level,
        known_conflict: None,
    },
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for c in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let outcome = (c.run)();
        let label = match outcome.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        let mut line = format!("acceptance {label} {}: {}", c.name, outcome.detail);
        if let Verdict::Fail = outcome.verdict {
            match c.known_conflict {
                Some(note) => line.push_str(&format!(" [known: {note}]")),
                None => unexpected += 1,
            }
        }
        println!("{line}");
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
