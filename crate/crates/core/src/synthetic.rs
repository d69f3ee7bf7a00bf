//! Deterministic stand-in corpora used by tests, demos and smoke training
//! when the recorded datasets are not at hand.
//!
//! A synthetic digit is a voiced harmonic tone whose two resonances glide
//! along a class-specific trajectory; instances differ in pitch, onset,
//! duration, resonance offsets and a little noise. Synthetic drums are five
//! percussive recipes (kick, snare, closed hat, tom, open hat).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{fit_length, save_wav, AudioClip, DatasetSplit, LabeledClip, DIGIT_LENGTH, DIGIT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// `(F1 start, F2 start, F1 end, F2 end)` in Hz for each digit class.
const DIGIT_FORMANTS: [(f64, f64, f64, f64); 10] = [
    (300.0, 2300.0, 650.0, 1100.0),
    (700.0, 1200.0, 350.0, 2100.0),
    (350.0, 800.0, 330.0, 750.0),
    (450.0, 1700.0, 280.0, 2500.0),
    (550.0, 900.0, 600.0, 1600.0),
    (750.0, 1300.0, 300.0, 2300.0),
    (400.0, 2000.0, 400.0, 2000.0),
    (500.0, 1800.0, 480.0, 1200.0),
    (650.0, 1700.0, 350.0, 2400.0),
    (600.0, 1000.0, 700.0, 1250.0),
];

fn instance_rng(seed: u64, class: usize, instance: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 40) ^ ((instance as u64) << 8) ^ 0x5eed)
}

fn resonance(freq: f64, centre: f64, bandwidth: f64) -> f64 {
    let r = (freq - centre) / bandwidth;
    1.0 / (1.0 + r * r)
}

/// One synthetic digit utterance, 4096 samples at 8 kHz, peak-normalized.
pub fn synthetic_digit(class: usize, instance: usize, seed: u64) -> AudioClip {
    let sr = DIGIT_SAMPLE_RATE as f64;
    let (f1a, f2a, f1b, f2b) = DIGIT_FORMANTS[class % DIGIT_FORMANTS.len()];
    let mut rng = instance_rng(seed, class, instance);
    let f0 = rng.gen_range(110.0..150.0);
    let shift = rng.gen_range(0.95..1.05);
    let onset = rng.gen_range(0..400usize);
    let length = rng.gen_range(2600..3500usize).min(DIGIT_LENGTH - onset);
    let noise = rng.gen_range(0.005..0.02);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);

    let mut samples = vec![0.0; DIGIT_LENGTH];
    for (n, slot) in samples.iter_mut().enumerate().skip(onset).take(length) {
        let p = (n - onset) as f64 / length as f64;
        let env = (PI * p).sin().powf(0.7);
        let f1 = shift * (f1a + (f1b - f1a) * p);
        let f2 = shift * (f2a + (f2b - f2a) * p);
        let t = n as f64 / sr;
        let mut v = 0.0;
        let mut k = 1.0;
        while k * f0 < sr / 2.0 - 200.0 {
            let f = k * f0;
            let amp = resonance(f, f1, 90.0) + 0.6 * resonance(f, f2, 120.0);
            v += amp * (2.0 * PI * f * t + k * phase).sin() / k.sqrt();
            k += 1.0;
        }
        *slot = env * v;
    }
    for s in samples.iter_mut() {
        *s += noise * rng.gen_range(-1.0..1.0);
    }
    AudioClip::clamped(samples, DIGIT_SAMPLE_RATE)
        .expect("finite synthesis")
        .peak_normalized()
}

/// Split with `train_per_class` and `test_per_class` synthetic clips per
/// class; source ids follow the `{digit}_synth_{n}` naming of the corpus.
pub fn synthetic_digit_split(
    num_classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> DatasetSplit {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..num_classes {
        for j in 0..train_per_class + test_per_class {
            let item = LabeledClip {
                clip: synthetic_digit(class, j, seed),
                label: class,
                source_id: format!("{class}_synth_{j}"),
            };
            if j < test_per_class {
                test.push(item);
            } else {
                train.push(item);
            }
        }
    }
    DatasetSplit {
        train,
        test,
        num_classes,
        fixed_length: DIGIT_LENGTH,
        sample_rate: DIGIT_SAMPLE_RATE,
        source_root: None,
    }
}

/// Writes `clips_per_class` WAV files per digit, named `{digit}_synth_{n}.wav`.
pub fn write_synthetic_digit_corpus(dir: &Path, num_classes: usize, clips_per_class: usize, seed: u64) -> Result<()> {
    if num_classes > DIGIT_FORMANTS.len() {
        return Err(Error::InvalidArgument(format!(
            "at most {} synthetic digit classes",
            DIGIT_FORMANTS.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for class in 0..num_classes {
        for j in 0..clips_per_class {
            save_wav(&synthetic_digit(class, j, seed), dir.join(format!("{class}_synth_{j}.wav")))?;
        }
    }
    Ok(())
}

/// Percussive recipes of the synthetic drum kit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrumKind {
    Kick,
    Snare,
    ClosedHat,
    Tom,
    OpenHat,
}

impl DrumKind {
    pub const ALL: [DrumKind; 5] = [
        DrumKind::Kick,
        DrumKind::Snare,
        DrumKind::ClosedHat,
        DrumKind::Tom,
        DrumKind::OpenHat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DrumKind::Kick => "kick",
            DrumKind::Snare => "snare",
            DrumKind::ClosedHat => "closed_hat",
            DrumKind::Tom => "tom",
            DrumKind::OpenHat => "open_hat",
        }
    }
}

/// One synthetic drum hit at `sample_rate`, of a kind-dependent length.
pub fn synthetic_drum(kind: DrumKind, instance: usize, seed: u64, sample_rate: u32) -> AudioClip {
    let sr = sample_rate as f64;
    let mut rng = instance_rng(seed, kind as usize + 100, instance);
    let (seconds, decay) = match kind {
        DrumKind::Kick => (0.5, 12.0),
        DrumKind::Snare => (0.35, 18.0),
        DrumKind::ClosedHat => (0.12, 60.0),
        DrumKind::Tom => (0.6, 8.0),
        DrumKind::OpenHat => (0.9, 5.0),
    };
    let len = (seconds * rng.gen_range(0.9..1.1) * sr) as usize;
    let decay = decay * rng.gen_range(0.9..1.1);
    let pitch = rng.gen_range(0.92..1.08);
    let mut hp_prev_in = 0.0;
    let mut hp_prev_out = 0.0;
    let mut phase = 0.0;
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            let env = (-decay * t).exp();
            let white: f64 = rng.gen_range(-1.0..1.0);
            // one-pole high-pass for the metallic kinds
            let hp = 0.95 * (hp_prev_out + white - hp_prev_in);
            hp_prev_in = white;
            hp_prev_out = hp;
            let freq = match kind {
                DrumKind::Kick => pitch * (50.0 + 100.0 * (-30.0 * t).exp()),
                DrumKind::Snare => pitch * 190.0,
                DrumKind::Tom => pitch * (110.0 + 40.0 * (-10.0 * t).exp()),
                _ => 0.0,
            };
            phase += 2.0 * PI * freq / sr;
            let v = match kind {
                DrumKind::Kick => phase.sin(),
                DrumKind::Snare => 0.4 * phase.sin() + 0.6 * white,
                DrumKind::ClosedHat => hp,
                DrumKind::Tom => phase.sin() + 0.05 * white,
                DrumKind::OpenHat => 0.7 * hp + 0.3 * (2.0 * PI * 6000.0 * pitch * t).sin().signum() * white.abs(),
            };
            env * v
        })
        .collect();
    AudioClip::clamped(samples, sample_rate)
        .expect("finite synthesis")
        .peak_normalized()
}

/// Writes `per_kind` hits of every kind as `{kind}_{n}.wav`.
pub fn write_synthetic_drum_kit(dir: &Path, per_kind: usize, seed: u64, sample_rate: u32) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for kind in DrumKind::ALL {
        for j in 0..per_kind {
            save_wav(
                &synthetic_drum(kind, j, seed, sample_rate),
                dir.join(format!("{}_{j}.wav", kind.name())),
            )?;
        }
    }
    Ok(())
}

/// A synthetic digit fitted to an arbitrary length, for reduced-size models.
pub fn synthetic_digit_with_length(class: usize, instance: usize, seed: u64, len: usize) -> AudioClip {
    fit_length(&synthetic_digit(class, instance, seed), len)
}
