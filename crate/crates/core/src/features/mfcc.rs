use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// MFCC analysis settings. Durations are in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub num_coeffs: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub num_mel_filters: usize,
    /// FFT length; `None` picks the next power of two covering the window.
    pub fft_size: Option<usize>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            num_coeffs: 20,
            window_ms: 25.0,
            hop_ms: 10.0,
            num_mel_filters: 40,
            fft_size: None,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    /// Settings for drum attack features: 10 ms windows without overlap.
    pub fn drum_attack() -> Self {
        Self {
            window_ms: 10.0,
            hop_ms: 10.0,
            ..Self::default()
        }
    }

    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0) as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0) as usize
    }

    pub fn fft_len(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_samples(sample_rate).max(1).next_power_of_two())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize, sample_rate: u32) -> usize {
        let win = self.window_samples(sample_rate);
        if len < win || win == 0 {
            0
        } else {
            (len - win) / self.hop_samples(sample_rate) + 1
        }
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        let win = self.window_samples(sample_rate);
        let hop = self.hop_samples(sample_rate);
        if win == 0 || hop == 0 {
            return Err(Error::InvalidArgument(format!(
                "window ({win}) and hop ({hop}) must cover at least one sample"
            )));
        }
        if self.window_ms < self.hop_ms {
            return Err(Error::InvalidArgument("window shorter than hop".into()));
        }
        if self.num_coeffs == 0 || self.num_coeffs > self.num_mel_filters {
            return Err(Error::InvalidArgument(format!(
                "num_coeffs {} must be in 1..={}",
                self.num_coeffs, self.num_mel_filters
            )));
        }
        if self.fft_len(sample_rate) < win {
            return Err(Error::InvalidArgument(format!(
                "fft size {} shorter than window {win}",
                self.fft_len(sample_rate)
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidArgument("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Cepstral frames, one row per analysis window.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    frames: Array2<f64>,
}

impl MfccSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::Shape("an MFCC sequence needs at least one frame".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MFCC frame".into()));
        }
        Ok(Self { frames })
    }

    /// Builds a sequence from rows; convenient for tests and small inputs.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged MFCC rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let frames = Array2::from_shape_vec((rows.len(), cols), flat)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(frames)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn num_coeffs(&self) -> usize {
        self.frames.ncols()
    }

    /// Writes the frames as CSV, one frame per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.frames.rows() {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale spanning 0 Hz to Nyquist,
/// evaluated at the FFT bin frequencies. Shape: filters × (fft/2 + 1).
pub fn mel_filterbank(num_filters: usize, fft_len: usize, sample_rate: u32) -> Array2<f64> {
    let bins = fft_len / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(top * i as f64 / (num_filters + 1) as f64))
        .collect();
    let mut bank = Array2::zeros((num_filters, bins));
    for m in 0..num_filters {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_len as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            bank[[m, k]] = w;
        }
    }
    bank
}

/// Orthonormal DCT-II rows 0..num_coeffs for an input of length `n`.
pub fn dct_matrix(num_coeffs: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((num_coeffs, n), |(k, m)| {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        scale * (PI * k as f64 * (m as f64 + 0.5) / n as f64).cos()
    })
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Precomputed MFCC pipeline for one configuration and sample rate.
pub struct MfccExtractor {
    cfg: MfccConfig,
    sample_rate: u32,
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
    fft_len: usize,
    filterbank: Array2<f64>,
    dct: Array2<f64>,
}

impl MfccExtractor {
    pub fn new(cfg: &MfccConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let fft_len = cfg.fft_len(sample_rate);
        Ok(Self {
            cfg: cfg.clone(),
            sample_rate,
            window: hann(cfg.window_samples(sample_rate)),
            hop: cfg.hop_samples(sample_rate),
            fft: FftPlanner::new().plan_fft_forward(fft_len),
            fft_len,
            filterbank: mel_filterbank(cfg.num_mel_filters, fft_len, sample_rate),
            dct: dct_matrix(cfg.num_coeffs, cfg.num_mel_filters),
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MfccSequence> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "extractor built for {} Hz, clip is {} Hz",
                self.sample_rate,
                clip.sample_rate()
            )));
        }
        self.extract_samples(clip.samples())
    }

    pub fn extract_samples(&self, samples: &[f64]) -> Result<MfccSequence> {
        let win = self.window.len();
        if samples.len() < win {
            return Err(Error::InvalidArgument(format!(
                "signal of {} samples is shorter than one {win}-sample window",
                samples.len()
            )));
        }
        let num_frames = (samples.len() - win) / self.hop + 1;
        let bins = self.fft_len / 2 + 1;
        let mut frames = Array2::zeros((num_frames, self.cfg.num_coeffs));
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_len];
        let mut log_mel = vec![0.0; self.cfg.num_mel_filters];
        for f in 0..num_frames {
            let start = f * self.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win {
                    Complex::new(samples[start + i] * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (m, out) in log_mel.iter_mut().enumerate() {
                let energy: f64 = (0..bins)
                    .map(|k| self.filterbank[[m, k]] * buf[k].norm())
                    .sum();
                *out = energy.max(self.cfg.log_floor).ln();
            }
            for c in 0..self.cfg.num_coeffs {
                frames[[f, c]] = self
                    .dct
                    .row(c)
                    .iter()
                    .zip(&log_mel)
                    .map(|(d, v)| d * v)
                    .sum();
            }
        }
        MfccSequence::new(frames)
    }
}

/// Framing, Hann window, magnitude spectrum, mel filterbank, floored log and DCT-II.
pub fn mfcc(clip: &AudioClip, cfg: &MfccConfig) -> Result<MfccSequence> {
    MfccExtractor::new(cfg, clip.sample_rate())?.extract(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_count_formula() {
        let cfg = MfccConfig::default();
        let clip = AudioClip::silence(4096, 8000);
        let seq = mfcc(&clip, &cfg).unwrap();
        assert_eq!(seq.num_frames(), (4096 - 200) / 80 + 1);
        assert_eq!(seq.num_coeffs(), 20);
        assert_eq!(cfg.fft_len(8000), 256);
    }

    #[test]
    fn constant_signal_gives_identical_frames() {
        let clip = AudioClip::new(vec![0.3; 2000], 8000).unwrap();
        let seq = mfcc(&clip, &MfccConfig::default()).unwrap();
        let first = seq.frames().row(0).to_owned();
        for row in seq.frames().rows() {
            for (a, b) in row.iter().zip(first.iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let cfg = MfccConfig::default();
        let seq = mfcc(&AudioClip::silence(1000, 8000), &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        let expected_c0 = floor * (cfg.num_mel_filters as f64).sqrt();
        for row in seq.frames().rows() {
            assert!((row[0] - expected_c0).abs() < 1e-9);
            assert!(row.iter().skip(1).all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn too_short_clip_is_rejected() {
        let clip = AudioClip::silence(100, 8000);
        assert!(mfcc(&clip, &MfccConfig::default()).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let clip = AudioClip::silence(4096, 8000);
        let cfg = MfccConfig {
            num_coeffs: 50,
            ..MfccConfig::default()
        };
        assert!(mfcc(&clip, &cfg).is_err());
        let cfg = MfccConfig {
            fft_size: Some(64),
            ..MfccConfig::default()
        };
        assert!(mfcc(&clip, &cfg).is_err());
        let cfg = MfccConfig {
            hop_ms: 50.0,
            ..MfccConfig::default()
        };
        assert!(mfcc(&clip, &cfg).is_err());
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 4000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
