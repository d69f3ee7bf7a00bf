//! Latent interpolation and rendering of morph sequences.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{save_wav, AudioClip};
use crate::error::{Error, Result};
use crate::eval::{class_center, LatentDataset};
use crate::nn::ModelParams;

/// Silence inserted between consecutive steps of a concatenated morph.
pub const DEFAULT_GAP_MS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphRequest {
    pub z_start: Vec<f64>,
    pub z_end: Vec<f64>,
    pub steps: usize,
    #[serde(default = "default_gap")]
    pub gap_ms: f64,
}

fn default_gap() -> f64 {
    DEFAULT_GAP_MS
}

impl MorphRequest {
    pub fn new(z_start: Vec<f64>, z_end: Vec<f64>, steps: usize, gap_ms: f64) -> Result<Self> {
        let req = Self {
            z_start,
            z_end,
            steps,
            gap_ms,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidArgument(format!(
                "a morph needs at least 2 steps, got {}",
                self.steps
            )));
        }
        if self.z_start.len() != self.z_end.len() {
            return Err(Error::Shape(format!(
                "morph endpoints of dimension {} and {}",
                self.z_start.len(),
                self.z_end.len()
            )));
        }
        if self.z_start.iter().chain(&self.z_end).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("morph endpoint".into()));
        }
        if !(self.gap_ms.is_finite() && self.gap_ms >= 0.0) {
            return Err(Error::InvalidArgument(format!("gap of {} ms", self.gap_ms)));
        }
        Ok(())
    }
}

/// Evenly spaced points on the segment from `z_start` to `z_end`, both
/// endpoints included verbatim.
pub fn morph_path(req: &MorphRequest) -> Result<Vec<Vec<f64>>> {
    req.validate()?;
    let last = req.steps - 1;
    let n = last as f64;
    Ok((0..req.steps)
        .map(|k| {
            if k == 0 {
                return req.z_start.clone();
            }
            if k == last {
                return req.z_end.clone();
            }
            let (wa, wb) = ((last - k) as f64, k as f64);
            req.z_start
                .iter()
                .zip(&req.z_end)
                .map(|(a, b)| (wa * a + wb * b) / n)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphResult {
    pub step_clips: Vec<AudioClip>,
    pub concatenated: AudioClip,
}

/// Number of samples in `gap_ms` at `sample_rate`, rounded down.
pub fn gap_samples(gap_ms: f64, sample_rate: u32) -> usize {
    (gap_ms * sample_rate as f64 / 1000.0).floor() as usize
}

/// Decodes every point of the path and joins the clips with silence.
pub fn render_morph(params: &ModelParams, req: &MorphRequest) -> Result<MorphResult> {
    if req.z_start.len() != params.latent_dim() {
        return Err(Error::Shape(format!(
            "morph endpoints have dimension {}, model latent dimension is {}",
            req.z_start.len(),
            params.latent_dim()
        )));
    }
    let path = morph_path(req)?;
    let step_clips = params.decode(&path)?;
    let gap = gap_samples(req.gap_ms, params.config().sample_rate);
    let concatenated = AudioClip::concat_with_gap(&step_clips, gap)?;
    Ok(MorphResult {
        step_clips,
        concatenated,
    })
}

/// Writes `step_NN.wav` for every step and `morph.wav` for the whole sequence.
pub fn write_morph(result: &MorphResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (k, clip) in result.step_clips.iter().enumerate() {
        let path = dir.join(format!("step_{k:02}.wav"));
        save_wav(clip, &path)?;
        written.push(path);
    }
    let path = dir.join("morph.wav");
    save_wav(&result.concatenated, &path)?;
    written.push(path);
    Ok(written)
}

/// Decoded class center for every class of the dataset.
pub fn decode_centers(params: &ModelParams, latent: &LatentDataset) -> Result<BTreeMap<usize, AudioClip>> {
    (0..latent.num_classes())
        .map(|class| Ok((class, params.decode_one(&class_center(latent, class)?)?)))
        .collect()
}

/// Writes one `class_N.wav` per decoded center.
pub fn write_centers(centers: &BTreeMap<usize, AudioClip>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    centers
        .iter()
        .map(|(class, clip)| {
            let path = dir.join(format!("class_{class}.wav"));
            save_wav(clip, &path)?;
            Ok(path)
        })
        .collect()
}

/// How a clip is turned into a latent point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Posterior mean; reproducible.
    #[default]
    Mean,
    /// One draw from the posterior.
    Sample,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DecodeMode::Mean),
            "sample" => Ok(DecodeMode::Sample),
            other => Err(Error::InvalidArgument(format!(
                "decode mode `{other}` (expected mean or sample)"
            ))),
        }
    }
}

/// Latent point of a clip under the given mode.
pub fn latent_of<R: Rng>(params: &ModelParams, clip: &AudioClip, mode: DecodeMode, rng: &mut R) -> Result<Vec<f64>> {
    match mode {
        DecodeMode::Mean => Ok(params.encode_clip(clip)?.z),
        DecodeMode::Sample => {
            let eps: Vec<f64> = (0..params.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
            Ok(params.encode_with_noise(clip.samples(), Some(&eps))?.z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(a: Vec<f64>, b: Vec<f64>, steps: usize) -> MorphRequest {
        MorphRequest::new(a, b, steps, DEFAULT_GAP_MS).unwrap()
    }

    #[test]
    fn endpoints_and_midpoint() {
        let a = vec![0.1, -0.7, 3.3];
        let b = vec![1.9, 0.3, -2.2];
        assert_eq!(morph_path(&req(a.clone(), b.clone(), 2)).unwrap(), vec![a.clone(), b.clone()]);
        let three = morph_path(&req(a.clone(), b.clone(), 3)).unwrap();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert_eq!(three[1], mid);
        let ten = morph_path(&req(a.clone(), b.clone(), 10)).unwrap();
        assert_eq!((&ten[0], &ten[9]), (&a, &b));
    }

    #[test]
    fn validation() {
        assert!(MorphRequest::new(vec![0.0], vec![1.0], 1, 200.0).is_err());
        assert!(MorphRequest::new(vec![0.0], vec![1.0, 2.0], 3, 200.0).is_err());
        assert!(MorphRequest::new(vec![0.0], vec![1.0], 3, -1.0).is_err());
        assert_eq!(gap_samples(200.0, 8000), 1600);
        assert_eq!(gap_samples(0.1, 8000), 0);
    }
}
