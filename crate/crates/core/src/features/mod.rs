//! Signal analysis: MFCCs, dynamic time warping and k-means labeling of
//! drum attacks.

mod dtw;
mod kmeans;
mod mfcc;

pub use dtw::dtw;
pub use kmeans::{assign_cluster, kmeans_fit, kmeans_fit_traced, ClusterModel, KMeansFit, MAX_ITERATIONS};
pub use mfcc::{
    dct_matrix, hann, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, MfccConfig, MfccExtractor,
    MfccSequence,
};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

/// Length of the attack window analysed for drum labeling.
pub const ATTACK_MS: f64 = 70.0;

/// Mean of the 20 MFCCs over 10 ms windows covering the first 70 ms.
pub fn drum_attack_features(clip: &AudioClip) -> Result<Vec<f64>> {
    let attack = (ATTACK_MS * clip.sample_rate() as f64 / 1000.0) as usize;
    if clip.len() < attack {
        return Err(Error::InvalidArgument(format!(
            "clip of {:.1} ms is shorter than the {ATTACK_MS} ms attack window",
            clip.duration_ms()
        )));
    }
    let cfg = MfccConfig::drum_attack();
    let seq = MfccExtractor::new(&cfg, clip.sample_rate())?.extract_samples(&clip.samples()[..attack])?;
    let n = seq.num_frames() as f64;
    Ok(seq
        .frames()
        .columns()
        .into_iter()
        .map(|c| c.sum() / n)
        .collect())
}

/// Attack features for a batch of clips, then k-means with `k` clusters.
pub fn cluster_drums(clips: &[AudioClip], k: usize, seed: u64) -> Result<ClusterModel> {
    let feats = clips
        .iter()
        .map(drum_attack_features)
        .collect::<Result<Vec<_>>>()?;
    kmeans_fit(&feats, k, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_features_have_twenty_dims_and_ignore_the_tail() {
        let sr = 22050;
        let head: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin() * 0.8).collect();
        let mut a = head.clone();
        a.extend(vec![0.0; 14384]);
        let mut b = head;
        b.extend((0..14384).map(|i| (i as f64 * 0.3).cos() * 0.5));
        let fa = drum_attack_features(&AudioClip::new(a, sr).unwrap()).unwrap();
        let fb = drum_attack_features(&AudioClip::new(b, sr).unwrap()).unwrap();
        assert_eq!(fa.len(), 20);
        assert_eq!(fa, fb);
    }

    #[test]
    fn constant_clip_average_is_any_frame() {
        let clip = AudioClip::new(vec![0.4; 4000], 22050).unwrap();
        let feats = drum_attack_features(&clip).unwrap();
        let frame = mfcc(
            &AudioClip::new(vec![0.4; 220], 22050).unwrap(),
            &MfccConfig::drum_attack(),
        )
        .unwrap();
        for (a, b) in feats.iter().zip(frame.frames().row(0)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = AudioClip::silence(1000, 22050);
        assert!(drum_attack_features(&clip).is_err());
    }
}
