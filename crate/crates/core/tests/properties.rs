use proptest::prelude::*;
use soundmorph::audio::{decode_wav_bytes, encode_wav_bytes, fit_length, AudioClip};
use soundmorph::eval::{deviation_from_dtw, knn1_accuracy, population_std, LatentDataset, LatentEntry};
use soundmorph::features::{dtw, MfccSequence};
use soundmorph::morph::{morph_path, MorphRequest};
use soundmorph::nn::reparameterize;
use soundmorph::train::kl_gaussian_standard;

fn frames(dim: usize, max_len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, dim), 1..=max_len)
}

fn seq(rows: &[Vec<f64>]) -> MfccSequence {
    MfccSequence::from_rows(rows).unwrap()
}

proptest! {
    #[test]
    fn dtw_is_symmetric_and_nonnegative(a in frames(3, 12), b in frames(3, 12)) {
        let ab = dtw(&seq(&a), &seq(&b)).unwrap();
        let ba = dtw(&seq(&b), &seq(&a)).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert_eq!(dtw(&seq(&a), &seq(&a)).unwrap(), 0.0);
    }

    #[test]
    fn morph_endpoints_are_exact(
        pair in (1usize..8).prop_flat_map(|d| (prop::collection::vec(-10.0f64..10.0, d), prop::collection::vec(-10.0f64..10.0, d))),
        steps in 2usize..40,
    ) {
        let (a, b) = pair;
        let path = morph_path(&MorphRequest::new(a.clone(), b.clone(), steps, 0.0).unwrap()).unwrap();
        prop_assert_eq!(path.len(), steps);
        prop_assert_eq!(&path[0], &a);
        prop_assert_eq!(&path[steps - 1], &b);
    }

    #[test]
    fn deviation_is_shift_and_scale_invariant(
        d in prop::collection::vec(0.0f64..100.0, 2..30),
        mu in 0.0f64..100.0,
        shift in -50.0f64..50.0,
        scale in 0.01f64..100.0,
    ) {
        let sd = population_std(&d).unwrap();
        prop_assume!(sd > 1e-3);
        let base = deviation_from_dtw(mu, &d).unwrap();
        let shifted: Vec<f64> = d.iter().map(|v| v + shift).collect();
        let scaled: Vec<f64> = d.iter().map(|v| v * scale).collect();
        let tol = 1e-9 * base.abs().max(1.0);
        prop_assert!((deviation_from_dtw(mu + shift, &shifted).unwrap() - base).abs() < tol);
        prop_assert!((deviation_from_dtw(mu * scale, &scaled).unwrap() - base).abs() < tol);
    }

    #[test]
    fn wav_bytes_round_trip(samples in prop::collection::vec(-1.0f64..=1.0, 1..2000), rate in prop::sample::select(vec![8000u32, 16000, 22050])) {
        let clip = AudioClip::new(samples, rate).unwrap();
        let back = decode_wav_bytes(&encode_wav_bytes(&clip)).unwrap();
        prop_assert_eq!(back.len(), clip.len());
        prop_assert_eq!(back.sample_rate(), rate);
        for (a, b) in clip.samples().iter().zip(back.samples()) {
            prop_assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn fit_length_keeps_prefix(samples in prop::collection::vec(-1.0f64..=1.0, 0..300), target in 0usize..400) {
        let clip = AudioClip::new(samples.clone(), 8000).unwrap();
        let fitted = fit_length(&clip, target);
        prop_assert_eq!(fitted.len(), target);
        let kept = target.min(samples.len());
        prop_assert_eq!(&fitted.samples()[..kept], &samples[..kept]);
        prop_assert!(fitted.samples()[kept..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn knn_single_reference_predicts_its_label(
        queries in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 2), 0usize..3), 1..40),
        label in 0usize..3,
    ) {
        let reference = LatentDataset::new(vec![LatentEntry { source_id: "r".into(), label, mu: vec![0.0, 0.0] }], 2, 3).unwrap();
        let entries: Vec<LatentEntry> = queries
            .iter()
            .enumerate()
            .map(|(i, (mu, l))| LatentEntry { source_id: format!("q{i}"), label: *l, mu: mu.clone() })
            .collect();
        let expected = queries.iter().filter(|(_, l)| *l == label).count() as f64 / queries.len() as f64;
        let q = LatentDataset::new(entries, 2, 3).unwrap();
        prop_assert_eq!(knn1_accuracy(&reference, &q).unwrap(), expected);
    }

    #[test]
    fn kl_is_nonnegative(
        pair in (1usize..6).prop_flat_map(|d| (prop::collection::vec(-4.0f64..4.0, d), prop::collection::vec(-4.0f64..4.0, d))),
    ) {
        let (mu, lv) = pair;
        prop_assert!(kl_gaussian_standard(&[&mu], &[&lv]).unwrap() >= 0.0);
    }

    #[test]
    fn zero_noise_reparameterization_returns_mean(mu in prop::collection::vec(-5.0f64..5.0, 1..10)) {
        let lv: Vec<f64> = mu.iter().map(|v| v * 0.3).collect();
        let eps = vec![0.0; mu.len()];
        prop_assert_eq!(reparameterize(&mu, &lv, &eps).unwrap(), mu);
    }
}
