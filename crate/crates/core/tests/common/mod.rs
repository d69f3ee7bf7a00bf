#![allow(dead_code)]

use soundmorph::nn::*;

pub mod gradcheck;

/// Dilated VAE small enough for finite differences: 32 samples, a two-layer
/// block with both dilation cycles active.
pub fn micro_dc(seed: u64) -> ModelConfig {
    let arch = Architecture::Dilated {
        front_filters: 2,
        front_kernel: 4,
        block: DilationBlockSpec {
            num_layers: 2,
            channels: 3,
            kernel: 2,
            m1: 2,
            m2: 1,
        },
        downsample_layers: 3,
    };
    let mut cfg = ModelConfig::new(arch, 32, 3, seed);
    cfg.classifier = ClassifierSpec {
        hidden_layers: vec![4, 3],
        num_classes: 3,
    };
    cfg
}

pub fn micro_cc(seed: u64) -> ModelConfig {
    let arch = Architecture::Convolutional {
        stages: vec![
            ConvStage { filters: 3, kernel: 5 },
            ConvStage { filters: 2, kernel: 4 },
            ConvStage { filters: 4, kernel: 4 },
        ],
    };
    let mut cfg = ModelConfig::new(arch, 32, 3, seed);
    cfg.classifier = ClassifierSpec {
        hidden_layers: vec![4],
        num_classes: 3,
    };
    cfg
}

pub fn wave(len: usize, salt: f64) -> Vec<f64> {
    (0..len)
        .map(|i| 0.6 * ((i as f64 + salt) * 0.37).sin() + 0.2 * ((i as f64 * salt) * 0.11).cos())
        .collect()
}
