//! Differentiable building blocks and the two VAE architectures.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_as, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use layers::{DilationBlock, DilationBlockSpec};
pub use model::{
    build_ccvae, build_dcvae, reparameterize, ArchTag, Architecture, ClassifierSpec, ConvStage,
    Heads, LatentCode, ModelConfig, ModelParams, OutputGrads, SampleTrace, HIDDEN_ACTIVATION,
};
pub use ops::Activation;
pub use params::{Gradients, Group, ParamId, ParamStore, Tensor};

use crate::error::{Error, Result};

/// Closed-form receptive field of `layers` gated layers with kernel 2 whose
/// dilation cycles through `2^0 .. 2^(cycle-1)`: `(layers/cycle)(2^cycle - 1) + 1`.
pub fn receptive_field(layers: usize, cycle: usize) -> Result<usize> {
    if layers == 0 || cycle == 0 {
        return Err(Error::InvalidArgument(format!(
            "receptive field needs positive layer count and cycle, got ({layers}, {cycle})"
        )));
    }
    if layers % cycle != 0 {
        return Err(Error::InvalidArgument(format!(
            "cycle {cycle} does not divide {layers} layers"
        )));
    }
    let span = u32::try_from(cycle)
        .ok()
        .and_then(|c| 1usize.checked_shl(c))
        .and_then(|p| (layers / cycle).checked_mul(p - 1))
        .and_then(|s| s.checked_add(1))
        .ok_or_else(|| Error::InvalidArgument(format!("receptive field of cycle {cycle} overflows")))?;
    Ok(span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_matches_dilation_sum() {
        for (n, m) in [(1, 1), (10, 5), (12, 3), (50, 10), (50, 5)] {
            let spec = DilationBlockSpec {
                num_layers: n,
                channels: 1,
                kernel: 2,
                m1: m as u32,
                m2: m as u32,
            };
            assert_eq!(receptive_field(n, m).unwrap(), spec.receptive_field());
        }
        assert_eq!(receptive_field(1, 1).unwrap(), 2);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(receptive_field(0, 5).is_err());
        assert!(receptive_field(5, 0).is_err());
        assert!(receptive_field(7, 5).is_err());
        assert!(receptive_field(200, 100).is_err());
    }
}
