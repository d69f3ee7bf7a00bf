use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, ConvTranspose1d, Dense, DilationBlock, DilationBlockSpec, Layer, LayerCache};
use super::ops::{Activation, ConvGeom};
use super::params::{Gradients, Group, ParamStore};
use crate::audio::{AudioClip, DIGIT_LENGTH, DIGIT_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Short architecture tag stored in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchTag {
    #[serde(rename = "DC")]
    Dc,
    #[serde(rename = "CC")]
    Cc,
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchTag::Dc => "DC",
            ArchTag::Cc => "CC",
        })
    }
}

impl FromStr for ArchTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DC" | "DC-VAE" | "DCVAE" => Ok(ArchTag::Dc),
            "CC" | "CC-VAE" | "CCVAE" => Ok(ArchTag::Cc),
            _ => Err(Error::InvalidArgument(format!(
                "unknown architecture `{s}` (expected DC or CC)"
            ))),
        }
    }
}

/// One stride-2 convolution of the plain convolutional encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Front convolution, gated dilation block, single-filter stride-2
    /// downsampling, and the mirrored transposed decoder.
    Dilated {
        front_filters: usize,
        front_kernel: usize,
        block: DilationBlockSpec,
        downsample_layers: usize,
    },
    /// Stack of stride-2 convolutions and the mirrored transposed decoder.
    Convolutional { stages: Vec<ConvStage> },
}

impl Architecture {
    pub fn dilated() -> Self {
        Architecture::Dilated {
            front_filters: 16,
            front_kernel: 32,
            block: DilationBlockSpec::default(),
            downsample_layers: 5,
        }
    }

    pub fn convolutional() -> Self {
        let stage = |filters, kernel| ConvStage { filters, kernel };
        Architecture::Convolutional {
            stages: vec![
                stage(128, 5),
                stage(128, 4),
                stage(256, 4),
                stage(512, 4),
                stage(1024, 4),
            ],
        }
    }

    pub fn tag(&self) -> ArchTag {
        match self {
            Architecture::Dilated { .. } => ArchTag::Dc,
            Architecture::Convolutional { .. } => ArchTag::Cc,
        }
    }

    /// Factor by which the encoder shortens the signal.
    pub fn compression(&self) -> usize {
        match self {
            Architecture::Dilated {
                downsample_layers, ..
            } => 1 << downsample_layers,
            Architecture::Convolutional { stages } => 1 << stages.len(),
        }
    }
}

/// Hidden widths and output size of the bottleneck classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
}

impl ClassifierSpec {
    /// Three hidden layers of ten units.
    pub fn digits() -> Self {
        Self {
            hidden_layers: vec![10, 10, 10],
            num_classes: 10,
        }
    }

    /// One hidden layer as wide as the number of clusters.
    pub fn drums(num_classes: usize) -> Self {
        Self {
            hidden_layers: vec![num_classes],
            num_classes,
        }
    }
}

/// Everything needed to rebuild a network deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Architecture,
    pub input_len: usize,
    pub latent_dim: usize,
    pub sample_rate: u32,
    pub seed: u64,
    pub classifier: ClassifierSpec,
    pub hidden_activation: Activation,
}

/// Default nonlinearity after plain and transposed convolutions.
pub const HIDDEN_ACTIVATION: Activation = Activation::LeakyRelu { slope: 0.2 };

impl ModelConfig {
    pub fn new(arch: Architecture, input_len: usize, latent_dim: usize, seed: u64) -> Self {
        Self {
            arch,
            input_len,
            latent_dim,
            sample_rate: DIGIT_SAMPLE_RATE,
            seed,
            classifier: ClassifierSpec::digits(),
            hidden_activation: HIDDEN_ACTIVATION,
        }
    }

    /// Spoken-digit preset: 4096 samples at 8 kHz, 20-dimensional latent space.
    pub fn digits(tag: ArchTag, seed: u64) -> Self {
        let arch = match tag {
            ArchTag::Dc => Architecture::dilated(),
            ArchTag::Cc => Architecture::convolutional(),
        };
        Self::new(arch, DIGIT_LENGTH, 20, seed)
    }

    /// Drum preset: 16384 samples at 22050 Hz, 30-dimensional latent space.
    pub fn drums(tag: ArchTag, seed: u64) -> Self {
        Self {
            input_len: crate::audio::DRUM_LENGTH,
            latent_dim: 30,
            sample_rate: 22050,
            classifier: ClassifierSpec::drums(crate::audio::DRUM_CLASSES),
            ..Self::digits(tag, seed)
        }
    }

    pub fn tag(&self) -> ArchTag {
        self.arch.tag()
    }

    pub fn bottleneck_len(&self) -> usize {
        self.input_len / self.arch.compression()
    }

    fn validate(&self) -> Result<()> {
        let compression = self.arch.compression();
        if self.input_len == 0 || self.input_len % compression != 0 {
            return Err(Error::InvalidArgument(format!(
                "input length {} is not a positive multiple of {compression}",
                self.input_len
            )));
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent_dim must be positive".into()));
        }
        if self.classifier.num_classes == 0 {
            return Err(Error::InvalidArgument("classifier needs at least one class".into()));
        }
        if let Architecture::Dilated { block, .. } = &self.arch {
            if block.m1 == 0 || block.m2 == 0 || block.kernel == 0 || block.num_layers == 0 {
                return Err(Error::InvalidArgument(
                    "dilation block needs positive layers, kernel and cycles".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Layer graph of a VAE; holds parameter handles, not values.
#[derive(Debug, Clone)]
pub(crate) struct Network {
    encoder: Vec<Layer>,
    mu: Dense,
    log_var: Dense,
    decoder_dense: Dense,
    decoder: Vec<Layer>,
    classifier: Vec<(Dense, Activation)>,
    /// `(channels, length)` entering the dense pair.
    pre_dense: (usize, usize),
}

fn build_network(cfg: &ModelConfig, store: &mut ParamStore) -> Result<Network> {
    cfg.validate()?;
    let rng = &mut ChaCha8Rng::seed_from_u64(cfg.seed);
    let act = cfg.hidden_activation;
    let mut encoder = Vec::new();
    let mut decoder = Vec::new();
    let conv = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, group, cin, cout, geom, act| {
        Layer::Conv {
            conv: Conv1d::new(store, rng, name, group, cin, cout, geom),
            act,
        }
    };
    let convt = |store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, group, cin, cout, geom, act| {
        Layer::ConvTranspose {
            conv: ConvTranspose1d::new(store, rng, name, group, cin, cout, geom),
            act,
        }
    };
    let enc = Group::Encoder;
    let dec = Group::Decoder;

    match &cfg.arch {
        Architecture::Dilated {
            front_filters,
            front_kernel,
            block,
            downsample_layers,
        } => {
            let (f, k, c) = (*front_filters, *front_kernel, block.channels);
            encoder.push(conv(store, rng, "encoder.front", enc, 1, f, ConvGeom::same(k, 1), act));
            encoder.push(conv(store, rng, "encoder.adapter", enc, f, c, ConvGeom::same(1, 1), Activation::Identity));
            encoder.push(Layer::Block(DilationBlock::new(store, rng, "encoder.block", enc, block)));
            for j in 1..=*downsample_layers {
                let cin = if j == 1 { c } else { 1 };
                encoder.push(conv(store, rng, &format!("encoder.down{j}"), enc, cin, 1, ConvGeom::same(2, 2), act));
            }
            encoder.push(conv(store, rng, "encoder.bottleneck", enc, 1, 1, ConvGeom::same(1, 1), Activation::Identity));
        }
        Architecture::Convolutional { stages } => {
            let mut cin = 1;
            for (j, stage) in stages.iter().enumerate() {
                let name = format!("encoder.conv{}", j + 1);
                encoder.push(conv(store, rng, &name, enc, cin, stage.filters, ConvGeom::same(stage.kernel, 2), act));
                cin = stage.filters;
            }
            encoder.push(conv(store, rng, "encoder.bottleneck", enc, cin, 1, ConvGeom::same(1, 1), Activation::Identity));
        }
    }

    let bottleneck = cfg.bottleneck_len();
    let mu = Dense::new(store, rng, "encoder.mu", enc, bottleneck, cfg.latent_dim);
    let log_var = Dense::new(store, rng, "encoder.log_var", enc, bottleneck, cfg.latent_dim);
    let decoder_dense = Dense::new(store, rng, "decoder.dense", dec, cfg.latent_dim, bottleneck);

    match &cfg.arch {
        Architecture::Dilated {
            front_filters,
            front_kernel,
            block,
            downsample_layers,
        } => {
            let (f, k, c) = (*front_filters, *front_kernel, block.channels);
            decoder.push(convt(store, rng, "decoder.bottleneck", dec, 1, 1, ConvGeom::same(1, 1), act));
            for j in 1..=*downsample_layers {
                decoder.push(convt(store, rng, &format!("decoder.up{j}"), dec, 1, 1, ConvGeom::same(2, 2), act));
            }
            decoder.push(convt(store, rng, "decoder.adapter", dec, 1, c, ConvGeom::same(1, 1), Activation::Identity));
            decoder.push(Layer::Block(DilationBlock::new(store, rng, "decoder.block", dec, block)));
            decoder.push(convt(store, rng, "decoder.back", dec, c, f, ConvGeom::same(k, 1), act));
            decoder.push(convt(store, rng, "decoder.out", dec, f, 1, ConvGeom::same(1, 1), Activation::Tanh));
        }
        Architecture::Convolutional { stages } => {
            decoder.push(convt(store, rng, "decoder.bottleneck", dec, 1, 1, ConvGeom::same(1, 1), act));
            let mut cin = 1;
            for (j, stage) in stages.iter().enumerate().rev() {
                let name = format!("decoder.deconv{}", j + 1);
                decoder.push(convt(store, rng, &name, dec, cin, stage.filters, ConvGeom::same(stage.kernel, 2), act));
                cin = stage.filters;
            }
            decoder.push(convt(store, rng, "decoder.out", dec, cin, 1, ConvGeom::same(1, 1), Activation::Tanh));
        }
    }

    let mut classifier = Vec::new();
    let mut width = cfg.latent_dim;
    for (j, &h) in cfg.classifier.hidden_layers.iter().enumerate() {
        let name = format!("classifier.hidden{}", j + 1);
        classifier.push((Dense::new(store, rng, &name, Group::Classifier, width, h), act));
        width = h;
    }
    classifier.push((
        Dense::new(store, rng, "classifier.logits", Group::Classifier, width, cfg.classifier.num_classes),
        Activation::Identity,
    ));

    // Propagate shapes once so that mismatches surface at build time.
    let mut shape = (1, cfg.input_len);
    for layer in &encoder {
        if layer.in_channels() != shape.0 {
            return Err(Error::Shape(format!(
                "encoder stage expects {} channels, receives {}",
                layer.in_channels(),
                shape.0
            )));
        }
        shape = layer
            .output_shape(shape.1)
            .ok_or_else(|| Error::Shape("encoder stage output would be empty".into()))?;
    }
    if shape != (1, bottleneck) {
        return Err(Error::Shape(format!(
            "encoder produces {shape:?}, expected (1, {bottleneck})"
        )));
    }
    let pre_dense = shape;
    let mut shape = (1, bottleneck);
    for layer in &decoder {
        shape = layer
            .output_shape(shape.1)
            .ok_or_else(|| Error::Shape("decoder stage output would be empty".into()))?;
    }
    if shape != (1, cfg.input_len) {
        return Err(Error::Shape(format!(
            "decoder produces {shape:?}, expected (1, {})",
            cfg.input_len
        )));
    }

    Ok(Network {
        encoder,
        mu,
        log_var,
        decoder_dense,
        decoder,
        classifier,
        pre_dense,
    })
}

/// Mean, log-variance, noise and the resulting latent sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
}

/// `z = mu + exp(log_var / 2) ⊙ eps`.
pub fn reparameterize(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "reparameterize with mu {}, log_var {}, eps {}",
            mu.len(),
            log_var.len(),
            eps.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (lv / 2.0).exp() * e)
        .collect())
}

/// Which heads to evaluate after the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub decoder: bool,
    pub classifier: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        decoder: true,
        classifier: true,
    };
    pub const DECODER: Heads = Heads {
        decoder: true,
        classifier: false,
    };
    pub const CLASSIFIER: Heads = Heads {
        decoder: false,
        classifier: true,
    };
}

/// Values recorded during a forward pass for one clip.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    encoder_caches: Vec<LayerCache>,
    flat: Array1<f64>,
    pub latent: LatentCode,
    decoder_pre: Option<Array1<f64>>,
    decoder_caches: Vec<LayerCache>,
    classifier_inputs: Vec<Array1<f64>>,
    classifier_pres: Vec<Array1<f64>>,
    pub output: Option<Vec<f64>>,
    pub logits: Option<Vec<f64>>,
}

/// Loss gradients with respect to the network outputs for one clip.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub d_output: Option<Vec<f64>>,
    pub d_logits: Option<Vec<f64>>,
    pub d_mu: Option<Vec<f64>>,
    pub d_log_var: Option<Vec<f64>>,
}

/// Weights of the encoder, decoder and classifier plus the configuration
/// that produced them.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    store: ParamStore,
    net: Network,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.store == other.store
    }
}

/// Dilated-convolution VAE with the digit classifier.
pub fn build_dcvae(input_len: usize, latent_dim: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::new(ModelConfig::new(Architecture::dilated(), input_len, latent_dim, seed))
}

/// Plain-convolution VAE with the digit classifier.
pub fn build_ccvae(input_len: usize, latent_dim: usize, seed: u64) -> Result<ModelParams> {
    ModelParams::new(ModelConfig::new(Architecture::convolutional(), input_len, latent_dim, seed))
}

impl ModelParams {
    /// Builds and initializes a network; the seed fully determines the weights.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = build_network(&config, &mut store)?;
        Ok(Self { config, store, net })
    }

    /// Attaches existing weights to a configuration, checking every name and shape.
    pub fn from_parts(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let mut reference = ParamStore::new();
        let net = build_network(&config, &mut reference)?;
        if reference.len() != store.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                reference.len(),
                store.len()
            )));
        }
        for (want, have) in reference.entries().iter().zip(store.entries()) {
            if want.name != have.name || want.tensor.shape() != have.tensor.shape() {
                return Err(Error::Shape(format!(
                    "expected {} {:?}, found {} {:?}",
                    want.name,
                    want.tensor.shape(),
                    have.name,
                    have.tensor.shape()
                )));
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { config, store, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tag(&self) -> ArchTag {
        self.config.tag()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len
    }

    pub fn num_classes(&self) -> usize {
        self.config.classifier.num_classes
    }

    /// `(channels, length)` of the tensor entering the mean/log-variance layers.
    pub fn pre_dense_shape(&self) -> (usize, usize) {
        self.net.pre_dense
    }

    pub fn receptive_field(&self) -> Option<usize> {
        match &self.config.arch {
            Architecture::Dilated { block, .. } => Some(block.receptive_field()),
            Architecture::Convolutional { .. } => None,
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_len {
            return Err(Error::Shape(format!(
                "clip has {} samples, model expects {}",
                x.len(),
                self.config.input_len
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input".into()));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent vector has {} entries, model expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector".into()));
        }
        Ok(())
    }

    fn run_encoder(
        &self,
        x: &[f64],
        mut caches: Option<&mut Vec<LayerCache>>,
    ) -> (Array1<f64>, Array1<f64>, Array1<f64>) {
        let mut h = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
        for layer in &self.net.encoder {
            h = layer.forward(&self.store, h, caches.as_deref_mut());
        }
        let flat = Array1::from_iter(h.iter().copied());
        let mu = self.net.mu.forward(&self.store, flat.view());
        let log_var = self.net.log_var.forward(&self.store, flat.view());
        (flat, mu, log_var)
    }

    fn run_decoder(
        &self,
        z: &[f64],
        mut caches: Option<&mut Vec<LayerCache>>,
    ) -> (Array1<f64>, Vec<f64>) {
        let pre = self
            .net
            .decoder_dense
            .forward(&self.store, ndarray::ArrayView1::from(z));
        let act = self.config.hidden_activation.map(&pre);
        let mut h = act.into_shape_with_order((1, self.config.bottleneck_len())).expect("row vector");
        for layer in &self.net.decoder {
            h = layer.forward(&self.store, h, caches.as_deref_mut());
        }
        (pre, h.into_iter().collect())
    }

    fn run_classifier(&self, z: &[f64]) -> (Vec<Array1<f64>>, Vec<Array1<f64>>, Vec<f64>) {
        let mut inputs = Vec::new();
        let mut pres = Vec::new();
        let mut h = Array1::from(z.to_vec());
        for (dense, act) in &self.net.classifier {
            let pre = dense.forward(&self.store, h.view());
            let next = act.map(&pre);
            inputs.push(h);
            pres.push(pre);
            h = next;
        }
        (inputs, pres, h.to_vec())
    }

    /// Posterior mean and log-variance for each clip of the batch.
    pub fn encode(&self, batch: &[&[f64]]) -> Result<(Array2<f64>, Array2<f64>)> {
        let d = self.config.latent_dim;
        let mut mu = Array2::zeros((batch.len(), d));
        let mut log_var = Array2::zeros((batch.len(), d));
        for (i, x) in batch.iter().enumerate() {
            self.check_input(x)?;
            let (_, m, lv) = self.run_encoder(x, None);
            if m.iter().chain(lv.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("encoder output".into()));
            }
            mu.row_mut(i).assign(&m);
            log_var.row_mut(i).assign(&lv);
        }
        Ok((mu, log_var))
    }

    /// Encodes one clip with zero noise, so `z == mu`.
    pub fn encode_clip(&self, clip: &AudioClip) -> Result<LatentCode> {
        self.encode_with_noise(clip.samples(), None)
    }

    /// Encodes one clip and draws `z` with the given noise (zero when `None`).
    pub fn encode_with_noise(&self, x: &[f64], eps: Option<&[f64]>) -> Result<LatentCode> {
        self.check_input(x)?;
        let (_, mu, log_var) = self.run_encoder(x, None);
        let zeros = vec![0.0; self.config.latent_dim];
        let eps = eps.unwrap_or(&zeros).to_vec();
        let z = reparameterize(mu.as_slice().unwrap(), log_var.as_slice().unwrap(), &eps)?;
        Ok(LatentCode {
            mu: mu.to_vec(),
            log_var: log_var.to_vec(),
            eps,
            z,
        })
    }

    /// Decodes one latent vector into a waveform bounded to `[-1, 1]`.
    pub fn decode_one(&self, z: &[f64]) -> Result<AudioClip> {
        self.check_latent(z)?;
        let (_, y) = self.run_decoder(z, None);
        AudioClip::new(y, self.config.sample_rate)
    }

    pub fn decode(&self, zs: &[Vec<f64>]) -> Result<Vec<AudioClip>> {
        zs.iter().map(|z| self.decode_one(z)).collect()
    }

    /// Class logits for each latent vector.
    pub fn classify_latent(&self, zs: &[Vec<f64>]) -> Result<Array2<f64>> {
        let k = self.config.classifier.num_classes;
        let mut out = Array2::zeros((zs.len(), k));
        for (i, z) in zs.iter().enumerate() {
            self.check_latent(z)?;
            let (_, _, logits) = self.run_classifier(z);
            out.row_mut(i).assign(&Array1::from(logits));
        }
        Ok(out)
    }

    /// Forward pass that keeps everything the backward pass needs.
    pub fn forward_trace(&self, x: &[f64], eps: &[f64], heads: Heads) -> Result<SampleTrace> {
        self.check_input(x)?;
        if eps.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "noise has {} entries, expected {}",
                eps.len(),
                self.config.latent_dim
            )));
        }
        let mut encoder_caches = Vec::with_capacity(self.net.encoder.len());
        let (flat, mu, log_var) = self.run_encoder(x, Some(&mut encoder_caches));
        let z = reparameterize(mu.as_slice().unwrap(), log_var.as_slice().unwrap(), eps)?;
        let mut trace = SampleTrace {
            encoder_caches,
            flat,
            latent: LatentCode {
                mu: mu.to_vec(),
                log_var: log_var.to_vec(),
                eps: eps.to_vec(),
                z,
            },
            decoder_pre: None,
            decoder_caches: Vec::new(),
            classifier_inputs: Vec::new(),
            classifier_pres: Vec::new(),
            output: None,
            logits: None,
        };
        if heads.decoder {
            let mut caches = Vec::with_capacity(self.net.decoder.len());
            let (pre, y) = self.run_decoder(&trace.latent.z, Some(&mut caches));
            trace.decoder_pre = Some(pre);
            trace.decoder_caches = caches;
            trace.output = Some(y);
        }
        if heads.classifier {
            let (inputs, pres, logits) = self.run_classifier(&trace.latent.z);
            trace.classifier_inputs = inputs;
            trace.classifier_pres = pres;
            trace.logits = Some(logits);
        }
        Ok(trace)
    }

    /// Reverse-mode pass. Gradients of every parameter on the path of the
    /// supplied output gradients are added to `grads`; parameters off the
    /// path are left untouched.
    pub fn backward(&self, trace: &SampleTrace, seeds: &OutputGrads, grads: &mut Gradients) -> Result<()> {
        let all_seeds = seeds
            .d_output
            .iter()
            .chain(&seeds.d_logits)
            .chain(&seeds.d_mu)
            .chain(&seeds.d_log_var);
        for s in all_seeds {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("loss gradient".into()));
            }
        }
        let store = &self.store;
        let latent = &trace.latent;
        let d = self.config.latent_dim;
        let mut dz = Array1::<f64>::zeros(d);

        if let Some(d_out) = &seeds.d_output {
            let pre = trace
                .decoder_pre
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("decoder was not run in this trace".into()))?;
            let mut g = Array2::from_shape_vec((1, d_out.len()), d_out.clone())
                .map_err(|e| Error::Shape(e.to_string()))?;
            for (layer, cache) in self.net.decoder.iter().zip(&trace.decoder_caches).rev() {
                g = layer
                    .backward(store, cache, g, grads, true)
                    .expect("dx requested");
            }
            let g = Array1::from_iter(g.iter().copied());
            let d_pre = self.config.hidden_activation.backprop(pre, g);
            dz += &self
                .net
                .decoder_dense
                .backward(store, ndarray::ArrayView1::from(&latent.z), d_pre.view(), grads);
        }

        if let Some(d_logits) = &seeds.d_logits {
            if trace.classifier_pres.is_empty() {
                return Err(Error::InvalidArgument("classifier was not run in this trace".into()));
            }
            let mut g = Array1::from(d_logits.clone());
            for (i, (dense, act)) in self.net.classifier.iter().enumerate().rev() {
                let d_pre = act.backprop(&trace.classifier_pres[i], g);
                g = dense.backward(store, trace.classifier_inputs[i].view(), d_pre.view(), grads);
            }
            dz += &g;
        }

        let mut d_mu = dz.clone();
        if let Some(extra) = &seeds.d_mu {
            d_mu += &Array1::from(extra.clone());
        }
        let mut d_log_var = Array1::from_iter(
            (0..d).map(|i| dz[i] * latent.eps[i] * 0.5 * (latent.log_var[i] / 2.0).exp()),
        );
        if let Some(extra) = &seeds.d_log_var {
            d_log_var += &Array1::from(extra.clone());
        }

        let mut d_flat = self.net.mu.backward(store, trace.flat.view(), d_mu.view(), grads);
        d_flat += &self
            .net
            .log_var
            .backward(store, trace.flat.view(), d_log_var.view(), grads);

        let mut g = d_flat
            .into_shape_with_order(self.net.pre_dense)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let n = self.net.encoder.len();
        for (i, (layer, cache)) in self.net.encoder.iter().zip(&trace.encoder_caches).enumerate().rev() {
            match layer.backward(store, cache, g, grads, i > 0) {
                Some(next) => g = next,
                None => {
                    debug_assert_eq!(i, 0);
                    break;
                }
            }
            let _ = n;
        }
        Ok(())
    }

    /// Parameter group of every stored tensor, in storage order.
    pub fn groups(&self) -> Vec<Group> {
        self.store.entries().iter().map(|e| e.group).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_tags_parse() {
        assert_eq!("dc".parse::<ArchTag>().unwrap(), ArchTag::Dc);
        assert_eq!("CC-VAE".parse::<ArchTag>().unwrap(), ArchTag::Cc);
        assert!("xx".parse::<ArchTag>().is_err());
    }

    #[test]
    fn rejects_indivisible_input() {
        assert!(build_ccvae(4100, 20, 0).is_err());
        assert!(build_dcvae(100, 20, 0).is_err());
    }

    #[test]
    fn reparameterization_cases() {
        let mu = [0.5, -1.0];
        assert_eq!(reparameterize(&mu, &[0.3, 2.0], &[0.0, 0.0]).unwrap(), mu.to_vec());
        assert_eq!(
            reparameterize(&mu, &[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            vec![1.5, 0.0]
        );
        assert!(reparameterize(&mu, &[0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ccvae_shapes_at_digit_length() {
        let model = build_ccvae(4096, 20, 1).unwrap();
        assert_eq!(model.pre_dense_shape(), (1, 128));
    }
}
