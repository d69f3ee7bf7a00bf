use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, ConvGeom};
use super::params::{Gradients, Group, Init, ParamId, ParamStore};

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: Group,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            &[out_channels, in_channels, geom.kernel],
            Init::HeUniform(in_channels * geom.kernel),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), group, &[out_channels], Init::Zeros, rng);
        Self {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Array2<f64> {
        ops::conv1d_forward(x, store.view3(self.weight), store.view1(self.bias), &self.geom)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut dx = need_dx.then(|| Array2::zeros(x.raw_dim()));
        self.backward_into(store, x, dy, grads, dx.as_mut().map(|d| d.view_mut()));
        dx
    }

    /// Like [`Conv1d::backward`] but adds the input gradient into `dx`.
    pub fn backward_into(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grads: &mut Gradients,
        dx: Option<ArrayViewMut2<f64>>,
    ) {
        let (dw, db) = grads.conv_pair_mut(self.weight, self.bias);
        ops::conv1d_backward(x, store.view3(self.weight), dy, &self.geom, dw, db, dx)
    }

    pub fn num_params(&self) -> usize {
        self.out_channels * self.in_channels * self.geom.kernel + self.out_channels
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: Group,
        in_channels: usize,
        out_channels: usize,
        geom: ConvGeom,
    ) -> Self {
        // Each output sample receives about kernel/stride taps per input channel.
        let taps = geom.kernel.div_ceil(geom.stride);
        let weight = store.add(
            format!("{name}.weight"),
            group,
            &[in_channels, out_channels, geom.kernel],
            Init::HeUniform(in_channels * taps),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), group, &[out_channels], Init::Zeros, rng);
        Self {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Array2<f64> {
        ops::conv_transpose1d_forward(x, store.view3(self.weight), store.view1(self.bias), &self.geom)
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut dx = need_dx.then(|| Array2::zeros(x.raw_dim()));
        let (dw, db) = grads.conv_pair_mut(self.weight, self.bias);
        ops::conv_transpose1d_backward(
            x,
            store.view3(self.weight),
            dy,
            &self.geom,
            dw,
            db,
            dx.as_mut().map(|d| d.view_mut()),
        );
        dx
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: Group,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            &[outputs, inputs],
            Init::HeUniform(inputs),
            rng,
        );
        let bias = store.add(format!("{name}.bias"), group, &[outputs], Init::Zeros, rng);
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView1<f64>) -> Array1<f64> {
        ops::dense_forward(x, store.view2(self.weight), store.view1(self.bias))
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        x: ArrayView1<f64>,
        dy: ArrayView1<f64>,
        grads: &mut Gradients,
    ) -> Array1<f64> {
        let (dw, db) = grads.dense_pair_mut(self.weight, self.bias);
        ops::dense_backward(x, store.view2(self.weight), dy, dw, db)
    }
}

/// Size and dilation schedule of a gated residual block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DilationBlockSpec {
    pub num_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Dilation cycle of the first sub-layer.
    pub m1: u32,
    /// Dilation cycle of the second sub-layer.
    pub m2: u32,
}

impl Default for DilationBlockSpec {
    fn default() -> Self {
        Self {
            num_layers: 50,
            channels: 32,
            kernel: 2,
            m1: 10,
            m2: 5,
        }
    }
}

impl DilationBlockSpec {
    /// Dilation of sub-layer `sub` (1 or 2) in 1-based layer `i`: `2^((i-1) mod m)`.
    pub fn dilation(&self, layer: usize, sub: u8) -> usize {
        let m = if sub == 1 { self.m1 } else { self.m2 } as usize;
        1 << ((layer - 1) % m)
    }

    /// Number of input samples (current one included) that can reach one output.
    pub fn receptive_field(&self) -> usize {
        1 + (1..=self.num_layers)
            .map(|i| self.dilation(i, 1).max(self.dilation(i, 2)) * (self.kernel - 1))
            .sum::<usize>()
    }
}

/// Residual stack of gated dilated causal convolutions. Every layer adds
/// `tanh(sub1) ⊙ σ(sub2)` to its input; the block emits the mean of those
/// products over all layers.
#[derive(Debug, Clone)]
pub struct DilationBlock {
    pub spec: DilationBlockSpec,
    pub layers: Vec<(Conv1d, Conv1d)>,
}

/// Per-layer values kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct BlockCache {
    inputs: Vec<Array2<f64>>,
    gate_tanh: Vec<Array2<f64>>,
    gate_sigmoid: Vec<Array2<f64>>,
}

impl DilationBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        group: Group,
        spec: &DilationBlockSpec,
    ) -> Self {
        let c = spec.channels;
        let layers = (1..=spec.num_layers)
            .map(|i| {
                let sub1 = Conv1d::new(
                    store,
                    rng,
                    &format!("{name}.{i}.sub1"),
                    group,
                    c,
                    c,
                    ConvGeom::causal(spec.kernel, spec.dilation(i, 1)),
                );
                let sub2 = Conv1d::new(
                    store,
                    rng,
                    &format!("{name}.{i}.sub2"),
                    group,
                    c,
                    c,
                    ConvGeom::causal(spec.kernel, spec.dilation(i, 2)),
                );
                (sub1, sub2)
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: ArrayView2<f64>,
        mut cache: Option<&mut BlockCache>,
    ) -> Array2<f64> {
        let n = self.layers.len();
        let inv_n = 1.0 / n as f64;
        let mut out = Array2::zeros(x.raw_dim());
        let mut current = x.to_owned();
        for (sub1, sub2) in &self.layers {
            let mut t = sub1.forward(store, current.view());
            let mut g = sub2.forward(store, current.view());
            let mut next = current.clone();
            Zip::from(&mut t)
                .and(&mut g)
                .and(&mut out)
                .and(&mut next)
                .for_each(|t, g, o, nx| {
                    *t = ops::tanh_exp(*t);
                    *g = ops::sigmoid(*g);
                    let skip = *t * *g;
                    *o += inv_n * skip;
                    *nx += skip;
                });
            if let Some(cache) = cache.as_deref_mut() {
                cache.gate_tanh.push(t);
                cache.gate_sigmoid.push(g);
                cache.inputs.push(current);
            }
            current = next;
        }
        out
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &BlockCache,
        dy: ArrayView2<f64>,
        grads: &mut Gradients,
    ) -> Array2<f64> {
        let n = self.layers.len();
        let inv_n = 1.0 / n as f64;
        let mut d_current = Array2::<f64>::zeros(dy.raw_dim());
        let mut d_pre1 = Array2::<f64>::zeros(dy.raw_dim());
        let mut d_pre2 = Array2::<f64>::zeros(dy.raw_dim());
        for i in (0..n).rev() {
            let (sub1, sub2) = &self.layers[i];
            Zip::from(&mut d_pre1)
                .and(&mut d_pre2)
                .and(&d_current)
                .and(&dy)
                .and(&cache.gate_tanh[i])
                .and(&cache.gate_sigmoid[i])
                .for_each(|p1, p2, &dc, &d, &t, &g| {
                    let d_skip = dc + inv_n * d;
                    *p1 = d_skip * g * (1.0 - t * t);
                    *p2 = d_skip * t * g * (1.0 - g);
                });
            // the residual path carries d_current through unchanged
            let input = cache.inputs[i].view();
            sub1.backward_into(store, input, d_pre1.view(), grads, Some(d_current.view_mut()));
            sub2.backward_into(store, input, d_pre2.view(), grads, Some(d_current.view_mut()));
        }
        d_current
    }
}

/// A stage of the encoder or decoder convolution stacks.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv { conv: Conv1d, act: Activation },
    ConvTranspose { conv: ConvTranspose1d, act: Activation },
    Block(DilationBlock),
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Conv { input: Array2<f64>, pre: Array2<f64> },
    Block(BlockCache),
}

impl Layer {
    pub fn forward(
        &self,
        store: &ParamStore,
        x: Array2<f64>,
        caches: Option<&mut Vec<LayerCache>>,
    ) -> Array2<f64> {
        match self {
            Layer::Conv { conv, act } => {
                let pre = conv.forward(store, x.view());
                Self::finish(*act, x, pre, caches)
            }
            Layer::ConvTranspose { conv, act } => {
                let pre = conv.forward(store, x.view());
                Self::finish(*act, x, pre, caches)
            }
            Layer::Block(block) => match caches {
                Some(caches) => {
                    let mut cache = BlockCache::default();
                    let y = block.forward(store, x.view(), Some(&mut cache));
                    caches.push(LayerCache::Block(cache));
                    y
                }
                None => block.forward(store, x.view(), None),
            },
        }
    }

    fn finish(
        act: Activation,
        input: Array2<f64>,
        pre: Array2<f64>,
        caches: Option<&mut Vec<LayerCache>>,
    ) -> Array2<f64> {
        let y = act.map(&pre);
        if let Some(caches) = caches {
            caches.push(LayerCache::Conv { input, pre });
        }
        y
    }

    pub fn backward(
        &self,
        store: &ParamStore,
        cache: &LayerCache,
        dy: Array2<f64>,
        grads: &mut Gradients,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        match (self, cache) {
            (Layer::Conv { conv, act }, LayerCache::Conv { input, pre }) => {
                let d_pre = act.backprop(pre, dy);
                conv.backward(store, input.view(), d_pre.view(), grads, need_dx)
            }
            (Layer::ConvTranspose { conv, act }, LayerCache::Conv { input, pre }) => {
                let d_pre = act.backprop(pre, dy);
                conv.backward(store, input.view(), d_pre.view(), grads, need_dx)
            }
            (Layer::Block(block), LayerCache::Block(cache)) => {
                Some(block.backward(store, cache, dy.view(), grads))
            }
            _ => unreachable!("layer and cache kinds always match"),
        }
    }

    /// Output `(channels, length)` for an input of the given length.
    pub fn output_shape(&self, len: usize) -> Option<(usize, usize)> {
        match self {
            Layer::Conv { conv, .. } => conv
                .geom
                .conv_output_len(len)
                .map(|l| (conv.out_channels, l)),
            Layer::ConvTranspose { conv, .. } => conv
                .geom
                .transpose_output_len(len)
                .map(|l| (conv.out_channels, l)),
            Layer::Block(block) => Some((block.spec.channels, len)),
        }
    }

    pub fn in_channels(&self) -> usize {
        match self {
            Layer::Conv { conv, .. } => conv.in_channels,
            Layer::ConvTranspose { conv, .. } => conv.in_channels,
            Layer::Block(block) => block.spec.channels,
        }
    }
}
