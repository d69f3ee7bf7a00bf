//! Forward and reverse-mode kernels for 1-D convolution, transposed
//! convolution, dense layers and pointwise activations.
//!
//! Activations are `channels × time` matrices. Convolutions are evaluated as
//! one matrix product per kernel tap over a strided view of the input;
//! zero padding is never materialized, each tap just skips the output
//! positions that would read it.

use ndarray::linalg::general_mat_mul;
use ndarray::{
    s, Array1, Array2, ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3, Axis,
    Slice, Zip,
};
use serde::{Deserialize, Serialize};

/// Geometry shared by convolutions and their transposes. For a transposed
/// convolution the padding amounts are cropped from the full output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    /// Zero padding that makes a stride-`s` layer map length `L` to `L / s`
    /// whenever `s` divides `L`. Extra padding goes to the right.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let total = kernel.saturating_sub(stride);
        Self {
            kernel,
            stride,
            dilation: 1,
            pad_left: total / 2,
            pad_right: total - total / 2,
        }
    }

    /// Left-only padding so that output `t` sees inputs `t - d*(k-1) ..= t`.
    pub fn causal(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            dilation,
            pad_left: dilation * (kernel - 1),
            pad_right: 0,
        }
    }

    fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Output length of the forward convolution, `None` if the input is too short.
    pub fn conv_output_len(&self, len: usize) -> Option<usize> {
        let padded = len + self.pad_left + self.pad_right;
        (padded >= self.span()).then(|| (padded - self.span()) / self.stride + 1)
    }

    /// Output length of the transposed convolution.
    pub fn transpose_output_len(&self, len: usize) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let full = (len - 1) * self.stride + self.span();
        full.checked_sub(self.pad_left + self.pad_right).filter(|&l| l > 0)
    }
}

/// Output positions `t0..t1` whose tap lands inside the input, i.e.
/// `0 <= stride*t + offset < len`, clipped to `0..lout`.
fn tap_range(offset: isize, stride: usize, len: usize, lout: usize) -> (usize, usize) {
    let s = stride as isize;
    let t0 = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = len as isize - 1 - offset;
    let t1 = if last < 0 { 0 } else { last / s + 1 };
    let t1 = (t1 as usize).min(lout);
    let t0 = (t0 as usize).min(t1);
    (t0, t1)
}

/// Input columns read by tap `kk` for outputs `t0..t1`.
fn tap_columns(t0: usize, t1: usize, offset: isize, stride: usize) -> Slice {
    let first = (stride * t0) as isize + offset;
    let last = (stride * (t1 - 1)) as isize + offset;
    Slice::new(first, Some(last + 1), stride as isize)
}

fn tap_offset(g: &ConvGeom, kk: usize) -> isize {
    (kk * g.dilation) as isize - g.pad_left as isize
}

/// `y[o, t] = b[o] + Σ_{i,k} w[o, i, k] · x[i, t·s + k·d − pad_left]`, with
/// out-of-range input positions reading zero.
pub fn conv1d_forward(
    x: ArrayView2<f64>,
    w: ArrayView3<f64>,
    b: ArrayView1<f64>,
    g: &ConvGeom,
) -> Array2<f64> {
    let (_, len) = x.dim();
    let (co, _, k) = w.dim();
    let lout = g.conv_output_len(len).expect("input shorter than the kernel span");
    let mut y = Array2::zeros((co, lout));
    for (mut row, &bias) in y.rows_mut().into_iter().zip(b.iter()) {
        row.fill(bias);
    }
    for kk in 0..k {
        let off = tap_offset(g, kk);
        let (t0, t1) = tap_range(off, g.stride, len, lout);
        if t0 == t1 {
            continue;
        }
        let xk = x.slice_axis(Axis(1), tap_columns(t0, t1, off, g.stride));
        let mut yk = y.slice_mut(s![.., t0..t1]);
        general_mat_mul(1.0, &w.index_axis(Axis(2), kk), &xk, 1.0, &mut yk);
    }
    y
}

/// Accumulates weight and bias gradients, and the input gradient into `dx`
/// when given.
#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward(
    x: ArrayView2<f64>,
    w: ArrayView3<f64>,
    dy: ArrayView2<f64>,
    g: &ConvGeom,
    mut dw: ArrayViewMut3<f64>,
    mut db: ArrayViewMut1<f64>,
    mut dx: Option<ArrayViewMut2<f64>>,
) {
    let (_, len) = x.dim();
    let (_, _, k) = w.dim();
    let lout = dy.ncols();
    db += &dy.sum_axis(Axis(1));
    for kk in 0..k {
        let off = tap_offset(g, kk);
        let (t0, t1) = tap_range(off, g.stride, len, lout);
        if t0 == t1 {
            continue;
        }
        let cols = tap_columns(t0, t1, off, g.stride);
        let dyk = dy.slice(s![.., t0..t1]);
        let mut dwk = dw.index_axis_mut(Axis(2), kk);
        general_mat_mul(1.0, &dyk, &x.slice_axis(Axis(1), cols).t(), 1.0, &mut dwk);
        if let Some(dx) = dx.as_mut() {
            let mut dxk = dx.slice_axis_mut(Axis(1), cols);
            general_mat_mul(1.0, &w.index_axis(Axis(2), kk).t(), &dyk, 1.0, &mut dxk);
        }
    }
}

/// Transposed convolution; `w` has shape `[in, out, kernel]`. This is the
/// adjoint of [`conv1d_forward`] with the same geometry, plus a bias.
pub fn conv_transpose1d_forward(
    x: ArrayView2<f64>,
    w: ArrayView3<f64>,
    b: ArrayView1<f64>,
    g: &ConvGeom,
) -> Array2<f64> {
    let (_, len) = x.dim();
    let (_, co, k) = w.dim();
    let lout = g.transpose_output_len(len).expect("transposed output would be empty");
    let mut y = Array2::zeros((co, lout));
    for (mut row, &bias) in y.rows_mut().into_iter().zip(b.iter()) {
        row.fill(bias);
    }
    for kk in 0..k {
        // input t feeds output stride*t + offset
        let off = tap_offset(g, kk);
        let (t0, t1) = tap_range(off, g.stride, lout, len);
        if t0 == t1 {
            continue;
        }
        let mut yk = y.slice_axis_mut(Axis(1), tap_columns(t0, t1, off, g.stride));
        let xk = x.slice(s![.., t0..t1]);
        general_mat_mul(1.0, &w.index_axis(Axis(2), kk).t(), &xk, 1.0, &mut yk);
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose1d_backward(
    x: ArrayView2<f64>,
    w: ArrayView3<f64>,
    dy: ArrayView2<f64>,
    g: &ConvGeom,
    mut dw: ArrayViewMut3<f64>,
    mut db: ArrayViewMut1<f64>,
    mut dx: Option<ArrayViewMut2<f64>>,
) {
    let (_, len) = x.dim();
    let (_, _, k) = w.dim();
    let lout = dy.ncols();
    db += &dy.sum_axis(Axis(1));
    for kk in 0..k {
        let off = tap_offset(g, kk);
        let (t0, t1) = tap_range(off, g.stride, lout, len);
        if t0 == t1 {
            continue;
        }
        let dyk = dy.slice_axis(Axis(1), tap_columns(t0, t1, off, g.stride));
        let xk = x.slice(s![.., t0..t1]);
        let mut dwk = dw.index_axis_mut(Axis(2), kk);
        general_mat_mul(1.0, &xk, &dyk.t(), 1.0, &mut dwk);
        if let Some(dx) = dx.as_mut() {
            let mut dxk = dx.slice_mut(s![.., t0..t1]);
            general_mat_mul(1.0, &w.index_axis(Axis(2), kk), &dyk, 1.0, &mut dxk);
        }
    }
}

/// `y = W x + b` with `W` of shape `[out, in]`.
pub fn dense_forward(x: ArrayView1<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    w.dot(&x) + b
}

pub fn dense_backward(
    x: ArrayView1<f64>,
    w: ArrayView2<f64>,
    dy: ArrayView1<f64>,
    mut dw: ndarray::ArrayViewMut2<f64>,
    mut db: ArrayViewMut1<f64>,
) -> Array1<f64> {
    Zip::from(dw.rows_mut())
        .and(&dy)
        .for_each(|mut row, &d| row.scaled_add(d, &x));
    db += &dy;
    w.t().dot(&dy)
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `tanh` through one exponential. Absolute error stays within a few ulps of
/// `f64::tanh` at roughly a third of the cost.
pub fn tanh_exp(v: f64) -> f64 {
    let e = (-2.0 * v.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(v)
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    v
                } else {
                    slope * v
                }
            }
            Activation::Tanh => v.tanh(),
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative at pre-activation `v`.
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if v > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
        }
    }

    pub fn map<D: ndarray::Dimension>(self, pre: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
        if self == Activation::Identity {
            return pre.clone();
        }
        pre.mapv(|v| self.apply(v))
    }

    /// `dy ⊙ f'(pre)`.
    pub fn backprop<D: ndarray::Dimension>(
        self,
        pre: &ndarray::Array<f64, D>,
        dy: ndarray::Array<f64, D>,
    ) -> ndarray::Array<f64, D> {
        if self == Activation::Identity {
            return dy;
        }
        let mut out = dy;
        Zip::from(&mut out)
            .and(pre)
            .for_each(|d, &v| *d *= self.derivative(v));
        out
    }
}
