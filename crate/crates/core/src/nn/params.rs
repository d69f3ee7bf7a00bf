use ndarray::{ArrayView1, ArrayView2, ArrayView3, ArrayViewMut1, ArrayViewMut2, ArrayViewMut3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which sub-network a parameter belongs to. Each gradient route updates a
/// fixed set of groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Decoder,
    Classifier,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::Decoder => "decoder",
            Group::Classifier => "classifier",
        }
    }
}

/// Dense row-major tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    /// Returns `None` when the data length does not match the shape.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Option<Self> {
        (shape.iter().product::<usize>() == data.len()).then(|| Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub group: Group,
    pub tensor: Tensor,
}

/// How a fresh parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    /// Uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, variance `2/fan_in`.
    HeUniform(usize),
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: impl Into<String>,
        group: Group,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let mut tensor = Tensor::zeros(shape);
        if let Init::HeUniform(fan_in) = init {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            for v in tensor.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Appends an existing tensor, e.g. one read from a checkpoint.
    pub fn push(&mut self, name: impl Into<String>, group: Group, tensor: Tensor) -> ParamId {
        self.entries.push(ParamEntry {
            name: name.into(),
            group,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.tensor.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn view1(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.tensor(id).data())
    }

    pub(crate) fn view2(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let t = self.tensor(id);
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("rank-2 parameter")
    }

    pub(crate) fn view3(&self, id: ParamId) -> ArrayView3<'_, f64> {
        let t = self.tensor(id);
        ArrayView3::from_shape((t.shape[0], t.shape[1], t.shape[2]), &t.data)
            .expect("rank-3 parameter")
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            shapes: store.entries.iter().map(|e| e.tensor.shape.clone()).collect(),
            data: store
                .entries
                .iter()
                .map(|e| vec![0.0; e.tensor.len()])
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn by_index(&self, index: usize) -> &[f64] {
        &self.data[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.iter().map(Vec::as_slice)
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.data {
            for v in g {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn pair_mut(&mut self, a: ParamId, b: ParamId) -> (&mut [f64], &mut [f64]) {
        assert_ne!(a, b, "weight and bias must be distinct parameters");
        if a.0 < b.0 {
            let (lo, hi) = self.data.split_at_mut(b.0);
            (&mut lo[a.0], &mut hi[0])
        } else {
            let (lo, hi) = self.data.split_at_mut(a.0);
            (&mut hi[0], &mut lo[b.0])
        }
    }

    /// Mutable views of a rank-3 weight gradient and its bias gradient.
    pub(crate) fn conv_pair_mut(
        &mut self,
        weight: ParamId,
        bias: ParamId,
    ) -> (ArrayViewMut3<'_, f64>, ArrayViewMut1<'_, f64>) {
        let s = self.shapes[weight.0].clone();
        let (w, b) = self.pair_mut(weight, bias);
        (
            ArrayViewMut3::from_shape((s[0], s[1], s[2]), w).expect("rank-3 gradient"),
            ArrayViewMut1::from(b),
        )
    }

    /// Mutable views of a rank-2 weight gradient and its bias gradient.
    pub(crate) fn dense_pair_mut(
        &mut self,
        weight: ParamId,
        bias: ParamId,
    ) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let s = self.shapes[weight.0].clone();
        let (w, b) = self.pair_mut(weight, bias);
        (
            ArrayViewMut2::from_shape((s[0], s[1]), w).expect("rank-2 gradient"),
            ArrayViewMut1::from(b),
        )
    }
}
