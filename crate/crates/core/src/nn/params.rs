use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Trainable,
    /// Non-trainable state saved with the model (batch-norm running stats).
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).expect("rank-2 tensor")
    }

    pub fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data).expect("rank-2 tensor")
    }

    pub fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    pub fn view1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[..])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Named, ordered parameter blobs. Gradients and optimizer moments use the
/// same structure.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    pub init_seed: u64,
}

impl ParamSet {
    pub fn new(init_seed: u64) -> Self {
        Self { params: Vec::new(), init_seed }
    }

    pub fn from_params(params: Vec<Param>, init_seed: u64) -> Self {
        Self { params, init_seed }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> usize {
        self.params.push(Param { name: name.into(), kind, tensor: Tensor::zeros(shape) });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor {
        &self.params[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), kind: p.kind, tensor: Tensor::zeros(&p.tensor.shape) })
                .collect(),
            init_seed: self.init_seed,
        }
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.shape.clone())).collect()
    }

    pub fn n_trainable(&self) -> usize {
        self.params.iter().filter(|p| p.kind == ParamKind::Trainable).map(|p| p.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.data.iter().all(|v| v.is_finite()))
    }

    pub fn fill(&mut self, value: f64) {
        for p in &mut self.params {
            p.tensor.data.iter_mut().for_each(|v| *v = value);
        }
    }

    /// Elementwise `self += other`; structures must match.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_same_structure(other)?;
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            for (x, y) in a.tensor.data.iter_mut().zip(&b.tensor.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn check_same_structure(&self, other: &ParamSet) -> Result<()> {
        if self.params.len() != other.params.len()
            || self
                .params
                .iter()
                .zip(&other.params)
                .any(|(a, b)| a.name != b.name || a.tensor.shape != b.tensor.shape)
        {
            return Err(Error::arg("parameter sets have different structure"));
        }
        Ok(())
    }
}
