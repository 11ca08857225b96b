//! Minimal dense-tensor engine with reverse-mode differentiation.

mod graph;
mod kernels;
mod optim;

pub use graph::{BnStats, Graph, KpConvPlan, NodeId, BN_DECAY, BN_EPSILON, LOG_CLAMP};
pub use kernels::{matmul, matmul_nt, matmul_tn, softmax_rows_inplace};
pub use optim::{MomentumSgd, ParamEntry, ParamId, ParamStore};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Real>,
}

impl Tensor {
    /// Build from shape and flat row-major data.
    pub fn from_vec(shape: Vec<usize>, data: Vec<Real>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "from_vec",
                detail: alloc::format!("shape {shape:?} wants {numel} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(v: Real) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    /// 2-D constructor.
    pub fn matrix(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a 2-D tensor (rank-1 tensors count as a single column).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn at(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols() + c]
    }
}
