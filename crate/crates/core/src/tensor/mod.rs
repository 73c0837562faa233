//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major value. All arithmetic goes through a
//! [`Tape`](tape::Tape), which records the computation for the backward pass
//! and keeps an exact multiply-add count of every matrix product it executes.
//! Values are stored in double precision; a tape can be switched to
//! single-precision mode, in which case every operation's result is rounded
//! to `f32` representability before use (accumulation stays in double). That
//! mode exists for the complexity benchmark; gradient checking requires the
//! double default.

pub mod grad_check;
pub mod rng;
pub mod tape;

pub use grad_check::grad_check;
pub use rng::Rng;
pub use tape::{MaddClass, MaddCounts, Tape};

use std::sync::Arc;

/// Storage precision for a tape's results.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

/// Immutable dense tensor, row-major. Cloning is cheap (shared storage).
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    /// Set when this value was produced by (or registered on) a tape:
    /// `(tape id, node index)`.
    pub(crate) node: Option<(u64, usize)>,
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::from_vec(vec![0.0; shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::from_vec(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![value], &[])
    }

    /// 2-D tensor from nested rows; rows must be equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Tensor::from_vec(data, &[r, c])
    }

    /// Gaussian init with standard deviation `1/sqrt(fan_in)`.
    pub fn randn_scaled(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
        let std = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..shape.iter().product())
            .map(|_| rng.next_normal() * std)
            .collect();
        Tensor::from_vec(data, shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn storage(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// Mutable access for the optimizer. Detaches the value from any tape it
    /// was produced by; never mutate a tensor that a live tape still refers
    /// to through a leaf registration.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        self.node = None;
        Arc::make_mut(&mut self.data)
    }

    /// True when this value participates in gradient computation on some tape.
    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Scalar extraction; panics on non-scalars.
    pub fn item(&self) -> f64 {
        assert!(
            self.is_scalar(),
            "item() on non-scalar tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    /// Element of a 2-D tensor.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Detached copy: same values, no tape association.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Max absolute difference against another tensor of the same shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
