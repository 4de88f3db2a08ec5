//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable n-dimensional array. Operations live on
//! [`Tape`]: they are pure with respect to their tensor arguments and record
//! a node only when at least one input participates in gradient tracking, so
//! the same code path serves inference (empty tape) and training.

mod attention;
mod tape;

pub use attention::{multi_head_attention, multi_head_attention_with_map, AttentionWeights};
pub(crate) use tape::matmul_data;
pub use tape::{NodeId, Tape};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Immutable dense array of f64 in row-major order.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    node: Option<NodeId>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || data.len() != numel {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: valid shape")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).expect("scalar")
    }

    /// Gaussian-initialized tensor with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.next_normal() * std).collect();
        Tensor::new(shape, data).expect("randn: valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Tensor {
        self.node = Some(node);
        self.requires_grad = true;
        self
    }

    /// A copy that no longer participates in gradient tracking.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
        }
    }

    /// New tensor over the same buffer with a different shape. The result is
    /// detached from any tape.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || numel != self.numel() {
            return Err(Error::DataLength {
                shape,
                len: self.numel(),
            });
        }
        Ok(Tensor {
            shape,
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
        })
    }

    /// Element at a fully-specified index.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.rank(), "index rank");
        let mut flat = 0usize;
        for (i, &ix) in index.iter().enumerate() {
            assert!(ix < self.shape[i], "index out of bounds");
            flat = flat * self.shape[i] + ix;
        }
        self.data[flat]
    }

    /// Rows `start..start+len` of a rank-2 tensor, copied.
    pub fn rows(&self, start: usize, len: usize) -> Result<Tensor> {
        self.expect_rank(2, "rows")?;
        let (n, c) = (self.shape[0], self.shape[1]);
        if start + len > n {
            return Err(Error::ShapeMismatch {
                op: "rows",
                lhs: self.shape.clone(),
                rhs: vec![start, len],
            });
        }
        let data = self.data[start * c..(start + len) * c].to_vec();
        Tensor::new(vec![len, c], data)
    }

    /// Index `i` along the leading axis, copied; drops that axis.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::RankMismatch {
                op: "index_axis0",
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        let stride: usize = self.shape[1..].iter().product();
        if i >= self.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "index_axis0",
                lhs: self.shape.clone(),
                rhs: vec![i],
            });
        }
        let data = self.data[i * stride..(i + 1) * stride].to_vec();
        Tensor::new(self.shape[1..].to_vec(), data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Max absolute difference between two tensors of identical shape.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &'static str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::RankMismatch {
                op,
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Indices of the `k` largest scores. Ties break toward the smaller index;
/// the result is sorted ascending so downstream consumers keep temporal
/// order.
pub fn topk_indices(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(Error::Selection { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Descending by score, ascending by index among ties.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}
