//! Dense row-major tensors and a reverse-mode autodiff tape.
//!
//! [`Tensor`] is a plain value: a shape and a flat `f64` buffer. Differentiable
//! computation happens on a [`Tape`], which owns every intermediate value and
//! records one node per primitive so [`Tape::backward`] can replay them in
//! reverse.
//!
//! Broadcasting follows trailing-axis alignment: shapes are right-aligned and
//! each pair of dimensions must be equal or one of them must be 1.

mod kernels;
mod recurrent;
mod tape;

pub use tape::{Tape, Var};

use thiserror::Error;

/// Scalar type used throughout the engine.
pub type Scalar = f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?} for buffer of length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },
    #[error("axis {axis} out of range for rank {rank} in {op}")]
    Axis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("index {index} out of range [0, {bound}) in {op}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Scalar>,
}

impl Tensor {
    /// Builds a tensor, checking that every dimension is positive and that
    /// the buffer length matches the shape. An empty shape is a scalar.
    pub fn new(shape: Vec<usize>, data: Vec<Scalar>) -> Result<Self> {
        if shape.contains(&0) || numel(&shape) != data.len() {
            return Err(TensorError::InvalidShape {
                len: data.len(),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: Scalar) -> Self {
        assert!(shape.iter().all(|&d| d > 0), "zero-sized dimension in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: Scalar) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> Scalar) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Scalar] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Scalar] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Scalar> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Scalar {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Output shape of broadcasting `a` against `b` with trailing-axis alignment.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Shape {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// For each flat index of `out`, the flat index of the broadcast operand.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = numel(out);
    if src == out {
        return (0..n).collect();
    }
    let src_len = numel(src);
    // Suffix shapes (the common bias case) reduce to a modulo.
    let offset = out.len() - src.len();
    if out[offset..] == *src {
        return (0..n).map(|i| i % src_len).collect();
    }
    let mut strides = vec![0usize; out.len()];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        if src[i] != 1 {
            strides[i + offset] = acc;
        }
        acc *= src[i];
    }
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    for _ in 0..n {
        map.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            if idx[d] < out[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert_eq!(Tensor::new(vec![], vec![3.0]).unwrap().item(), 3.0);
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[4]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn general_broadcast_map() {
        // [2,1] against [2,3]: column vector repeated across columns.
        assert_eq!(broadcast_index_map(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_index_map(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_index_map(&[1, 3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
    }
}
