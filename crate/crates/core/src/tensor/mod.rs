//! Dense row-major tensors with a fixed primitive set and tape-based
//! reverse-mode differentiation.
//!
//! The op set is closed over exactly what the denoiser architecture needs
//! (matmul, add, elementwise mul, silu, film, concat on the last axis, mse),
//! which keeps the gradient contract small enough to verify coordinate by
//! coordinate against central finite differences.
//!
//! Storage is nominally 32-bit: in [`Precision::F32`] every element is
//! rounded to the nearest f32 on store while reductions (matmul dot products,
//! mse) accumulate in f64. [`Precision::F64`] skips the rounding and exists
//! for gradient verification.

mod io;
mod ops;
mod tape;

pub use io::{tensor_from_bytes, tensor_to_bytes};
pub use ops::apply_primitive;
pub use tape::{finite_diff_check, Gradients, NodeId, Tape};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit storage, 64-bit accumulation in reductions.
    F32,
    /// Full 64-bit verification mode.
    F64,
}

impl Precision {
    #[inline]
    pub(crate) fn store(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }

    /// Mixed-precision operands promote to F64.
    pub(crate) fn combine(self, other: Precision) -> Precision {
        if self == Precision::F64 || other == Precision::F64 {
            Precision::F64
        } else {
            Precision::F32
        }
    }
}

/// The closed primitive set recorded on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    MatMul,
    /// Same-shape add, or bias broadcast over the last axis.
    Add,
    Mul,
    Silu,
    /// `y = x * (1 + scale) + shift`; scale/shift either match `x` or are
    /// rank-1 over the feature (last) axis.
    Film,
    ConcatLast,
    /// Mean squared error; the scalar output keeps the f64 accumulator value
    /// in both precisions.
    Mse,
}

/// Dense row-major tensor.
///
/// In `F32` precision every element is exactly representable as an f32, so
/// the 32-bit wire format in [`tensor_to_bytes`] is lossless.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!("shape {shape:?} holds {expected} elements, got {}", data.len()),
            });
        }
        let data = data.into_iter().map(|v| precision.store(v)).collect();
        Ok(Tensor { shape, data, precision })
    }

    pub fn zeros(shape: Vec<usize>, precision: Precision) -> Tensor {
        let len = shape.iter().product();
        Tensor { shape, data: vec![0.0; len], precision }
    }

    pub fn scalar(v: f64, precision: Precision) -> Tensor {
        Tensor { shape: vec![], data: vec![precision.store(v)], precision }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a single-element tensor, shape is {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Returns a tensor with the same data reinterpreted under a new shape.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("cannot view {} elements as {shape:?}", self.data.len()),
            });
        }
        Ok(Tensor { shape, data: self.data.clone(), precision: self.precision })
    }

    /// Element-wise map; the result keeps this tensor's precision.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&v| self.precision.store(f(v))).collect();
        Tensor { shape: self.shape.clone(), data, precision: self.precision }
    }

    /// In-place element update, re-rounded per precision.
    pub fn update(&mut self, f: impl Fn(usize, f64) -> f64) {
        for (i, v) in self.data.iter_mut().enumerate() {
            *v = self.precision.store(f(i, *v));
        }
    }

    /// Raw mutable element access for in-crate hot loops; callers must keep
    /// the precision invariant by storing only `precision().store`d values.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a rank-2 tensor.
    pub(crate) fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub(crate) fn cols(&self) -> usize {
        self.shape[1]
    }

    pub(crate) fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_precision_rounds_on_store() {
        let t = Tensor::from_vec(vec![1], vec![0.1], Precision::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let t = Tensor::from_vec(vec![1], vec![0.1], Precision::F64).unwrap();
        assert_eq!(t.data()[0], 0.1f64);
    }

    #[test]
    fn shape_length_mismatch_rejected() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0; 3], Precision::F32).is_err());
    }

    #[test]
    fn rank0_scalar_holds_one_value() {
        let t = Tensor::scalar(2.5, Precision::F32);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.item().unwrap(), 2.5);
    }
}
