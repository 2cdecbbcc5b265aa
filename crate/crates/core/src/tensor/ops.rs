//! Forward implementations of the primitive set.
//!
//! All functions are pure and deterministic: identical inputs produce
//! bit-identical outputs. Shape mismatches are reported with the op name and
//! both shapes; nothing broadcasts beyond bias-over-last-axis (`add`) and
//! feature-axis scale/shift (`film`).

use super::{PrimitiveKind, Tensor};
use crate::error::{Error, Result};

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[m,k] x [k,n] -> [m,n]` with f64 dot-product accumulation.
///
/// Large products distribute rows across threads; each output row is
/// computed by exactly the same scalar loop either way, so the result is
/// bit-identical regardless of thread count.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
        return Err(shape_err("matmul", a, b));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let precision = a.precision().combine(b.precision());
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![0.0f64; m * n];

    // ikj order keeps the inner loop contiguous over both b and out.
    let row_pass = |i: usize, orow: &mut [f64]| {
        let arow = &ad[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
        for v in orow.iter_mut() {
            *v = precision.store(*v);
        }
    };

    if m >= 8 && m * k * n >= (1 << 18) {
        use rayon::prelude::*;
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, orow)| row_pass(i, orow));
    } else {
        for (i, orow) in out.chunks_mut(n).enumerate() {
            row_pass(i, orow);
        }
    }
    Ok(Tensor { shape: vec![m, n], data: out, precision })
}

/// Same-shape addition, or a rank-1 bias broadcast over the last axis.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let precision = a.precision().combine(b.precision());
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| precision.store(x + y))
            .collect();
        return Ok(Tensor { shape: a.shape().to_vec(), data, precision });
    }
    if b.rank() == 1 && a.rank() >= 1 && a.last_dim() == b.len() {
        let n = b.len();
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| precision.store(x + bd[i % n]))
            .collect();
        return Ok(Tensor { shape: a.shape().to_vec(), data, precision });
    }
    Err(shape_err("add", a, b))
}

/// Elementwise product of same-shape tensors.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", a, b));
    }
    let precision = a.precision().combine(b.precision());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| precision.store(x * y))
        .collect();
    Ok(Tensor { shape: a.shape().to_vec(), data, precision })
}

/// `x * sigmoid(x)`.
pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

fn film_param_ok(x: &Tensor, p: &Tensor) -> bool {
    p.shape() == x.shape() || (p.rank() == 1 && p.len() == x.last_dim())
}

/// Feature-wise modulation `y = x * (1 + scale) + shift`.
pub fn film(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    if !film_param_ok(x, scale) {
        return Err(shape_err("film(scale)", x, scale));
    }
    if !film_param_ok(x, shift) {
        return Err(shape_err("film(shift)", x, shift));
    }
    let precision = x
        .precision()
        .combine(scale.precision())
        .combine(shift.precision());
    let n = x.last_dim();
    let sd = scale.data();
    let hd = shift.data();
    let s_bcast = scale.shape() != x.shape();
    let h_bcast = shift.shape() != x.shape();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = if s_bcast { sd[i % n] } else { sd[i] };
            let h = if h_bcast { hd[i % n] } else { hd[i] };
            precision.store(v * (1.0 + s) + h)
        })
        .collect();
    Ok(Tensor { shape: x.shape().to_vec(), data, precision })
}

/// Concatenation along the last axis; all other dims must match.
pub fn concat_last(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != b.rank()
        || a.rank() == 0
        || a.shape()[..a.rank() - 1] != b.shape()[..b.rank() - 1]
    {
        return Err(shape_err("concat-last-axis", a, b));
    }
    let precision = a.precision().combine(b.precision());
    let (la, lb) = (a.last_dim(), b.last_dim());
    let lead: usize = a.shape()[..a.rank() - 1].iter().product();
    let mut data = Vec::with_capacity(lead * (la + lb));
    for i in 0..lead {
        data.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        data.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = la + lb;
    Ok(Tensor { shape, data, precision })
}

/// Mean squared error over all elements, returned as a rank-0 scalar.
///
/// The accumulator is f64 and its value is kept verbatim in both precisions
/// so finite-difference checks see the full reduction accuracy.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mean-squared-error", a, b));
    }
    let precision = a.precision().combine(b.precision());
    let n = a.len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    Ok(Tensor { shape: vec![], data: vec![sum / n], precision })
}

/// Dispatches a primitive by kind over positional inputs.
pub fn apply_primitive(kind: PrimitiveKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{kind:?} expects {n} inputs, got {}",
                inputs.len()
            )))
        }
    };
    match kind {
        PrimitiveKind::MatMul => {
            arity(2)?;
            matmul(inputs[0], inputs[1])
        }
        PrimitiveKind::Add => {
            arity(2)?;
            add(inputs[0], inputs[1])
        }
        PrimitiveKind::Mul => {
            arity(2)?;
            mul(inputs[0], inputs[1])
        }
        PrimitiveKind::Silu => {
            arity(1)?;
            Ok(silu(inputs[0]))
        }
        PrimitiveKind::Film => {
            arity(3)?;
            film(inputs[0], inputs[1], inputs[2])
        }
        PrimitiveKind::ConcatLast => {
            arity(2)?;
            concat_last(inputs[0], inputs[1])
        }
        PrimitiveKind::Mse => {
            arity(2)?;
            mse(inputs[0], inputs[1])
        }
    }
}
