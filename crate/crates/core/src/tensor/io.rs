//! Byte format for tensors: rank and dimensions as little-endian u64,
//! followed by the elements as little-endian f32. In F32 precision the
//! round trip is bit-exact.

use super::{Precision, Tensor};
use crate::error::{Error, Result};

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses one tensor from the front of `bytes`; returns the tensor and the
/// number of bytes consumed. Truncated input reports the failing offset.
pub fn tensor_from_bytes(bytes: &[u8]) -> Result<(Tensor, usize)> {
    let mut offset = 0usize;
    let take = |offset: &mut usize, n: usize| -> Result<&[u8]> {
        if *offset + n > bytes.len() {
            return Err(Error::Format(format!(
                "truncated tensor: needed {n} bytes at offset {}, only {} available",
                *offset,
                bytes.len() - *offset
            )));
        }
        let s = &bytes[*offset..*offset + n];
        *offset += n;
        Ok(s)
    };

    let rank = u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap()) as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(&mut offset, 8)?.try_into().unwrap()) as usize);
    }
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let v = f32::from_le_bytes(take(&mut offset, 4)?.try_into().unwrap());
        data.push(v as f64);
    }
    Ok((Tensor::from_vec(shape, data, Precision::F32)?, offset))
}
