//! Binary tensor format: `b"YBEVT"`, `u32` rank, `rank x u64` dims, then the
//! float64 payload, all little-endian.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 5] = b"YBEVT";
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

fn ckpt_err(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("tensor stream: {e}"))
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC).map_err(ckpt_err)?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())
        .map_err(ckpt_err)?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes()).map_err(ckpt_err)?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(ckpt_err)
}

/// Read one tensor; the result is a constant (no gradient tracking).
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(ckpt_err)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Checkpoint(format!("bad tensor magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(ckpt_err)?;
    let rank = u32::from_le_bytes(b4);
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Checkpoint(format!("unsupported tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: u64 = 1;
    for _ in 0..rank {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(ckpt_err)?;
        let d = u64::from_le_bytes(b8);
        numel = numel.saturating_mul(d);
        shape.push(d as usize);
    }
    if numel == 0 || numel > MAX_ELEMENTS {
        return Err(Error::Checkpoint(format!(
            "implausible tensor shape {shape:?}"
        )));
    }
    let mut raw = vec![0u8; numel as usize * 8];
    r.read_exact(&mut raw).map_err(ckpt_err)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(&shape, data)
}
