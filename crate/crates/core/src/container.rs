//! Little-endian primitives shared by the checkpoint (`XLAB`), stimulus
//! (`XSTM`) and response (`XRSP`) files.
//!
//! Every file starts with 4 magic bytes and a `u32` format version. Tensors
//! are stored as `rank: u32`, `dims: u32 * rank`, then `f32` data.

use std::io::{self, Read, Write};

use crate::nn::Tensor;

/// Upper bound on elements in a single stored tensor (guards corrupt headers).
const MAX_ELEMENTS: usize = 1 << 32;

pub(crate) fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) fn write_header<W: Write>(w: &mut W, magic: &[u8; 4], version: u32) -> io::Result<()> {
    w.write_all(magic)?;
    write_u32(w, version)
}

/// Reads and checks the magic; returns the stored version.
pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> io::Result<u32> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(invalid(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    read_u32(r)
}

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_f32<R: Read>(r: &mut R) -> io::Result<f32> {
    Ok(f32::from_bits(read_u32(r)?))
}

pub(crate) fn write_f64<W: Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Length-prefixed UTF-8 blob.
pub(crate) fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(|_| invalid("blob too large"))?;
    write_u32(w, len)?;
    w.write_all(bytes)
}

pub(crate) fn read_bytes<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated blob"));
    }
    Ok(buf)
}

pub(crate) fn write_tensor<W: Write>(w: &mut W, t: &Tensor<f32>) -> io::Result<()> {
    write_u32(w, t.rank() as u32)?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| invalid("dimension exceeds u32"))?;
        write_u32(w, d)?;
    }
    let mut buf = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_tensor<R: Read>(r: &mut R) -> io::Result<Tensor<f32>> {
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(invalid(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&l| l <= MAX_ELEMENTS)
        .ok_or_else(|| invalid(format!("implausible tensor shape {shape:?}")))?;
    let mut bytes = Vec::new();
    r.take(len as u64 * 4).read_to_end(&mut bytes)?;
    if bytes.len() != len * 4 {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated tensor data"));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Tensor::new(shape, data).map_err(|e| invalid(e.to_string()))
}
