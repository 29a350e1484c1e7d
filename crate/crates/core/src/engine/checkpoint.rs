//! Binary checkpoint of a [`BasisState`].
//!
//! Layout (all integers and floats little-endian):
//!
//! | field | type |
//! |---|---|
//! | magic `"OMRX"` | 4 bytes |
//! | version | u16 |
//! | mode tag | u8 |
//! | p, d | u32, u32 |
//! | t | u64 |
//! | L, A, B | row-major binary64 |
//! | running loss constant | binary64 |
//! | CRC-32C of all preceding bytes | u32 |

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::basis::BasisState;
use crate::error::{CheckpointError, Result};
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"OMRX";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 8;

/// A decoded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub mode_tag: u8,
    pub state: BasisState<T>,
}

fn put_matrix<T: Scalar>(buf: &mut Vec<u8>, m: &DMatrix<T>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&m[(i, j)].as_f64().to_le_bytes());
        }
    }
}

/// Serializes the state into the checkpoint byte layout.
pub fn encode<T: Scalar>(state: &BasisState<T>, mode_tag: u8) -> Vec<u8> {
    let (p, d) = (state.p(), state.d());
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * (2 * p * d + d * d + 1) + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(mode_tag);
    buf.extend_from_slice(&(p as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&state.t.to_le_bytes());
    put_matrix(&mut buf, &state.basis);
    put_matrix(&mut buf, &state.acc_a);
    put_matrix(&mut buf, &state.acc_b);
    buf.extend_from_slice(&state.loss_const.as_f64().to_le_bytes());
    let crc = crc32c::crc32c(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn matrix<T: Scalar>(&mut self, rows: usize, cols: usize) -> DMatrix<T> {
        let mut m = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = T::lit(f64::from_le_bytes(self.take::<8>()));
            }
        }
        m
    }
}

/// Parses checkpoint bytes. The checksum is verified before anything else is
/// interpreted, so a cut-off file reports a checksum failure.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>, CheckpointError> {
    if bytes.len() < HEADER_LEN + 8 + 4 {
        return Err(CheckpointError::Truncated(format!("{} bytes is shorter than any checkpoint", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4-byte tail"));
    let computed = crc32c::crc32c(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut rd = Reader { bytes: body, pos: 0 };
    if &rd.take::<4>() != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(rd.take::<2>());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { expected: VERSION, found: version });
    }
    let mode_tag = rd.take::<1>()[0];
    let p = u32::from_le_bytes(rd.take::<4>()) as usize;
    let d = u32::from_le_bytes(rd.take::<4>()) as usize;
    let t = u64::from_le_bytes(rd.take::<8>());

    let expected = (2 * p * d + d * d + 1)
        .checked_mul(8)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| CheckpointError::Truncated("dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(CheckpointError::Truncated(format!(
            "payload is {} bytes, header implies {expected}",
            body.len()
        )));
    }

    let basis = rd.matrix(p, d);
    let acc_a = rd.matrix(d, d);
    let acc_b = rd.matrix(p, d);
    let loss_const = T::lit(f64::from_le_bytes(rd.take::<8>()));
    Ok(Checkpoint { mode_tag, state: BasisState { basis, acc_a, acc_b, t, loss_const } })
}

/// Writes the checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Scalar>(state: &BasisState<T>, mode_tag: u8, path: &Path) -> Result<()> {
    let bytes = encode(state, mode_tag);
    let tmp = path.with_extension("omrx.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(CheckpointError::Io)?;
    Ok(decode(&bytes)?)
}
