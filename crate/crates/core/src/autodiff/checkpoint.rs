//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"RTPARAMS"
//! version  u32      CHECKPOINT_VERSION
//! count    u32      number of tensors
//! count times, in lexicographic name order:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   rows u64, cols u64
//!   rows*cols f64 values, row-major, IEEE-754 bit patterns
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::ParamStore;
use crate::error::Error;
use crate::io::write_atomic;

const MAGIC: &[u8; 8] = b"RTPARAMS";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_params<W: Write>(params: &ParamStore, mut out: W) -> Result<(), Error> {
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.nrows() as u64).to_le_bytes())?;
        out.write_all(&(t.ncols() as u64).to_le_bytes())?;
        for &x in t.iter() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, Error> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut input: R) -> Result<ParamStore, Error> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; len];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let rows = read_u64(&mut input)? as usize;
        let cols = read_u64(&mut input)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            input.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let t = Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
    }
    Ok(params)
}

pub fn save_params(params: &ParamStore, path: &Path) -> Result<(), Error> {
    let mut buf = Vec::with_capacity(16 + params.num_scalars() * 8);
    write_params(params, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_params(path: &Path) -> Result<ParamStore, Error> {
    let bytes = fs::read(path)?;
    read_params(bytes.as_slice())
}
