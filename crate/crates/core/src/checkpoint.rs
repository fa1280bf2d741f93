//! On-disk layout of trained models.
//!
//! A checkpoint directory holds `manifest.toml` (configs, seed, progress),
//! `params.bin` (named parameter tensors) and `optimizer.bin` (optimizer
//! moments, same encoding).
//!
//! Tensor files are little-endian: the magic `JNMRTNS1`, a `u32` count,
//! then per tensor a `u32` name length, the UTF-8 name, a `u32` rank, `u64`
//! dims and `f64` values. Values are widened to f64 so f32 round-trips
//! exactly.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use jnmr_tensor::{Scalar, Tensor};

use crate::error::{io_error, Error, Result};
use crate::nn::ParamStore;

const MAGIC: &[u8; 8] = b"JNMRTNS1";

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn write_tensors<T: Scalar>(path: &Path, names: &[String], tensors: &[Tensor<T>]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_error(format!("creating {}", path.display())))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(tensors) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    w.write_all(&buf)
        .and_then(|_| w.flush())
        .map_err(io_error(format!("writing {}", path.display())))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(corrupt(self.path, "truncated tensor file"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tensors<T: Scalar>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let file = fs::File::open(path).map_err(io_error(format!("opening {}", path.display())))?;
    let mut data = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut data)
        .map_err(io_error(format!("reading {}", path.display())))?;
    let mut c = Cursor { data: &data, pos: 0, path };
    if c.take(8)? != MAGIC {
        return Err(corrupt(path, "not a tensor file"));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| corrupt(path, "parameter name is not UTF-8"))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let bytes = c.take(n.checked_mul(8).ok_or_else(|| corrupt(path, "tensor too large"))?)?;
        let values = bytes
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())))
            .collect();
        out.push((name, Tensor::from_vec(&shape, values)?));
    }
    if c.pos != data.len() {
        return Err(corrupt(path, "trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save_params<T: Scalar>(params: &ParamStore<T>, path: &Path) -> Result<()> {
    write_tensors(path, params.names(), params.tensors())
}

/// Loads values into `params`; names, order and shapes must match.
pub fn load_params<T: Scalar>(params: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let loaded = read_tensors::<T>(path)?;
    if loaded.len() != params.len() {
        return Err(corrupt(
            path,
            format!("holds {} tensors, architecture expects {}", loaded.len(), params.len()),
        ));
    }
    for ((name, t), (want, have)) in loaded.iter().zip(params.names().iter().zip(params.tensors())) {
        if name != want {
            return Err(corrupt(path, format!("found parameter {name}, expected {want}")));
        }
        if t.shape() != have.shape() {
            return Err(corrupt(
                path,
                format!("parameter {name} has shape {:?}, expected {:?}", t.shape(), have.shape()),
            ));
        }
    }
    params.load(loaded.into_iter().map(|(_, t)| t).collect())
}

pub fn params_path(dir: &Path) -> PathBuf {
    dir.join("params.bin")
}

pub fn optimizer_path(dir: &Path) -> PathBuf {
    dir.join("optimizer.bin")
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.toml")
}
