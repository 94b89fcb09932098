//! Versioned little-endian binary formats for models, embedding stores and
//! index snapshots.
//!
//! Every file starts with 8 magic bytes and a `u32` format version. Floats
//! are IEEE-754 `f64`, matrices are row-major. An MLP block is
//! `u32 layer_count` followed by, per layer, `u32 in_dim, u32 out_dim`,
//! `in_dim * out_dim` weights and `out_dim` biases.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::nn::{Dense, MlpParams};

pub const FORMAT_VERSION: u32 = 1;

// Sanity bound on any length prefix, so corrupt files fail fast instead of
// attempting huge allocations.
const MAX_LEN: u64 = 1 << 32;

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 8]) -> Result<Self> {
        inner.write_all(magic)?;
        inner.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        Ok(BinWriter { inner })
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.inner.write_u8(v)?)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.inner.write_u32::<LittleEndian>(v)?)
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.inner.write_u64::<LittleEndian>(v)?)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.inner.write_f64::<LittleEndian>(v)?)
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len() as u32)?;
        Ok(self.inner.write_all(s.as_bytes())?)
    }

    pub fn mlp(&mut self, mlp: &MlpParams) -> Result<()> {
        self.u32(mlp.layers().len() as u32)?;
        for l in mlp.layers() {
            self.u32(l.in_dim as u32)?;
            self.u32(l.out_dim as u32)?;
            self.f64s(&l.weights)?;
            self.f64s(&l.bias)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct BinReader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> BinReader<R> {
    pub fn new(mut inner: R, magic: &[u8; 8], what: &'static str) -> Result<Self> {
        let mut got = [0u8; 8];
        inner.read_exact(&mut got).map_err(|_| corrupt(what, "truncated header"))?;
        if &got != magic {
            return Err(corrupt(what, "bad magic bytes"));
        }
        let version = inner
            .read_u32::<LittleEndian>()
            .map_err(|_| corrupt(what, "truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(corrupt(what, format!("unsupported format version {version}")));
        }
        Ok(BinReader { inner, what })
    }

    fn eof(&self) -> Error {
        corrupt(self.what, "unexpected end of file")
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.inner.read_u8().map_err(|_| self.eof())
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.inner.read_u32::<LittleEndian>().map_err(|_| self.eof())
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.inner.read_u64::<LittleEndian>().map_err(|_| self.eof())
    }

    pub fn count(&mut self) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(corrupt(self.what, format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.inner.read_f64::<LittleEndian>().map_err(|_| self.eof())
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| self.eof())?;
        String::from_utf8(buf).map_err(|_| corrupt(self.what, "invalid utf-8"))
    }

    pub fn mlp(&mut self) -> Result<MlpParams> {
        let n = self.u32()? as usize;
        if n == 0 || n > 64 {
            return Err(corrupt(self.what, format!("implausible layer count {n}")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let in_dim = self.u32()? as usize;
            let out_dim = self.u32()? as usize;
            if (in_dim as u64) * (out_dim as u64) > MAX_LEN {
                return Err(corrupt(self.what, "implausible layer size"));
            }
            let weights = self.f64s(in_dim * out_dim)?;
            let bias = self.f64s(out_dim)?;
            layers.push(Dense {
                in_dim,
                out_dim,
                weights,
                bias,
            });
        }
        MlpParams::new(layers).map_err(|e| corrupt(self.what, e.to_string()))
    }

    /// Fails unless the input is fully consumed.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            _ => Err(corrupt(self.what, "trailing bytes")),
        }
    }
}

fn corrupt(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Format {
        what,
        reason: reason.into(),
    }
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}
