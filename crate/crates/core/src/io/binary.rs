//! Little-endian record encoding shared by the parameter, optimizer and
//! index files.

use std::path::{Path, PathBuf};

use crate::nn::Tensor;
use crate::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn f32s(&mut self, data: &[f32]) {
        self.buf.reserve(data.len() * 4);
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Length-prefixed UTF-8 string.
    pub fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// `name, ndim, dims..., values...`
    pub fn tensor(&mut self, name: &str, t: &Tensor<f32>) {
        self.string(name);
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u32(d as u32);
        }
        self.f32s(t.data());
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], path: &Path) -> Self {
        Self {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        }
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                what: what.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| self.bad(what))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::BadHeader {
            path: self.path.clone(),
            detail: format!("{what} is not UTF-8"),
        })
    }

    fn bad(&self, what: &str) -> Error {
        Error::BadHeader {
            path: self.path.clone(),
            detail: format!("implausible size for {what}"),
        }
    }

    /// Reads one tensor record. `expected` names the tensor in truncation
    /// errors when the record's own name has not been read yet.
    pub fn tensor(&mut self, expected: &str) -> Result<(String, Tensor<f32>)> {
        let name = self.string(&format!("tensor {expected}"))?;
        let ndim = self.u32(&format!("tensor {name}"))? as usize;
        if ndim > 8 {
            return Err(self.bad(&format!("rank of tensor {name}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u32(&format!("tensor {name}"))? as usize);
        }
        let n: usize = shape.iter().product();
        let data = self.f32s(n, &format!("tensor {name}"))?;
        let t = Tensor::new(shape, data).expect("length checked");
        Ok((name, t))
    }

    /// Reads a tensor record that must carry the name `expected`.
    pub fn named_tensor(&mut self, expected: &str) -> Result<Tensor<f32>> {
        let (name, t) = self.tensor(expected)?;
        if name != expected {
            return Err(Error::MissingTensor {
                path: self.path.clone(),
                name: expected.to_string(),
            });
        }
        Ok(t)
    }

    /// Checks magic, version and fingerprint.
    pub fn header(&mut self, magic: &[u8; 8], version: u32, fingerprint: &[u8; 32]) -> Result<()> {
        let m = self.take(8, "magic").map_err(|_| Error::BadHeader {
            path: self.path.clone(),
            detail: "file too short for magic".into(),
        })?;
        if m != magic {
            return Err(Error::BadHeader {
                path: self.path.clone(),
                detail: format!("expected magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let found = self.u32("format version")?;
        if found != version {
            return Err(Error::Version {
                path: self.path.clone(),
                found,
                expected: version,
            });
        }
        if self.take(32, "fingerprint")? != fingerprint {
            return Err(Error::Fingerprint {
                path: self.path.clone(),
            });
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
