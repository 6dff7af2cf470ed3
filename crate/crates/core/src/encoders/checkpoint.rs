//! Length-prefixed binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"VCLIPCKP"
//! u32    format version
//! u64    header length, then that many bytes of UTF-8 JSON
//! u64    tensor count
//! per tensor:
//!   u64 name length, name bytes
//!   u32 rank, rank × u64 dims
//!   product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"VCLIPCKP";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Config/metadata JSON plus an ordered list of named tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub header: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

fn ck_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(header: serde_json::Value) -> Self {
        Checkpoint { header, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        self.tensors.push(NamedTensor { name: name.into(), shape: shape.to_vec(), values });
    }

    /// Stores tensors under `prefix/<name>`.
    pub fn push_params<T: Scalar>(&mut self, prefix: &str, params: &[&Tensor<T>]) {
        for p in params {
            self.push(format!("{prefix}/{}", p.name()), p.shape(), p.to_f64_vec());
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| ck_err(format!("missing tensor {name:?}")))
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        let p = format!("{prefix}/");
        self.tensors.iter().any(|t| t.name.starts_with(&p))
    }

    /// Overwrites `params` from `prefix/<name>` entries; shapes must match.
    pub fn restore_params<T: Scalar>(&self, prefix: &str, params: Vec<&mut Tensor<T>>) -> Result<()> {
        for p in params {
            let name = format!("{prefix}/{}", p.name());
            let t = self.get(&name)?;
            if t.shape != p.shape() {
                return Err(ck_err(format!("{name}: stored shape {:?}, model expects {:?}", t.shape, p.shape())));
            }
            for (dst, &v) in p.values_mut().iter_mut().zip(&t.values) {
                *dst = T::lit(v);
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header).expect("JSON value serialises");
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ck_err("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ck_err(format!("unsupported checkpoint version {version}")));
        }
        let hlen = r.len()?;
        let header = serde_json::from_slice(r.take(hlen)?).map_err(|e| ck_err(format!("header: {e}")))?;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let nlen = r.len()?;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| ck_err("tensor name is not UTF-8"))?;
            let rank = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| ck_err("tensor too large"))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| ck_err("tensor too large"))?)?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(ck_err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ck_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| ck_err("length overflows usize"))
    }
}
