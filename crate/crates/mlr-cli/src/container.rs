//! MLRW v1: the named-tensor container used for weights, classifiers and
//! embeddings.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic  b"MLRW"
//! u32    version (= 1)
//! u32    tensor count
//! per tensor:
//!     u32        name length in bytes
//!     [u8]       UTF-8 name
//!     u32        rank
//!     [u32]      dims
//!     [f32]      row-major payload (product(dims) values)
//! u64    FNV-1a checksum of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};
use crate::fnv::fnv1a64;

pub const MAGIC: &[u8; 4] = b"MLRW";
pub const VERSION: u32 = 1;

/// One stored tensor: dims plus 32-bit payload.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorData {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorData {
    pub fn from_f64(dims: &[usize], data: &[f64]) -> Self {
        TensorData {
            dims: dims.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn vector(data: &[f64]) -> Self {
        TensorData::from_f64(&[data.len()], data)
    }

    pub fn scalar(v: f64) -> Self {
        TensorData {
            dims: vec![1],
            data: vec![v as f32],
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered named tensors; names are unique, write order is preserved.
#[derive(Debug, Clone, Default)]
pub struct Container {
    order: Vec<String>,
    tensors: BTreeMap<String, TensorData>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: TensorData) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(CliError::Data(format!(
                "duplicate tensor name '{name}' in container"
            )));
        }
        self.order.push(name.clone());
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorData> {
        self.tensors.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorData> {
        self.get(name)
            .ok_or_else(|| CliError::Data(format!("container is missing tensor '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let t = &self.tensors[name];
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        buf
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != MAGIC {
            return Err(CliError::Data(format!(
                "bad magic {magic:02x?}, not an MLRW container"
            )));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CliError::Data(format!(
                "unsupported MLRW version {version}, expected {VERSION}"
            )));
        }
        if bytes.len() < 8 {
            return Err(CliError::Data("container truncated before checksum".into()));
        }
        let body = &bytes[..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        let actual = fnv1a64(body);
        if stored != actual {
            return Err(CliError::Data(format!(
                "container checksum mismatch: stored {stored:016x}, computed {actual:016x}"
            )));
        }
        let count = cur.u32()? as usize;
        let mut out = Container::new();
        for i in 0..count {
            let name_len = cur.u32()? as usize;
            let name_bytes = cur.take(name_len)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| CliError::Data(format!("tensor {i}: name is not UTF-8")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(cur.u32()? as usize);
            }
            let n: usize = dims.iter().product();
            let payload = cur.take(n * 4)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.insert(name, TensorData { dims, data })?;
        }
        if cur.pos != body.len() {
            return Err(CliError::Data(format!(
                "container has {} trailing bytes after {count} tensors",
                body.len() - cur.pos
            )));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        // the trailing 8 bytes are the checksum, never part of a field
        if self.pos + n + 8 > self.bytes.len() {
            return Err(CliError::Data(format!(
                "container truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}
