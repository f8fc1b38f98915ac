//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic    8 bytes  "TCKPT\0\0\0"
//! version  u32
//! cfg_hash u64
//! hdr_len  u32, then hdr_len bytes of UTF-8 JSON (free-form metadata)
//! count    u32
//! count × { name_len u32, name bytes, ndim u32, ndim × u64 dims, f32 payload }
//! ```

use std::io::{Read, Write};

use super::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TCKPT\0\0\0";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;
const MAX_NDIM: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub header: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        let hdr = serde_json::to_vec(&self.header)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        w.write_all(&(hdr.len() as u32).to_le_bytes())?;
        w.write_all(&hdr)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to a Vec cannot fail");
        v
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("tmp");
        {
            let f = std::fs::File::create(&tmp)?;
            let mut w = std::io::BufWriter::new(f);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Decode from memory. Every length is validated against the remaining
    /// input before allocation, so hostile bytes cannot trigger huge buffers.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor { b: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_hash = r.u64()?;
        let hlen = r.u32()? as usize;
        let header: serde_json::Value = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            if nlen > MAX_NAME {
                return Err(CheckpointError::Malformed(format!("name length {nlen}")));
            }
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            if ndim > MAX_NDIM {
                return Err(CheckpointError::Malformed(format!("{name}: rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut numel: usize = 1;
            for _ in 0..ndim {
                let d = usize::try_from(r.u64()?)
                    .map_err(|_| CheckpointError::Malformed("dim overflow".into()))?;
                numel = numel.checked_mul(d).ok_or_else(|| {
                    CheckpointError::Malformed(format!("{name}: element count overflow"))
                })?;
                shape.push(d);
            }
            let nbytes = numel
                .checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed(format!("{name}: payload overflow")))?;
            let raw = r.take(nbytes)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors
                .iter()
                .any(|(n, _): &(String, Tensor<f32>)| *n == name)
            {
                return Err(CheckpointError::Malformed(format!(
                    "duplicate tensor {name}"
                )));
            }
            let t =
                Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config_hash,
            header,
            tensors,
        })
    }
}

/// Read a whole stream and decode it.
pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut v = Vec::new();
    r.read_to_end(&mut v)?;
    Checkpoint::from_bytes(&v)
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.b.len())
            .ok_or_else(|| CheckpointError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
