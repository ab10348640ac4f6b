//! Versioned binary container for training state.
//!
//! Layout (little-endian): magic `XINT`, `u32` format version, `u32` entry
//! count, then per entry a `u32`-length-prefixed UTF-8 name, a `u32` rank
//! and `u64` dims, a `u8` dtype tag, a `u64` payload byte length and the
//! payload. A SHA-256 digest of everything before it closes the file.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};
use xint_tensor::{DType, Scalar, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XINT";
pub const FORMAT_VERSION: u32 = 1;

const TAG_U64: u8 = 0x10;
const TAG_BYTES: u8 = 0x11;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Payload {
    fn tag(&self) -> u8 {
        match self {
            Payload::F32(_) => DType::F32.tag(),
            Payload::F64(_) => DType::F64.tag(),
            Payload::U64(_) => TAG_U64,
            Payload::Bytes(_) => TAG_BYTES,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U64(v) => v.len(),
            Payload::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub payload: Payload,
}

/// Named entries in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let data = t.to_f64_vec();
        let payload = match T::DTYPE {
            DType::F32 => Payload::F32(data.iter().map(|&v| v as f32).collect()),
            DType::F64 => Payload::F64(data),
        };
        self.entries.push(Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            payload,
        });
    }

    pub fn push_u64s(&mut self, name: impl Into<String>, values: Vec<u64>) {
        self.entries.push(Entry {
            name: name.into(),
            shape: vec![values.len()],
            payload: Payload::U64(values),
        });
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.entries.push(Entry {
            name: name.into(),
            shape: vec![bytes.len()],
            payload: Payload::Bytes(bytes),
        });
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {:?}", name)))
    }

    /// A floating-point entry as a tensor of `T`; the stored dtype must
    /// match.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.get(name)?;
        let data: Vec<T> = match (&e.payload, T::DTYPE) {
            (Payload::F32(v), DType::F32) => v.iter().map(|&x| T::from_f64_lossy(f64::from(x))).collect(),
            (Payload::F64(v), DType::F64) => v.iter().map(|&x| T::from_f64_lossy(x)).collect(),
            _ => return Err(Error::Checkpoint(format!("entry {:?} does not hold {:?} values", name, T::DTYPE))),
        };
        Ok(Tensor::new(&e.shape, data)?)
    }

    pub fn u64s(&self, name: &str) -> Result<&[u64]> {
        match &self.get(name)?.payload {
            Payload::U64(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("entry {:?} is not a u64 array", name))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.get(name)?.payload {
            Payload::Bytes(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("entry {:?} is not a byte string", name))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        std::str::from_utf8(self.bytes(name)?).map_err(|_| Error::Checkpoint(format!("entry {:?} is not UTF-8", name)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(e.payload.tag());
            let start = out.len();
            out.extend_from_slice(&0u64.to_le_bytes());
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::Bytes(v) => out.extend_from_slice(v),
            }
            let len = (out.len() - start - 8) as u64;
            out[start..start + 8].copy_from_slice(&len.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    /// Parses a complete container. Nothing is returned unless the digest,
    /// version and every entry check out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| Error::Checkpoint(format!("corrupt checkpoint: {}", what));
        if bytes.len() < 12 + 32 || &bytes[..4] != MAGIC {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(corrupt("bad magic bytes"));
            }
            return Err(corrupt("file is truncated"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint format version {} is not supported (this build reads version {}); re-create it with a matching build",
                version, FORMAT_VERSION
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("digest mismatch (truncated or modified file)"));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| corrupt("entry name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let tag = r.take(1)?[0];
            let len = r.u64()? as usize;
            let raw = r.take(len)?;
            let payload = match tag {
                t if t == DType::F32.tag() => Payload::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                t if t == DType::F64.tag() => Payload::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                TAG_U64 => Payload::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                TAG_BYTES => Payload::Bytes(raw.to_vec()),
                other => return Err(corrupt(&format!("unknown dtype tag {}", other))),
            };
            let width = match tag {
                TAG_BYTES => 1,
                t if t == DType::F32.tag() => 4,
                _ => 8,
            };
            if payload.len() * width != len || shape.iter().product::<usize>() != payload.len() {
                return Err(corrupt(&format!("entry {:?} payload does not match its shape", name)));
            }
            entries.push(Entry { name, shape, payload });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after the last entry"));
        }
        Ok(Checkpoint { entries })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {}", path.display(), msg)),
            other => other,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("corrupt checkpoint: entry runs past the end".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
