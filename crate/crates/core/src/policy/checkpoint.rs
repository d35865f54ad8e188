//! Self-describing binary container for parameter vectors.
//!
//! ```text
//! magic "DMCK" | u32 version
//! u32 n_meta   | n_meta × (str key, str value)
//! u32 n_vecs   | n_vecs × (str name, vector)
//! vector: u32 n_segments | n_segments × (str name, u64 offset, u32 ndim, ndim × u64)
//!         u64 n_values   | n_values × f64
//! str:    u32 byte length | utf-8 bytes
//! ```
//! All integers and floats are little-endian.

use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{Layout, ParamVector, Segment};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DMCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub vectors: Vec<(String, ParamVector)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_vector(mut self, name: &str, params: ParamVector) -> Self {
        self.vectors.push((name.to_string(), params));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn vector(&self, name: &str) -> Option<&ParamVector> {
        self.vectors.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, self.meta.len() as u32);
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.vectors.len() as u32);
        for (name, p) in &self.vectors {
            put_str(&mut out, name);
            write_params(&mut out, p);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = r.u32()?;
        let mut meta = Vec::new();
        for _ in 0..n_meta {
            meta.push((r.string()?, r.string()?));
        }
        let n_vecs = r.u32()?;
        let mut vectors = Vec::new();
        for _ in 0..n_vecs {
            let name = r.string()?;
            vectors.push((name, read_params(&mut r)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { meta, vectors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn write_params(out: &mut Vec<u8>, p: &ParamVector) {
    let segs = p.layout().segments();
    put_u32(out, segs.len() as u32);
    for s in segs {
        put_str(out, &s.name);
        put_u64(out, s.offset as u64);
        put_u32(out, s.shape.len() as u32);
        for &d in &s.shape {
            put_u64(out, d as u64);
        }
    }
    put_u64(out, p.len() as u64);
    for v in p.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

fn read_params(r: &mut Reader<'_>) -> Result<ParamVector> {
    let n_segs = r.u32()?;
    let mut segments = Vec::new();
    for _ in 0..n_segs {
        let name = r.string()?;
        let offset = r.u64()? as usize;
        let ndim = r.u32()?;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        segments.push(Segment {
            name,
            offset,
            shape,
        });
    }
    let layout = Layout::new(segments)?;
    let n = r.u64()? as usize;
    if n != layout.len() {
        return Err(Error::Checkpoint(format!(
            "{n} values for a layout of {}",
            layout.len()
        )));
    }
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    ParamVector::new(Arc::new(layout), values)
}
