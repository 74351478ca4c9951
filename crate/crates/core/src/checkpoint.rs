//! Binary checkpoint container for spline fields.
//!
//! Layout (all integers and floats little-endian):
//! `b"MACROFIN"`, `u32` version, kind string, metadata string, grid table,
//! field table, then a SHA-256 digest of every preceding byte. Strings are
//! `u32` length plus UTF-8 bytes.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;
use crate::spline::{Grid, SplineField};

const MAGIC: &[u8; 8] = b"MACROFIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: KeyValues,
    pub fields: Vec<(String, SplineField)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8 in checkpoint".into()))
    }
}

impl Checkpoint {
    pub fn new(kind: &str, meta: KeyValues) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            meta,
            fields: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, field: &SplineField) {
        self.fields.push((name.to_string(), field.clone()));
    }

    pub fn field(&self, name: &str) -> Result<SplineField> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| Error::Format(format!("checkpoint has no field `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(&self.kind);
        w.str(&self.meta.to_text());

        let mut grids: Vec<Arc<Grid>> = Vec::new();
        let mut grid_of = Vec::new();
        for (_, f) in &self.fields {
            let pos = grids.iter().position(|g| Arc::ptr_eq(g, f.grid()) || **g == **f.grid());
            grid_of.push(pos.unwrap_or_else(|| {
                grids.push(f.grid().clone());
                grids.len() - 1
            }));
        }
        w.u32(grids.len() as u32);
        for g in &grids {
            w.u32(g.dims() as u32);
            for a in g.axes() {
                w.u32(a.len() as u32);
                for v in a.nodes() {
                    w.f64(*v);
                }
            }
        }
        w.u32(self.fields.len() as u32);
        for ((name, f), gi) in self.fields.iter().zip(grid_of) {
            w.str(name);
            w.u32(gi as u32);
            w.u32(f.n_shocks() as u32);
            w.u64(f.coeffs().len() as u64);
            for v in f.coeffs() {
                w.f64(*v);
            }
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Format("checkpoint is truncated".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch (truncated or corrupt)".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let kind = r.str()?;
        let meta = KeyValues::parse(&r.str()?)?;
        let n_grids = r.u32()? as usize;
        let mut grids = Vec::with_capacity(n_grids);
        for _ in 0..n_grids {
            let dims = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(dims);
            for _ in 0..dims {
                let n = r.u32()? as usize;
                nodes.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
            }
            grids.push(Arc::new(Grid::from_nodes(nodes)?));
        }
        let n_fields = r.u32()? as usize;
        let mut fields = Vec::with_capacity(n_fields);
        for _ in 0..n_fields {
            let name = r.str()?;
            let gi = r.u32()? as usize;
            let grid = grids
                .get(gi)
                .ok_or_else(|| Error::Format(format!("field `{name}` references missing grid {gi}")))?
                .clone();
            let n_shocks = r.u32()? as usize;
            let n = r.u64()? as usize;
            if n > body.len() / 8 {
                return Err(Error::Format("implausible coefficient count".into()));
            }
            let coeffs = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            fields.push((name, SplineField::from_coeffs(grid, n_shocks, coeffs)?));
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Checkpoint { kind, meta, fields })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Fails unless the stored parameter hash equals `hash`.
    pub fn expect_params_hash(&self, hash: &str) -> Result<()> {
        match self.meta.get("params_hash") {
            Some(h) if h == hash => Ok(()),
            Some(h) => Err(Error::Config(format!(
                "checkpoint parameter hash {h} does not match the run configuration ({hash})"
            ))),
            None => Err(Error::Format("checkpoint records no parameter hash".into())),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::Axis;

    fn sample() -> Checkpoint {
        let g = Arc::new(
            Grid::new(vec![Axis::uniform(0.0, 1.0, 5).unwrap(), Axis::uniform(1.0, 2.0, 4).unwrap()]).unwrap(),
        );
        let f = SplineField::from_fn(g.clone(), 3, |s, x| (s as f64 + x[0]).sin() * x[1]).unwrap();
        let h = SplineField::from_fn(g, 3, |_, x| x[0] / 3.0).unwrap();
        let mut meta = KeyValues::new();
        meta.set("params_hash", "abc");
        let mut c = Checkpoint::new("test", meta);
        c.push("f", &f);
        c.push("h", &h);
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.kind, "test");
        for (name, f) in &c.fields {
            let g = back.field(name).unwrap();
            let a: Vec<u64> = f.coeffs().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = g.coeffs().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        back.expect_params_hash("abc").unwrap();
        assert!(back.expect_params_hash("abd").is_err());
    }

    #[test]
    fn truncation_and_version_are_detected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 5]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
        let mut v2 = bytes.clone();
        v2[8] = 2;
        let err = Checkpoint::from_bytes(&v2).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }
}
