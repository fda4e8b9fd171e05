//! Versioned binary checkpoints of named parameter blobs.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  b"TGSCKPT\0"
//! version    u32      = 1
//! kind_len   u32
//! kind       kind_len bytes of UTF-8 ("tgs" or "gcn")
//! count      u32      number of blobs
//! count × {
//!   name_len u32
//!   name     name_len bytes of UTF-8
//!   rows     u64
//!   cols     u64
//!   data     rows·cols × f64 (IEEE-754 binary64, row-major)
//! }
//! ```
//!
//! Values are stored bit-for-bit, so save followed by load is exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TgsError};
use crate::matrix::DenseMatrix;

pub const MAGIC: &[u8; 8] = b"TGSCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub blobs: Vec<(String, DenseMatrix)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self { kind: kind.into(), blobs: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, m: DenseMatrix) {
        self.blobs.push((name.into(), m));
    }

    pub fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, DenseMatrix::from_vec(1, v.len(), v.to_vec()).expect("row vector"));
    }

    pub fn get(&self, name: &str) -> Result<&DenseMatrix> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| TgsError::Checkpoint(format!("missing blob '{name}'")))
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.get(name)?.data().to_vec())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(TgsError::Checkpoint(format!("expected a '{kind}' checkpoint, found '{}'", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        write_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.blobs.len() as u32).to_le_bytes());
        for (name, m) in &self.blobs {
            write_str(&mut out, name);
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for x in m.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let r = &mut bytes;
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(TgsError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TgsError::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = read_str(r)?;
        let count = read_u32(r)? as usize;
        let mut blobs = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_str(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l.saturating_mul(8) <= r.len())
                .ok_or_else(|| TgsError::Checkpoint(format!("blob '{name}' truncated")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                read_exact(r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            blobs.push((name, DenseMatrix::from_vec(rows, cols, data)?));
        }
        if !r.is_empty() {
            return Err(TgsError::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { kind, blobs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| TgsError::Checkpoint("unexpected end of file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > r.len() {
        return Err(TgsError::Checkpoint("string truncated".into()));
    }
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| TgsError::Checkpoint("invalid UTF-8 name".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_of_a_tiny_checkpoint() {
        let mut c = Checkpoint::new("gcn");
        c.push_vec("b", &[1.0]);
        let bytes = c.to_bytes();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"TGSCKPT\0");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(b"gcn");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(b"b");
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut c = Checkpoint::new("tgs");
        c.push("w", DenseMatrix::filled(2, 3, -0.0));
        let bytes = c.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert!(back.get("w").unwrap().data().iter().all(|x| x.to_bits() == (-0.0f64).to_bits()));
    }
}
