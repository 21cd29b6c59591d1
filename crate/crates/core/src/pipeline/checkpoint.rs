//! Versioned little-endian binary checkpoints.
//!
//! Every file starts with an 8-byte magic, a `u32` version and a metadata
//! block of UTF-8 key/value pairs (sorted by key). The body layout belongs
//! to the object being stored.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub type Metadata = BTreeMap<String, String>;

pub struct CheckpointWriter {
    buf: Vec<u8>,
}

impl CheckpointWriter {
    pub fn new(magic: &[u8; 8], version: u32, meta: &Metadata) -> Self {
        let mut w = CheckpointWriter { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.put_u32(version);
        w.put_u32(meta.len() as u32);
        for (k, v) in meta {
            w.put_str(k);
            w.put_str(v);
        }
        w
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed (`u64`) array of reals.
    pub fn put_f64s(&mut self, v: &[f64]) {
        self.put_u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for x in v {
            self.put_f64(*x);
        }
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn write_to(self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.buf)?;
        Ok(())
    }
}

pub struct CheckpointReader<'a> {
    data: &'a [u8],
    pos: usize,
    pub version: u32,
    pub meta: Metadata,
}

impl<'a> CheckpointReader<'a> {
    /// Checks magic and version and parses the metadata block.
    pub fn open(data: &'a [u8], magic: &[u8; 8], version: u32) -> Result<Self> {
        if data.len() < 8 || &data[..8] != magic {
            return Err(Error::Checkpoint(format!(
                "bad magic, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = CheckpointReader {
            data,
            pos: 8,
            version: 0,
            meta: Metadata::new(),
        };
        r.version = r.u32()?;
        if r.version != version {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {version})",
                r.version
            )));
        }
        let count = r.u32()?;
        for _ in 0..count {
            let k = r.string()?;
            let v = r.string()?;
            r.meta.insert(k, v);
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > (self.data.len() - self.pos) / 8 {
            return Err(Error::Checkpoint(format!("truncated array of {n} reals")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("metadata is not utf-8".into()))
    }

    /// Fails unless every byte was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// SHA-256 over the little-endian bytes of `values`, hex encoded.
pub fn hash_reals(values: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut meta = Metadata::new();
        meta.insert("b".into(), "2".into());
        meta.insert("a".into(), "x".into());
        let mut w = CheckpointWriter::new(b"TESTTEST", 3, &meta);
        w.put_u32(7);
        w.put_f64s(&[1.5, -2.0]);
        let bytes = w.into_bytes();

        let mut r = CheckpointReader::open(&bytes, b"TESTTEST", 3).unwrap();
        assert_eq!(r.meta, meta);
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64s().unwrap(), vec![1.5, -2.0]);
        r.finish().unwrap();

        for cut in [0, 5, 12, bytes.len() - 1] {
            let res = CheckpointReader::open(&bytes[..cut], b"TESTTEST", 3).and_then(|mut r| {
                r.u32()?;
                r.f64s()?;
                r.finish()
            });
            assert!(matches!(res, Err(Error::Checkpoint(_))), "cut {cut}");
        }
        assert!(CheckpointReader::open(&bytes, b"TESTTEST", 4).is_err());
        assert!(CheckpointReader::open(&bytes, b"OTHERMAG", 3).is_err());
    }
}
