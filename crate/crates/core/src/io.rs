//! Little-endian binary containers with an FNV-1a trailer, shared by the
//! snapshot and model file formats.

use std::path::Path;

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hex FNV-1a digest of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(format!("{:016x}", fnv1a64(&std::fs::read(path)?)))
}

/// Float formatting with 17 significant digits (round-trips every `f64`).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 8]) -> Self {
        Self {
            buf: magic.to_vec(),
        }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
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

    pub fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }

    /// Length-prefixed (u32) byte string.
    pub fn bytes(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Appends the checksum of everything written so far.
    pub fn finish(mut self) -> Vec<u8> {
        let h = fnv1a64(&self.buf);
        self.u64(h);
        self.buf
    }
}

pub struct ByteReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    /// Validates magic and checksum trailer. Magic is checked first, then the
    /// length, then the checksum, so each failure mode is reported distinctly.
    pub fn open(data: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if data.len() < 8 || &data[..8] != magic {
            let found = &data[..data.len().min(8)];
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        if data.len() < 16 {
            return Err(Error::Truncated(format!(
                "{} bytes, no room for checksum",
                data.len()
            )));
        }
        Ok(Self {
            data: &data[..data.len() - 8],
            pos: 8,
        })
    }

    /// Checks the trailer; call once the header has been parsed so a
    /// header/payload length mismatch surfaces as truncation instead.
    pub fn verify_checksum(&self, full: &[u8]) -> Result<()> {
        let n = full.len() - 8;
        let stored = u64::from_le_bytes(full[n..].try_into().expect("8 bytes"));
        let computed = fnv1a64(&full[..n]);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(())
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    /// Fails with a truncation error unless `n` bytes remain.
    pub fn expect_remaining(&self, n: usize, what: &str) -> Result<()> {
        if self.remaining() != n {
            return Err(Error::Truncated(format!(
                "{what}: header implies {n} payload bytes, found {}",
                self.remaining()
            )));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8).ok_or_else(|| Error::Format(what.into()))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)? as usize;
        self.take(n, what)
    }

    pub fn finish(&self, what: &str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!(
                "{what}: {} trailing bytes",
                self.remaining()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_and_failures() {
        let mut w = ByteWriter::new(b"TESTMAG1");
        w.u32(7);
        w.f64s(&[1.5, -2.0]);
        w.bytes(b"hi");
        let buf = w.finish();

        let mut r = ByteReader::open(&buf, b"TESTMAG1").unwrap();
        r.verify_checksum(&buf).unwrap();
        assert_eq!(r.u32("n").unwrap(), 7);
        assert_eq!(r.f64s(2, "v").unwrap(), vec![1.5, -2.0]);
        assert_eq!(r.bytes("s").unwrap(), b"hi");
        r.finish("t").unwrap();

        let mut bad = buf.clone();
        bad[0] ^= 1;
        assert!(matches!(
            ByteReader::open(&bad, b"TESTMAG1"),
            Err(Error::BadMagic { .. })
        ));
        let mut bad = buf.clone();
        bad[12] ^= 1;
        let r = ByteReader::open(&bad, b"TESTMAG1").unwrap();
        assert!(matches!(
            r.verify_checksum(&bad),
            Err(Error::Checksum { .. })
        ));
        let mut r = ByteReader::open(&buf, b"TESTMAG1").unwrap();
        assert!(matches!(r.f64s(100, "x"), Err(Error::Truncated(_))));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, f64::MAX] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
