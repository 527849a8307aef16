//! Little-endian binary container primitives shared by the dataset, bank and
//! model files. Readers track their byte offset so malformed input is
//! reported with the position where decoding failed.

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut e = Self::default();
        e.buf.extend_from_slice(magic);
        e.u32(version);
        e
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

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::precondition(format!("{n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    /// Checks magic and returns the decoder positioned after the version,
    /// together with the version.
    pub fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<(Self, u32)> {
        let mut d = Self { buf, pos: 0 };
        let found = d.take(4)?;
        if found != magic {
            return Err(Error::Malformed {
                offset: 0,
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let version = d.u32()?;
        Ok((d, version))
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.malformed(format!(
                "unexpected end of file: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(Error::Malformed {
                offset: at as u64,
                reason: "non-finite value".into(),
            });
        }
        Ok(v)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if (self.buf.len() - self.pos) / 8 < n {
            return Err(self.malformed(format!("unexpected end of file: need {n} values")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_reports_offset() {
        let mut e = Encoder::new(b"TEST", 1);
        e.u64(7);
        let bytes = e.finish();
        let (mut d, v) = Decoder::open(&bytes[..10], b"TEST").unwrap();
        assert_eq!(v, 1);
        match d.u64().unwrap_err() {
            Error::Malformed { offset, .. } => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_magic() {
        let bytes = Encoder::new(b"AAAA", 1).finish();
        assert!(Decoder::open(&bytes, b"BBBB").is_err());
    }
}
