//! Little-endian binary envelope shared by dataset and checkpoint files:
//! 4 magic bytes, a `u16` format version, a payload, and a CRC32 trailer
//! over everything before it.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvelopeError {
    #[error("expected {expected} v{expected_version}, found magic {found:?} v{found_version}")]
    FormatVersionMismatch {
        expected: String,
        expected_version: u16,
        found: [u8; 4],
        found_version: u16,
    },
    #[error("checksum mismatch (truncated or corrupted file)")]
    ChecksumMismatch,
    #[error("payload ended early")]
    UnexpectedEnd,
    #[error("malformed payload: {0}")]
    Malformed(String),
}

pub struct EnvelopeWriter {
    buf: Vec<u8>,
}

impl EnvelopeWriter {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::with_capacity(1 << 12);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// `u32` length prefix followed by the bytes.
    pub fn blob(&mut self, bytes: &[u8]) {
        self.u32(bytes.len() as u32);
        self.buf.extend_from_slice(bytes);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub struct EnvelopeReader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> EnvelopeReader<'a> {
    /// Validates magic and version first, then the checksum, so a file of the
    /// wrong kind is reported as such even when it is also damaged.
    pub fn open(bytes: &'a [u8], magic: &[u8; 4], version: u16) -> Result<Self, EnvelopeError> {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        let found_version = if bytes.len() >= 6 { u16::from_le_bytes([bytes[4], bytes[5]]) } else { 0 };
        if &found != magic || found_version != version {
            return Err(EnvelopeError::FormatVersionMismatch {
                expected: String::from_utf8_lossy(magic).into_owned(),
                expected_version: version,
                found,
                found_version,
            });
        }
        if bytes.len() < 10 {
            return Err(EnvelopeError::ChecksumMismatch);
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(EnvelopeError::ChecksumMismatch);
        }
        Ok(Self { body, pos: 6 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], EnvelopeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.body.len()).ok_or(EnvelopeError::UnexpectedEnd)?;
        let out = &self.body[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, EnvelopeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, EnvelopeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn i32(&mut self) -> Result<i32, EnvelopeError> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, EnvelopeError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, EnvelopeError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], EnvelopeError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.body.len()
    }

    pub fn expect_end(&self) -> Result<(), EnvelopeError> {
        if self.is_exhausted() {
            Ok(())
        } else {
            Err(EnvelopeError::Malformed(format!("{} trailing bytes", self.body.len() - self.pos)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut w = EnvelopeWriter::new(b"TEST", 3);
        w.u32(7);
        w.f64(-0.5);
        w.blob(b"hi");
        w.finish()
    }

    #[test]
    fn round_trip() {
        let bytes = sample();
        let mut r = EnvelopeReader::open(&bytes, b"TEST", 3).unwrap();
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.f64().unwrap(), -0.5);
        assert_eq!(r.blob().unwrap(), b"hi");
        r.expect_end().unwrap();
        assert_eq!(r.u8(), Err(EnvelopeError::UnexpectedEnd));
    }

    #[test]
    fn detects_damage() {
        let bytes = sample();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(EnvelopeReader::open(truncated, b"TEST", 3), Err(EnvelopeError::ChecksumMismatch)));
        let mut flipped = bytes.clone();
        flipped[8] ^= 1;
        assert!(matches!(EnvelopeReader::open(&flipped, b"TEST", 3), Err(EnvelopeError::ChecksumMismatch)));
        let mut renamed = bytes.clone();
        renamed[0] = b'X';
        assert!(matches!(
            EnvelopeReader::open(&renamed, b"TEST", 3),
            Err(EnvelopeError::FormatVersionMismatch { .. })
        ));
        assert!(matches!(
            EnvelopeReader::open(&bytes, b"TEST", 4),
            Err(EnvelopeError::FormatVersionMismatch { .. })
        ));
    }
}
