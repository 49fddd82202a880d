//! Little-endian binary container helpers shared by the dataset, cache and
//! checkpoint formats. Every container starts with 4 magic bytes and a u16
//! version.

use std::path::Path;

use crate::error::{GapError, Result};

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: [u8; 4], version: u16) -> Writer {
        let mut buf = Vec::new();
        buf.extend_from_slice(&magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
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

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: impl IntoIterator<Item = f64>) {
        for v in vs {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and positions the reader after them.
    pub fn open(buf: &'a [u8], magic: [u8; 4], version: u16) -> Result<Reader<'a>> {
        let mut r = Reader { buf, pos: 0 };
        let found: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if found != magic {
            return Err(GapError::BadMagic {
                expected: magic,
                found,
            });
        }
        let v = r.u16("version")?;
        if v != version {
            return Err(GapError::VersionMismatch {
                expected: version,
                found: v,
            });
        }
        Ok(r)
    }

    pub fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(GapError::Truncated { section })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self, section: &'static str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    pub fn u16(&mut self, section: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    pub fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, section: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or(GapError::Truncated { section })?, section)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    /// Length prefix guarded against the remaining payload, so a corrupt
    /// count cannot trigger a huge allocation.
    pub fn count(&mut self, elem_size: usize, section: &'static str) -> Result<usize> {
        let n = self.u64(section)? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(GapError::Truncated { section });
        }
        Ok(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| GapError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| GapError::io(path, e))
}
