//! Shared little-endian binary I/O helpers for the on-disk formats.

use std::io::Write;

use crate::error::{CorruptKind, Error, Result};

/// Write adapter that feeds every byte through a CRC32 hasher.
pub(crate) struct CrcWriter<W: Write> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            hasher: crc32fast::Hasher::new(),
        }
    }

    pub fn write_all(&mut self, buf: &[u8]) -> Result<()> {
        self.hasher.update(buf);
        self.inner.write_all(buf)?;
        Ok(())
    }

    pub fn crc(&self) -> u32 {
        self.hasher.clone().finalize()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Bounds-checked reader over a byte slice. Overruns surface as the given
/// corruption constructor with [`CorruptKind::Truncated`].
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    corrupt: fn(CorruptKind) -> Error,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8], corrupt: fn(CorruptKind) -> Error) -> Self {
        Self {
            bytes,
            pos: 0,
            corrupt,
        }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn corrupt(&self, kind: CorruptKind) -> Error {
        (self.corrupt)(kind)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err((self.corrupt)(CorruptKind::Truncated));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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
}
