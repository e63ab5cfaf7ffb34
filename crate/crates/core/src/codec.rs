//! Little-endian helpers shared by the binary formats.

use crate::error::{Error, Result};
use crate::ring::mask;

pub(crate) fn width(bits: u32) -> usize {
    bits.div_ceil(8) as usize
}

pub(crate) fn put_uint(buf: &mut Vec<u8>, v: u64, w: usize) {
    buf.extend_from_slice(&v.to_le_bytes()[..w]);
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated payload: need {end} bytes, have {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn uint(&mut self, w: usize) -> Result<u64> {
        let mut b = [0u8; 8];
        b[..w].copy_from_slice(self.take(w)?);
        Ok(u64::from_le_bytes(b))
    }

    pub(crate) fn masked(&mut self, w: usize, bits: u32) -> Result<u64> {
        let v = self.uint(w)?;
        if v & !mask(bits) != 0 {
            return Err(Error::MalformedKey(format!(
                "value {v:#x} exceeds {bits} bits"
            )));
        }
        Ok(v)
    }

    pub(crate) fn u128(&mut self) -> Result<u128> {
        let mut b = [0u8; 16];
        b.copy_from_slice(self.take(16)?);
        Ok(u128::from_le_bytes(b))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes in payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
