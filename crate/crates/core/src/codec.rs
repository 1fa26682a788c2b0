//! Little-endian byte cursor shared by the bundle and index formats.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                format!("truncated payload: need {n} bytes, {} left", self.remaining()),
                self.offset(),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
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

    pub fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// UTF-8 string prefixed with a u32 length.
    pub fn string32(&mut self) -> Result<String> {
        let len = self.usize32()?;
        self.utf8(len)
    }

    /// UTF-8 string prefixed with a u8 length.
    pub fn string8(&mut self) -> Result<String> {
        let len = self.u8()? as usize;
        self.utf8(len)
    }

    fn utf8(&mut self, len: usize) -> Result<String> {
        let at = self.offset();
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format("identifier is not UTF-8", at))
    }

    /// Checks `count` elements of `width` bytes fit, without overflow.
    pub fn need(&self, count: usize, width: usize) -> Result<usize> {
        let bytes = count
            .checked_mul(width)
            .ok_or_else(|| Error::format("payload size overflows", self.offset()))?;
        if bytes > self.remaining() {
            return Err(Error::format(
                format!("truncated payload: need {bytes} bytes, {} left", self.remaining()),
                self.offset(),
            ));
        }
        Ok(bytes)
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_len32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Overflow(format!("length {v} exceeds u32")))?;
    put_u32(out, v);
    Ok(())
}

pub(crate) fn put_string32(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_len32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}
