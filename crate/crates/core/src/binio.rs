//! Little-endian primitives shared by the tensor, model, and cache formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// A reader that tracks its byte offset so format errors can report where
/// they happened.
pub struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        OffsetReader { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn read_exact_ctx(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::format(
                self.offset,
                format!("unexpected end of input while reading {what}"),
            )),
            Err(e) => Err(e.into()),
        }
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_ctx(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact_ctx(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact_ctx(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Returns true if the underlying reader has no more bytes.
    pub fn at_eof(&mut self) -> Result<bool> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(true),
            _ => Err(Error::format(self.offset, "trailing bytes after payload")),
        }
    }
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}
