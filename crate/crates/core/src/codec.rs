//! Little-endian byte helpers shared by the binary formats.

use crate::error::{Error, Result};
use num_complex::Complex64;

pub(crate) fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub(crate) fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        put_f64(out, v);
    }
}

pub(crate) fn put_plane(out: &mut Vec<u8>, plane: &[Complex64]) {
    for z in plane {
        put_f64(out, z.re);
        put_f64(out, z.im);
    }
}

pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        // bound the allocation by what is actually left
        if n.saturating_mul(8) > self.remaining() {
            return Err(Error::Format(format!("truncated input at byte {}", self.pos)));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub(crate) fn plane(&mut self, n: usize) -> Result<Vec<Complex64>> {
        if n.saturating_mul(16) > self.remaining() {
            return Err(Error::Format(format!("truncated input at byte {}", self.pos)));
        }
        (0..n).map(|_| Ok(Complex64::new(self.f64()?, self.f64()?))).collect()
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
