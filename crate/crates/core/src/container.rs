//! Little-endian binary containers shared by every on-disk artifact.
//!
//! Each container starts with a four-byte magic (`DSCF`, `DSCS`, `DSCT`,
//! `DSCM`) followed by fixed-width integers and raw `f64` arrays.

use std::io::{Read, Write};

use crate::error::{DscError, Result};

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 4]) -> Result<Self> {
        inner.write_all(magic)?;
        Ok(BinWriter { inner })
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| DscError::Format(format!("{v} does not fit in u32")))?;
        self.u32(v)
    }

    pub fn i32(&mut self, v: i32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    /// Length-prefixed `f64` array.
    pub fn f64_array(&mut self, vs: &[f64]) -> Result<()> {
        self.usize(vs.len())?;
        self.f64s(vs)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

impl<R: Read> BinReader<R> {
    pub fn new(mut inner: R, magic: &[u8; 4]) -> Result<Self> {
        let mut got = [0u8; 4];
        inner.read_exact(&mut got).map_err(|e| DscError::Format(format!("missing magic: {e}")))?;
        if &got != magic {
            return Err(DscError::Format(format!(
                "bad magic: expected {:?}, got {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            )));
        }
        Ok(BinReader { inner })
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| DscError::Format(format!("truncated container: {e}")))?;
        Ok(buf)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn f64_array(&mut self) -> Result<Vec<f64>> {
        let n = self.usize()?;
        self.f64s(n)
    }

    /// Errors unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(DscError::Format("trailing bytes after container".into())),
        }
    }
}
