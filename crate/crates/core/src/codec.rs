//! Little-endian binary helpers for the parameter and checkpoint files.

use std::io::{self, Read, Write};

use crate::linalg::Matrix;

pub(crate) fn bad_data(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Writer { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, values: &[f64]) -> io::Result<()> {
        for v in values {
            self.f64(*v)?;
        }
        Ok(())
    }

    /// `rows: u64, cols: u64`, then row-major `f64` data.
    pub fn matrix(&mut self, m: &Matrix) -> io::Result<()> {
        self.u64(m.rows() as u64)?;
        self.u64(m.cols() as u64)?;
        self.f64s(m.as_slice())
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Reader { inner }
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> io::Result<()> {
        let mut buf = vec![0u8; magic.len()];
        self.inner.read_exact(&mut buf)?;
        if buf != magic {
            return Err(bad_data(format!("bad magic {:?}", String::from_utf8_lossy(&buf))));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> io::Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn usize(&mut self) -> io::Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| bad_data("dimension overflows usize"))
    }

    pub fn f64(&mut self) -> io::Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn matrix(&mut self) -> io::Result<Matrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let len = rows.checked_mul(cols).ok_or_else(|| bad_data("matrix size overflow"))?;
        if len > 1 << 32 {
            return Err(bad_data(format!("implausible matrix size {rows}x{cols}")));
        }
        let data = self.f64s(len)?;
        Matrix::from_vec(rows, cols, data).map_err(|e| bad_data(e.to_string()))
    }
}
