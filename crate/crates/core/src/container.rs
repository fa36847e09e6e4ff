//! Versioned little-endian binary containers.
//!
//! Every artifact starts with four magic bytes and a `u32` format version,
//! followed by a type-specific payload of fixed-width scalars and
//! length-prefixed arrays.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"CGDS";
pub const HASHREC_MAGIC: [u8; 4] = *b"CGHR";
pub const INDEX_MAGIC: [u8; 4] = *b"CGIX";
pub const RANKER_MAGIC: [u8; 4] = *b"CGRK";
pub const CANDIDATES_MAGIC: [u8; 4] = *b"CGCD";

pub struct Encoder<W: Write> {
    inner: W,
}

impl<W: Write> Encoder<W> {
    pub fn new(mut inner: W, magic: [u8; 4], version: u32) -> Result<Self> {
        inner.write_all(&magic)?;
        inner.write_all(&version.to_le_bytes())?;
        Ok(Encoder { inner })
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_all(&[v])?;
        Ok(())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        self.u64(v as u64)
    }

    pub fn u32s(&mut self, vs: &[u32]) -> Result<()> {
        self.usize(vs.len())?;
        for &v in vs {
            self.u32(v)?;
        }
        Ok(())
    }

    pub fn u64s(&mut self, vs: &[u64]) -> Result<()> {
        self.usize(vs.len())?;
        for &v in vs {
            self.u64(v)?;
        }
        Ok(())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        self.usize(vs.len())?;
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct Decoder<R: Read> {
    inner: R,
}

// Refuse absurd length prefixes instead of attempting huge allocations on
// corrupt input.
const MAX_ARRAY_LEN: usize = 1 << 36;

impl<R: Read> Decoder<R> {
    pub fn new(mut inner: R, magic: [u8; 4], version: u32) -> Result<Self> {
        let mut found = [0u8; 4];
        inner
            .read_exact(&mut found)
            .map_err(|_| Error::Format("truncated header".into()))?;
        if found != magic {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&found)
            )));
        }
        let mut decoder = Decoder { inner };
        let found_version = decoder.u32()?;
        if found_version != version {
            return Err(Error::Format(format!(
                "{} version {found_version} is not supported (expected {version})",
                String::from_utf8_lossy(&magic)
            )));
        }
        Ok(decoder)
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Format("unexpected end of file".into()))?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("length {v} overflows usize")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.usize()?;
        if n > MAX_ARRAY_LEN {
            return Err(Error::Format(format!("array length {n} is implausible")));
        }
        Ok(n)
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len()?;
        (0..n).map(|_| self.u64()).collect()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    /// Fails unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes after payload".into())),
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}
