//! Little-endian artifact framing: every file starts with a 4-byte magic and a
//! u32 format version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{PsaError, Result};

pub(crate) struct BinWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl BinWriter {
    pub fn create(path: &Path, magic: &[u8; 4], version: u32) -> Result<Self> {
        let file = File::create(path).map_err(|e| PsaError::io(path, e))?;
        let mut w = BinWriter {
            path: path.to_path_buf(),
            inner: BufWriter::new(file),
        };
        w.bytes(magic)?;
        w.u32(version)?;
        Ok(w)
    }

    fn wrap(&self, e: std::io::Error) -> PsaError {
        PsaError::io(&self.path, e)
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b).map_err(|e| self.wrap(e))
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.inner.write_u8(v).map_err(|e| self.wrap(e))
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner
            .write_u32::<LittleEndian>(v)
            .map_err(|e| self.wrap(e))
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.inner
            .write_u64::<LittleEndian>(v)
            .map_err(|e| self.wrap(e))
    }

    pub fn f32(&mut self, v: f32) -> Result<()> {
        self.inner
            .write_f32::<LittleEndian>(v)
            .map_err(|e| self.wrap(e))
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner
            .write_f64::<LittleEndian>(v)
            .map_err(|e| self.wrap(e))
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }

    pub fn len32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n)
            .map_err(|_| PsaError::Format(format!("length {n} does not fit in u32")))?;
        self.u32(v)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| self.wrap(e))
    }
}

pub(crate) struct BinReader {
    path: PathBuf,
    inner: BufReader<File>,
}

impl BinReader {
    /// Opens `path`, checks the magic and returns the format version.
    pub fn open(path: &Path, magic: &[u8; 4], max_version: u32) -> Result<(Self, u32)> {
        let file = File::open(path).map_err(|e| PsaError::io(path, e))?;
        let mut r = BinReader {
            path: path.to_path_buf(),
            inner: BufReader::new(file),
        };
        let mut got = [0u8; 4];
        r.inner.read_exact(&mut got).map_err(|e| r.wrap(e))?;
        if &got != magic {
            return Err(PsaError::Format(format!(
                "{}: expected magic {:?}, found {:?}",
                path.display(),
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            )));
        }
        let version = r.u32()?;
        if version == 0 || version > max_version {
            return Err(PsaError::Format(format!(
                "{}: unsupported {} version {version}",
                path.display(),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok((r, version))
    }

    fn wrap(&self, e: std::io::Error) -> PsaError {
        PsaError::io(&self.path, e)
    }

    pub fn format_error(&self, msg: impl std::fmt::Display) -> PsaError {
        PsaError::Format(format!("{}: {msg}", self.path.display()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.inner.read_u8().map_err(|e| self.wrap(e))
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.inner
            .read_u32::<LittleEndian>()
            .map_err(|e| self.wrap(e))
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.inner
            .read_u64::<LittleEndian>()
            .map_err(|e| self.wrap(e))
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.inner
            .read_f64::<LittleEndian>()
            .map_err(|e| self.wrap(e))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        self.inner
            .read_f64_into::<LittleEndian>(&mut out)
            .map_err(|e| self.wrap(e))?;
        Ok(out)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut out = vec![0.0; n];
        self.inner
            .read_f32_into::<LittleEndian>(&mut out)
            .map_err(|e| self.wrap(e))?;
        Ok(out)
    }

    pub fn len32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.format_error("trailing bytes after payload")),
            Err(e) => Err(self.wrap(e)),
        }
    }
}
