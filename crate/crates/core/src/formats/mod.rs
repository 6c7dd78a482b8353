//! Little-endian binary file formats. Every file starts with a 4-byte magic
//! and a `u16` version.
//!
//! | magic  | content                                              |
//! |--------|------------------------------------------------------|
//! | `LAMK` | frame size + per-frame element masks as canonical RLE |
//! | `LAFL` | `F-1` dense `(u, v)` f32 flow planes                  |
//! | `LATK` | point tracks, `(x, y, visible)` per frame             |
//! | `LATB` | text index + raw named arrays                         |

use std::io::{BufWriter, Write};
use std::path::Path;

use tempfile::NamedTempFile;

use crate::error::{Error, Result};

pub mod lafl;
pub mod lamk;
pub mod latb;
pub mod latk;

pub const VERSION: u16 = 1;

pub(crate) fn put_header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&VERSION.to_le_bytes());
}

/// Bounds-checked little-endian reader over a whole file.
pub(crate) struct Reader<'a> {
    format: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and positions after the header.
    pub(crate) fn open(format: &'static str, magic: &[u8; 4], buf: &'a [u8]) -> Result<Self> {
        let mut r = Reader { format, buf, pos: 0 };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if &found != magic {
            return Err(Error::BadMagic { format, found });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion { format, version });
        }
        Ok(r)
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::LengthMismatch {
                format: self.format,
                expected: self.pos as u64 + n as u64,
                found: self.buf.len() as u64,
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Ensures `n` more bytes exist before allocating for them.
    pub(crate) fn require(&self, n: u64) -> Result<()> {
        let need = self.pos as u64 + n;
        if need > self.buf.len() as u64 {
            return Err(Error::LengthMismatch {
                format: self.format,
                expected: need,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }

    pub(crate) fn remaining(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::LengthMismatch {
                format: self.format,
                expected: self.pos as u64,
                found: self.buf.len() as u64,
            });
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes via a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |w| w.write_all(bytes))
}

pub(crate) fn write_atomic_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<&mut NamedTempFile>) -> std::io::Result<()>,
) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::with_capacity(1 << 20, &mut tmp);
        body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
