//! `LATB` tensor bundles: a UTF-8 text index followed by raw little-endian
//! array payloads laid out back to back in index order.
//!
//! ```text
//! "LATB" u16:version u32:index_len index[index_len] payload
//! ```
//!
//! Index lines:
//!
//! ```text
//! clip <clip_id>
//! meta <key> <value>
//! array <name> <dtype> <d0,d1,...> <offset> <nbytes>
//! ```

use std::fmt;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::{put_header, read_file, write_atomic_with, Reader, VERSION};

const MAGIC: &[u8; 4] = b"LATB";
const NAME: &str = "LATB";
const HEADER_LEN: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    U8,
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "u8" => DType::U8,
            "f32" => DType::F32,
            "f64" => DType::F64,
            _ => return None,
        })
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DType::U8 => "u8",
            DType::F32 => "f32",
            DType::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<u8>,
}

impl Array {
    pub fn u8(name: &str, shape: &[usize], data: Vec<u8>) -> Self {
        Array {
            name: name.to_string(),
            dtype: DType::U8,
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn f32(name: &str, shape: &[usize], values: &[f32]) -> Self {
        Array {
            name: name.to_string(),
            dtype: DType::F32,
            shape: shape.to_vec(),
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn f64(name: &str, shape: &[usize], values: &[f64]) -> Self {
        Array {
            name: name.to_string(),
            dtype: DType::F64,
            shape: shape.to_vec(),
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn as_f32(&self) -> Option<Vec<f32>> {
        (self.dtype == DType::F32)
            .then(|| self.data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn as_f64(&self) -> Option<Vec<f64>> {
        (self.dtype == DType::F64)
            .then(|| self.data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Bundle {
    pub clip_id: String,
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<Array>,
}

impl Bundle {
    pub fn array(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Index entry for one array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Index {
    pub clip_id: String,
    pub meta: Vec<(String, String)>,
    pub arrays: Vec<ArrayEntry>,
}

impl Index {
    pub fn entry(&self, name: &str) -> Option<&ArrayEntry> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn payload_len(&self) -> u64 {
        self.arrays.iter().map(|a| a.nbytes).sum()
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace())
}

fn render_index(bundle: &Bundle) -> Result<String> {
    let bad = |what: &str| Error::corrupt(NAME, format!("cannot encode {what}"));
    if !is_token(&bundle.clip_id) {
        return Err(bad("clip id with whitespace"));
    }
    let mut index = format!("clip {}\n", bundle.clip_id);
    for (k, v) in &bundle.meta {
        if !is_token(k) || v.contains('\n') || v.is_empty() {
            return Err(bad(&format!("meta entry {k:?}")));
        }
        index.push_str(&format!("meta {k} {v}\n"));
    }
    let mut offset = 0u64;
    for a in &bundle.arrays {
        if !is_token(&a.name) {
            return Err(bad(&format!("array name {:?}", a.name)));
        }
        if a.data.len() != a.element_count() * a.dtype.size() {
            return Err(bad(&format!("array {} whose data does not match its shape", a.name)));
        }
        let shape: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
        index.push_str(&format!(
            "array {} {} {} {} {}\n",
            a.name,
            a.dtype,
            shape.join(","),
            offset,
            a.data.len()
        ));
        offset += a.data.len() as u64;
    }
    Ok(index)
}

fn parse_index(text: &str) -> Result<Index> {
    let bad = |line: &str| Error::corrupt(NAME, format!("bad index line {line:?}"));
    let mut index = Index::default();
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| Error::corrupt(NAME, "empty index"))?;
    index.clip_id = first.strip_prefix("clip ").filter(|s| is_token(s)).ok_or_else(|| bad(first))?.to_string();
    let mut expected_offset = 0u64;
    for line in lines {
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').ok_or_else(|| bad(line))?;
            index.meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("array ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            let [name, dtype, shape, offset, nbytes] = parts[..] else {
                return Err(bad(line));
            };
            let dtype = DType::parse(dtype).ok_or_else(|| bad(line))?;
            let shape = if shape.is_empty() {
                Vec::new()
            } else {
                shape.split(',').map(|d| d.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad(line))?
            };
            let offset: u64 = offset.parse().map_err(|_| bad(line))?;
            let nbytes: u64 = nbytes.parse().map_err(|_| bad(line))?;
            let elements = shape.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if elements.and_then(|e| e.checked_mul(dtype.size() as u64)) != Some(nbytes) {
                return Err(Error::corrupt(NAME, format!("array {name}: shape does not match {nbytes} bytes")));
            }
            if offset != expected_offset {
                return Err(Error::corrupt(NAME, format!("array {name}: offset {offset}, expected {expected_offset}")));
            }
            expected_offset += nbytes;
            index.arrays.push(ArrayEntry {
                name: name.to_string(),
                dtype,
                shape,
                offset,
                nbytes,
            });
        } else {
            return Err(bad(line));
        }
    }
    Ok(index)
}

pub fn encode(bundle: &Bundle) -> Result<Vec<u8>> {
    let index = render_index(bundle)?;
    let payload: usize = bundle.arrays.iter().map(|a| a.data.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN as usize + index.len() + payload);
    put_header(&mut out, MAGIC);
    out.extend_from_slice(&(index.len() as u32).to_le_bytes());
    out.extend_from_slice(index.as_bytes());
    for a in &bundle.arrays {
        out.extend_from_slice(&a.data);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Bundle> {
    let mut r = Reader::open(NAME, MAGIC, bytes)?;
    let len = r.u32()? as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::corrupt(NAME, "index is not UTF-8"))?;
    let index = parse_index(text)?;
    let payload = r.remaining();
    if payload.len() as u64 != index.payload_len() {
        return Err(Error::LengthMismatch {
            format: NAME,
            expected: HEADER_LEN + len as u64 + index.payload_len(),
            found: bytes.len() as u64,
        });
    }
    let arrays = index
        .arrays
        .into_iter()
        .map(|e| Array {
            data: payload[e.offset as usize..(e.offset + e.nbytes) as usize].to_vec(),
            name: e.name,
            dtype: e.dtype,
            shape: e.shape,
        })
        .collect();
    Ok(Bundle {
        clip_id: index.clip_id,
        meta: index.meta,
        arrays,
    })
}

pub fn read(path: &Path) -> Result<Bundle> {
    decode(&read_file(path)?)
}

/// Streams the bundle to a temporary file in the target directory, then renames.
pub fn write(path: &Path, bundle: &Bundle) -> Result<()> {
    let index = render_index(bundle)?;
    write_atomic_with(path, |w| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(index.len() as u32).to_le_bytes())?;
        w.write_all(index.as_bytes())?;
        for a in &bundle.arrays {
            w.write_all(&a.data)?;
        }
        Ok(())
    })
}

/// Reads only the index of a bundle file, checking the total length.
pub fn read_index(path: &Path) -> Result<Index> {
    let io = |e| Error::io(path, e);
    let mut file = File::open(path).map_err(io)?;
    let total = file.metadata().map_err(io)?.len();
    let mut header = [0u8; HEADER_LEN as usize];
    let got = read_up_to(&mut file, &mut header).map_err(io)?;
    let mut r = Reader::open(NAME, MAGIC, &header[..got])?;
    let len = r.u32()? as u64;
    if HEADER_LEN + len > total {
        return Err(Error::LengthMismatch {
            format: NAME,
            expected: HEADER_LEN + len,
            found: total,
        });
    }
    let mut text = vec![0u8; len as usize];
    file.read_exact(&mut text).map_err(io)?;
    let text = String::from_utf8(text).map_err(|_| Error::corrupt(NAME, "index is not UTF-8"))?;
    let index = parse_index(&text)?;
    if HEADER_LEN + len + index.payload_len() != total {
        return Err(Error::LengthMismatch {
            format: NAME,
            expected: HEADER_LEN + len + index.payload_len(),
            found: total,
        });
    }
    Ok(index)
}

/// Reads one named array without loading the rest of the payload.
pub fn read_array(path: &Path, index: &Index, name: &str) -> Result<Option<Array>> {
    let Some(entry) = index.entry(name) else {
        return Ok(None);
    };
    let io = |e| Error::io(path, e);
    let mut file = File::open(path).map_err(io)?;
    let index_len = {
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header).map_err(io)?;
        u32::from_le_bytes(header[6..10].try_into().unwrap()) as u64
    };
    file.seek(SeekFrom::Start(HEADER_LEN + index_len + entry.offset)).map_err(io)?;
    let mut data = vec![0u8; entry.nbytes as usize];
    file.read_exact(&mut data).map_err(io)?;
    Ok(Some(Array {
        name: entry.name.clone(),
        dtype: entry.dtype,
        shape: entry.shape.clone(),
        data,
    }))
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match file.read(&mut buf[filled..])? {
            0 => break,
            n => filled += n,
        }
    }
    Ok(filled)
}
