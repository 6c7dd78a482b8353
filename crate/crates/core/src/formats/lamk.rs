//! `LAMK` mask files.
//!
//! ```text
//! "LAMK" u16:version u32:height u32:width u32:set_count
//!   set_count x { u32:frame_index u32:entry_count
//!     entry_count x { u32:element_id u32:run_count run_count x u32:run } }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::{put_header, read_file, write_atomic, Reader};
use crate::mask::{ElementId, FrameSize, MaskSet, PixelMask};

const MAGIC: &[u8; 4] = b"LAMK";
const NAME: &str = "LAMK";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFile {
    pub size: FrameSize,
    pub sets: Vec<MaskSet>,
}

pub fn encode(file: &MaskFile) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    put_header(&mut out, MAGIC);
    out.extend_from_slice(&file.size.height.to_le_bytes());
    out.extend_from_slice(&file.size.width.to_le_bytes());
    out.extend_from_slice(&(file.sets.len() as u32).to_le_bytes());
    for set in &file.sets {
        file.size.check(set.size())?;
        out.extend_from_slice(&(set.frame_index() as u32).to_le_bytes());
        out.extend_from_slice(&(set.len() as u32).to_le_bytes());
        for (id, mask) in set.entries() {
            out.extend_from_slice(&id.0.to_le_bytes());
            out.extend_from_slice(&(mask.runs().len() as u32).to_le_bytes());
            for r in mask.runs() {
                out.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<MaskFile> {
    let mut r = Reader::open(NAME, MAGIC, bytes)?;
    let height = r.u32()?;
    let width = r.u32()?;
    let size = FrameSize::new(width, height).map_err(|e| Error::corrupt(NAME, e.to_string()))?;
    let set_count = r.u32()?;
    let mut sets = Vec::new();
    for _ in 0..set_count {
        let frame = r.u32()? as usize;
        let entry_count = r.u32()?;
        let mut entries = Vec::new();
        for _ in 0..entry_count {
            let id = ElementId(r.u32()?);
            let run_count = r.u32()?;
            r.require(run_count as u64 * 4)?;
            let runs = (0..run_count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let mask = PixelMask::from_runs(size, runs).map_err(|e| Error::corrupt(NAME, e.to_string()))?;
            entries.push((id, mask));
        }
        sets.push(MaskSet::new(frame, size, entries).map_err(|e| Error::corrupt(NAME, e.to_string()))?);
    }
    r.finish()?;
    Ok(MaskFile { size, sets })
}

pub fn read(path: &Path) -> Result<MaskFile> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, file: &MaskFile) -> Result<()> {
    write_atomic(path, &encode(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MaskFile {
        let size = FrameSize::new(5, 3).unwrap();
        let a = PixelMask::from_fn(size, |x, y| x > y);
        let b = PixelMask::full(size);
        MaskFile {
            size,
            sets: vec![
                MaskSet::new(0, size, vec![(ElementId(3), a), (ElementId(7), b)]).unwrap(),
                MaskSet::empty(4, size),
            ],
        }
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = encode(&f).unwrap();
        assert_eq!(&bytes[..4], b"LAMK");
        assert_eq!(decode(&bytes).unwrap(), f);
    }

    #[test]
    fn header_and_length_errors_are_distinct() {
        let bytes = encode(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedVersion { version: 9, .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::LengthMismatch { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn non_canonical_runs_rejected() {
        let mut bytes = encode(&sample()).unwrap();
        // first entry's first run: header(6) + h,w,count(12) + frame,entries(8) + id,run_count(8)
        bytes[34..38].copy_from_slice(&100u32.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Corrupt { .. })));
    }
}
