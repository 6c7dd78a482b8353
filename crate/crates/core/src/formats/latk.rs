//! `LATK` track files.
//!
//! ```text
//! "LATK" u16:version u32:track_count u32:frame_count
//!   track_count x { u32:id frame_count x { f32:x f32:y u8:visible } }
//! ```

use std::path::Path;

use crate::control::{Track, TrackPoint};
use crate::error::{Error, Result};
use crate::formats::{put_header, read_file, write_atomic, Reader};

const MAGIC: &[u8; 4] = b"LATK";
const NAME: &str = "LATK";

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub frame_count: usize,
    pub tracks: Vec<Track>,
}

pub fn encode(file: &TrackFile) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + file.tracks.len() * (4 + file.frame_count * 9));
    put_header(&mut out, MAGIC);
    out.extend_from_slice(&(file.tracks.len() as u32).to_le_bytes());
    out.extend_from_slice(&(file.frame_count as u32).to_le_bytes());
    for t in &file.tracks {
        if t.points.len() != file.frame_count {
            return Err(Error::TrackMismatch(format!(
                "track {} has {} points, file declares {}",
                t.id,
                t.points.len(),
                file.frame_count
            )));
        }
        out.extend_from_slice(&t.id.to_le_bytes());
        for p in &t.points {
            out.extend_from_slice(&p.x.to_le_bytes());
            out.extend_from_slice(&p.y.to_le_bytes());
            out.push(p.visible as u8);
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<TrackFile> {
    let mut r = Reader::open(NAME, MAGIC, bytes)?;
    let count = r.u32()? as u64;
    let frame_count = r.u32()? as usize;
    r.require(count * (4 + frame_count as u64 * 9))?;
    let mut tracks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = r.u32()?;
        let mut points = Vec::with_capacity(frame_count);
        for _ in 0..frame_count {
            let x = r.f32()?;
            let y = r.f32()?;
            let visible = match r.u8()? {
                0 => false,
                1 => true,
                v => return Err(Error::corrupt(NAME, format!("track {id}: visibility byte {v}"))),
            };
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::corrupt(NAME, format!("track {id}: non-finite coordinate")));
            }
            points.push(TrackPoint { x, y, visible });
        }
        tracks.push(Track { id, points });
    }
    r.finish()?;
    Ok(TrackFile { frame_count, tracks })
}

pub fn read(path: &Path) -> Result<TrackFile> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, file: &TrackFile) -> Result<()> {
    write_atomic(path, &encode(file)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let file = TrackFile {
            frame_count: 2,
            tracks: vec![Track {
                id: 11,
                points: vec![
                    TrackPoint { x: 1.5, y: 2.25, visible: true },
                    TrackPoint { x: 3.0, y: 0.0, visible: false },
                ],
            }],
        };
        let bytes = encode(&file).unwrap();
        assert_eq!(decode(&bytes).unwrap(), file);
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(decode(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::UnsupportedVersion { .. })));
        assert!(matches!(decode(&bytes[..bytes.len() - 2]), Err(Error::LengthMismatch { .. })));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] = 7;
        assert!(matches!(decode(&bad), Err(Error::Corrupt { .. })));
    }
}
