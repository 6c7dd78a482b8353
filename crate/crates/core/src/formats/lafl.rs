//! `LAFL` flow files.
//!
//! ```text
//! "LAFL" u16:version u32:height u32:width u32:frame_count
//!   (frame_count-1) x height x width x { f32:u f32:v }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::formats::{put_header, read_file, write_atomic, Reader};
use crate::mask::ClipGeometry;
use crate::motion::FlowField;

const MAGIC: &[u8; 4] = b"LAFL";
const NAME: &str = "LAFL";

pub fn encode(flow: &FlowField) -> Vec<u8> {
    let g = flow.geometry();
    let mut out = Vec::with_capacity(18 + flow.data().len() * 4);
    put_header(&mut out, MAGIC);
    out.extend_from_slice(&g.height.to_le_bytes());
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&(g.frame_count as u32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader::open(NAME, MAGIC, bytes)?;
    let height = r.u32()?;
    let width = r.u32()?;
    let frames = r.u32()? as usize;
    let geometry = ClipGeometry::new(width, height, frames).map_err(|e| Error::corrupt(NAME, e.to_string()))?;
    let count = (frames - 1) * geometry.pixel_count() * 2;
    let payload = r.take(count * 4)?;
    r.finish()?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FlowField::new(geometry, data).map_err(|e| Error::corrupt(NAME, e.to_string()))
}

pub fn read(path: &Path) -> Result<FlowField> {
    decode(&read_file(path)?)
}

pub fn write(path: &Path, flow: &FlowField) -> Result<()> {
    write_atomic(path, &encode(flow))
}
