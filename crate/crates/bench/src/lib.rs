//! Inputs shared by the kernel benchmarks.

use layerkit::control::{Track, TrackPoint};
use layerkit::segment::Masklet;
use layerkit::{ClipGeometry, ElementId, FrameSize, PixelMask};

pub fn geometry() -> ClipGeometry {
    ClipGeometry::new(512, 320, 16).expect("valid geometry")
}

/// Disc of radius `r` centred at `(cx, cy)`.
pub fn disc(size: FrameSize, cx: i64, cy: i64, r: i64) -> PixelMask {
    PixelMask::from_fn(size, |x, y| {
        let (dx, dy) = (x as i64 - cx, y as i64 - cy);
        dx * dx + dy * dy <= r * r
    })
}

/// `count` masklets with scores spread over `[0, 30)`.
pub fn masklets(count: usize) -> (Vec<Masklet>, Vec<f64>) {
    let g = ClipGeometry::new(64, 64, 2).expect("valid geometry");
    let size = g.frame_size();
    let masklets = (0..count)
        .map(|i| {
            let m = PixelMask::from_fn(size, |x, y| (y as usize * 64 + x as usize) % count == i);
            Masklet::new(ElementId(i as u32), 0, vec![m.clone(), m]).expect("valid masklet")
        })
        .collect();
    let scores = (0..count).map(|i| (i * 7919 % 300) as f64 / 10.0).collect();
    (masklets, scores)
}

/// Tracks moving diagonally across the frame.
pub fn tracks(g: ClipGeometry, count: usize) -> Vec<Track> {
    (0..count)
        .map(|i| Track {
            id: i as u32,
            points: (0..g.frame_count)
                .map(|t| TrackPoint {
                    x: (20 + i * 37 % 400 + t * 4) as f32 + 0.5,
                    y: (20 + i * 53 % 250 + t * 2) as f32 + 0.5,
                    visible: true,
                })
                .collect(),
        })
        .collect()
}
