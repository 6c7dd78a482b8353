//! Acceptance criteria, one pass/fail line each. Runs without the test harness
//! so the lines are always printed.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use layerkit::assign::Mode;
use layerkit::config::{PipelineConfig, Resolution};
use layerkit::control::{filter_tracks, rasterize_trajectories, Track, TrackPoint};
use layerkit::formats::latb::{Array, Bundle};
use layerkit::formats::{lafl, lamk, latb, latk};
use layerkit::manifest::Manifest;
use layerkit::motion::{hierarchical_merge, normalize_score, raw_motion_score, FlowField, MergeConfig};
use layerkit::pipeline::process_clip;
use layerkit::sampler::{sample_controls, sample_controls_for, Availability, SamplerConfig};
use layerkit::segment::{curate_masklets, CurateParams, Masklet};
use layerkit::synth::{generate_scene, SceneSpec};
use layerkit::{ClipGeometry, ElementId, Error, FrameSize, MaskSet, PixelMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- merging

/// All-pairs greedy agglomeration: closest pair first, ties to the lowest
/// pair of smallest ids, stop once at most `n` clusters remain and all differ
/// by more than `eta_s`.
fn merge_oracle(scores: &[f64], n: usize, eta_s: f64) -> Vec<(Vec<u32>, f64)> {
    let mean = |c: &[u32]| c.iter().map(|&i| scores[i as usize]).sum::<f64>() / c.len() as f64;
    let mut clusters: Vec<Vec<u32>> = (0..scores.len() as u32).map(|i| vec![i]).collect();
    while clusters.len() >= 2 {
        let mut best: Option<(f64, (u32, u32), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = (mean(&clusters[a]) - mean(&clusters[b])).abs();
                let (x, y) = (clusters[a][0], clusters[b][0]);
                let key = (x.min(y), x.max(y));
                if best.is_none_or(|(bd, bk, _, _)| d < bd || (d == bd && key < bk)) {
                    best = Some((d, key, a, b));
                }
            }
        }
        let (d, _, a, b) = best.unwrap();
        if clusters.len() <= n && d > eta_s {
            break;
        }
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort();
    }
    let mut out: Vec<_> = clusters
        .into_iter()
        .map(|c| {
            let s = mean(&c);
            (c, s)
        })
        .collect();
    out.sort_by_key(|(c, _)| c[0]);
    out
}

fn pixel_masklets(n: usize) -> Vec<Masklet> {
    let size = FrameSize::new(8, 1).unwrap();
    (0..n)
        .map(|i| {
            let m = PixelMask::from_fn(size, |x, _| x as usize == i);
            Masklet::new(ElementId(i as u32), 0, vec![m.clone(), m]).unwrap()
        })
        .collect()
}

fn mhm_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = MergeConfig::default();
    let mut merged_total = 0;
    for case in 0..200 {
        let count = rng.random_range(1..=8);
        let scores: Vec<f64> = (0..count)
            .map(|_| {
                if case % 2 == 0 {
                    rng.random_range(0.0..30.0)
                } else {
                    rng.random_range(0..12) as f64 * 0.5
                }
            })
            .collect();
        let layers = hierarchical_merge(&pixel_masklets(count), &scores, &cfg).map_err(e2s)?;
        let got: Vec<(Vec<u32>, f64)> = layers
            .iter()
            .map(|l| (l.members.iter().map(|e| e.0).collect(), l.score.raw))
            .collect();
        let want = merge_oracle(&scores, cfg.capacity, cfg.eta_s);
        ensure(got == want, || format!("case {case}: {scores:?} gave {got:?}, oracle {want:?}"))?;
        merged_total += count - got.len();
    }
    let layers = hierarchical_merge(&pixel_masklets(5), &[0.05, 0.12, 4.8, 5.3, 20.0], &cfg).map_err(e2s)?;
    let got: Vec<f64> = layers.iter().map(|l| l.score.raw).collect();
    ensure(got.len() == 3, || format!("worked example gave {} layers", got.len()))?;
    for (g, w) in got.iter().zip([0.085, 5.05, 20.0]) {
        ensure((g - w).abs() <= 1e-12, || format!("worked example score {g} vs {w}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("200 instances exact ({merged_total} merges), worked example {got:?}, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- synthetic recovery

fn synthetic_recovery() -> Outcome {
    let start = Instant::now();
    let g = ClipGeometry::new(512, 320, 16).unwrap();
    let mut appearing_checked = 0;
    let mut splits_seen = std::collections::BTreeSet::new();
    for i in 0..50u64 {
        let layer_count = 2 + i as usize % 3;
        let appearing = i % 5 == 4;
        let spec = SceneSpec::random(g, layer_count, appearing, 7_000 + i).map_err(e2s)?;
        splits_seen.extend(spec.objects.iter().map(|o| o.splits));
        let gt = generate_scene(&spec).map_err(e2s)?;
        let curation = curate_masklets(g, &gt.segmenter(), &gt.pool().map_err(e2s)?, CurateParams::default())
            .map_err(e2s)?;
        let scores = curation
            .masklets
            .iter()
            .map(|m| raw_motion_score(m, &gt.flow))
            .collect::<Result<Vec<_>, _>>()
            .map_err(e2s)?;
        let layers = hierarchical_merge(&curation.masklets, &scores, &MergeConfig::default()).map_err(e2s)?;
        ensure(layers.len() == layer_count, || {
            format!("scene {i}: {} layers, expected {layer_count}", layers.len())
        })?;
        let mut used = vec![false; gt.layers.len()];
        for layer in &layers {
            let idx = (0..gt.layers.len())
                .find(|&k| !used[k] && gt.union_masks(&gt.layers[k].members) == layer.masks)
                .ok_or_else(|| format!("scene {i}: layer {} matches no true layer pixel-exactly", layer.layer_id))?;
            used[idx] = true;
            let truth = gt.layers[idx].raw_score;
            ensure((layer.score.raw - truth).abs() <= 1e-9, || {
                format!("scene {i}: score {} vs analytic {truth}", layer.score.raw)
            })?;
        }
        if appearing {
            let late = spec.objects.last().unwrap();
            let firsts: Vec<usize> = curation
                .masklets
                .iter()
                .filter(|m| m.first_appearance() == late.appears_at)
                .map(|m| m.first_appearance())
                .collect();
            ensure(firsts.len() == late.splits as usize, || {
                format!("scene {i}: {} masklets start at frame {}, expected {}", firsts.len(), late.appears_at, late.splits)
            })?;
            appearing_checked += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "50 scenes exact, splits {:?}, {appearing_checked} appearing cases, {elapsed:.2?}",
        splits_seen
    ))
}

// ---------------------------------------------------------------- motion scoring

/// Mean magnitude over every (frame, pixel) in the masklet on flow frames, by enumeration.
fn score_oracle(m: &Masklet, flow: &FlowField) -> f64 {
    let g = flow.geometry();
    let (mut sum, mut count) = (0.0f64, 0u64);
    for t in 0..g.frame_count - 1 {
        for y in 0..g.height {
            for x in 0..g.width {
                if m.mask(t).get(x, y) {
                    let (u, v) = flow.get(t, x, y);
                    sum += ((u as f64).powi(2) + (v as f64).powi(2)).sqrt();
                    count += 1;
                }
            }
        }
    }
    sum / count as f64
}

fn motion_scoring() -> Outcome {
    let g = ClipGeometry::new(8, 4, 4).unwrap();
    let size = g.frame_size();
    let blob = PixelMask::from_fn(size, |x, y| x >= 2 && y >= 1);
    let m = Masklet::new(ElementId(0), 0, vec![blob; 4]).map_err(e2s)?;
    let mut constant = FlowField::zeros(g);
    for t in 0..3 {
        for pair in constant.plane_mut(t).chunks_exact_mut(2) {
            pair.copy_from_slice(&[3.0, 4.0]);
        }
    }
    let s = raw_motion_score(&m, &constant).map_err(e2s)?;
    ensure(s == 5.0, || format!("constant (3,4) gave {s}"))?;

    let g3 = ClipGeometry::new(4, 4, 3).unwrap();
    let s3 = g3.frame_size();
    let masks = vec![
        PixelMask::from_fn(s3, |x, y| y == 0 && x < 2),
        PixelMask::from_fn(s3, |x, y| y >= 2 && x < 3),
        PixelMask::empty(s3),
    ];
    let mixed = Masklet::new(ElementId(1), 0, masks).map_err(e2s)?;
    let mut flow = FlowField::zeros(g3);
    for pair in flow.plane_mut(0).chunks_exact_mut(2) {
        pair.copy_from_slice(&[2.0, 0.0]);
    }
    for pair in flow.plane_mut(1).chunks_exact_mut(2) {
        pair.copy_from_slice(&[0.0, -6.0]);
    }
    let weighted = raw_motion_score(&mixed, &flow).map_err(e2s)?;
    let oracle = score_oracle(&mixed, &flow);
    ensure(weighted == 5.0 && oracle == 5.0, || format!("weighted {weighted}, oracle {oracle}"))?;

    let norms = [normalize_score(30.0, 30.0), normalize_score(45.0, 30.0), normalize_score(15.0, 30.0)];
    ensure(norms == [1.0, 1.0, 0.5], || format!("normalize gave {norms:?}"))?;
    Ok(format!("constant {s}, weighted {weighted} (oracle {oracle}), normalize {norms:?}"))
}

// ---------------------------------------------------------------- assignment tensors

fn write_scene(root: &Path, id: &str, layers: usize, seed: u64) -> Result<Manifest, String> {
    let g = ClipGeometry::new(512, 320, 16).unwrap();
    let spec = SceneSpec::random(g, layers, false, seed).map_err(e2s)?;
    let gt = generate_scene(&spec).map_err(e2s)?;
    let entry = gt.write_clip(root, id, 24.0).map_err(e2s)?;
    Manifest::new(root, vec![entry]).map_err(e2s)
}

fn frame(a: &Array, per: usize, slot: usize, t: usize) -> &[u8] {
    &a.data[(slot * 16 + t) * per..(slot * 16 + t + 1) * per]
}

fn assignment_tensors() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let manifest = write_scene(dir.path(), "assign", 3, 11)?;
    let cfg = PipelineConfig {
        mode: Mode::I2v,
        ..PipelineConfig::default()
    };
    let (bundle, _) = process_clip(&manifest, &manifest.clips[0], &cfg).map_err(e2s)?;
    let masks = bundle.array("layer_masks").ok_or("no layer_masks")?;
    let regions = bundle.array("layer_regions").ok_or("no layer_regions")?;
    ensure(masks.shape == [4, 16, 1, 320, 512], || format!("mask shape {:?}", masks.shape))?;
    ensure(regions.shape == [4, 16, 3, 320, 512], || format!("region shape {:?}", regions.shape))?;
    let validity = &bundle.array("validity").ok_or("no validity")?.data;
    let classes = &bundle.array("motion_class").ok_or("no motion_class")?.data;

    let (mn, rn) = (320 * 512, 3 * 320 * 512);
    let (mut statics, mut dynamics, mut padded) = (0, 0, 0);
    for slot in 0..4 {
        match (validity[slot], classes[slot]) {
            (1, 0) => {
                statics += 1;
                for t in 1..16 {
                    ensure(
                        frame(masks, mn, slot, t) == frame(masks, mn, slot, 0)
                            && frame(regions, rn, slot, t) == frame(regions, rn, slot, 0),
                        || format!("static slot {slot} frame {t} differs from reference"),
                    )?;
                }
                ensure(frame(masks, mn, slot, 0).iter().any(|&v| v != 0), || "static slot is empty".into())?;
            }
            (1, 1) => {
                dynamics += 1;
                for t in 1..16 {
                    ensure(
                        frame(masks, mn, slot, t).iter().all(|&v| v == 0)
                            && frame(regions, rn, slot, t).iter().all(|&v| v == 0),
                        || format!("dynamic slot {slot} frame {t} is not zero"),
                    )?;
                }
            }
            (0, _) => {
                padded += 1;
                for t in 0..16 {
                    ensure(
                        frame(masks, mn, slot, t).iter().all(|&v| v == 0)
                            && frame(regions, rn, slot, t).iter().all(|&v| v == 0),
                        || format!("padded slot {slot} is not zero"),
                    )?;
                }
            }
            other => return Err(format!("slot {slot}: unexpected validity/class {other:?}")),
        }
    }
    ensure((statics, dynamics, padded) == (1, 2, 1), || {
        format!("slots static/dynamic/padded = {statics}/{dynamics}/{padded}")
    })?;
    Ok(format!(
        "shapes {:?} and {:?}; {statics} static, {dynamics} dynamic, {padded} padded slot(s) checked",
        masks.shape, regions.shape
    ))
}

// ---------------------------------------------------------------- trajectories

fn track(id: u32, f: usize, at: impl Fn(usize) -> (f32, f32)) -> Track {
    Track {
        id,
        points: (0..f)
            .map(|t| {
                let (x, y) = at(t);
                TrackPoint { x, y, visible: true }
            })
            .collect(),
    }
}

fn trajectory_filter_and_encoding() -> Outcome {
    let g = ClipGeometry::new(32, 16, 16).unwrap();
    let size = g.frame_size();
    let left = Masklet::new(ElementId(0), 0, vec![PixelMask::from_fn(size, |x, _| x < 16); 16]).map_err(e2s)?;
    let right = Masklet::new(ElementId(1), 0, vec![PixelMask::from_fn(size, |x, _| x >= 16); 16]).map_err(e2s)?;
    let inside_for = |id, frames: usize| track(id, 16, move |t| if t < frames { (4.5, 8.5) } else { (20.5, 8.5) });
    let filtered = filter_tracks(g, &[inside_for(1, 12), inside_for(2, 14)], &[left, right], 0.8).map_err(e2s)?;
    let kept: Vec<u32> = filtered.kept.values().flatten().map(|t| t.id).collect();
    ensure(kept == [2] && filtered.dropped == 1, || format!("kept {kept:?}, dropped {}", filtered.dropped))?;

    let wide = ClipGeometry::new(512, 64, 16).unwrap();
    let mover = track(0, 16, |t| (40.5 + 8.0 * t as f32, 30.5));
    let map = rasterize_trajectories(wide, &[mover.clone()], 5.0).map_err(e2s)?;
    let expected_dx = 8.0 / 512.0;
    for t in 0..16 {
        let (x, y) = (40 + 8 * t as u32, 30);
        let peak = map.get(t, 0, x, y);
        ensure(peak == 1.0, || format!("heatmap at track pixel, frame {t}: {peak}"))?;
        let dx = map.get(t, 1, x, y) as f64;
        let want = if t < 15 { expected_dx } else { 0.0 };
        ensure((dx - want).abs() <= 1e-9, || format!("offset-x frame {t}: {dx} vs {want}"))?;
    }
    let max = map.data().iter().step_by(1).fold(f32::MIN, |a, &b| a.max(b));
    ensure(max <= 1.0, || format!("heatmap exceeds 1: {max}"))?;

    let still = track(1, 16, |_| (100.5, 50.5));
    let map = rasterize_trajectories(ClipGeometry::new(512, 320, 16).unwrap(), &[still], 5.0).map_err(e2s)?;
    let n = 512 * 320;
    for t in 0..16 {
        ensure(map.get(t, 0, 100, 50) == 1.0, || format!("static heatmap frame {t}"))?;
        let offsets = &map.data()[(t * 3 + 1) * n..(t * 3 + 3) * n];
        ensure(offsets.iter().all(|&v| v == 0.0), || format!("static offsets nonzero at frame {t}"))?;
    }
    Ok(format!("12/16 dropped, 14/16 kept, peak 1.0, offset-x {expected_dx}, static offsets zero"))
}

// ---------------------------------------------------------------- sampler

fn sampler_statistics() -> Outcome {
    const DRAWS: usize = 10_000;
    let expected = [0.10, 0.18, 0.36, 0.36];
    let cfg = SamplerConfig {
        seed: 31,
        ..SamplerConfig::default()
    };
    let mut counts = [0u64; 4];
    for i in 0..DRAWS {
        let a = sample_controls_for(&format!("clip{i}"), &[Availability::ALL], 1, &cfg).map_err(e2s)?;
        counts[a.slots[0].kind.code() as usize] += 1;
    }
    let mut chi2 = 0.0;
    for (k, &p) in expected.iter().enumerate() {
        let mean = DRAWS as f64 * p;
        let sd = (DRAWS as f64 * p * (1.0 - p)).sqrt();
        ensure((counts[k] as f64 - mean).abs() <= 3.0 * sd, || {
            format!("category {k}: {} vs {mean} +- {:.1}", counts[k], 3.0 * sd)
        })?;
        chi2 += (counts[k] as f64 - mean).powi(2) / mean;
    }
    let p_value = 1.0 - ChiSquared::new(3.0).map_err(e2s)?.cdf(chi2);
    let a = serde_json::to_vec(&sample_controls(4, &cfg).map_err(e2s)?).map_err(e2s)?;
    let b = serde_json::to_vec(&sample_controls(4, &cfg).map_err(e2s)?).map_err(e2s)?;
    ensure(a == b, || "same seed gave different assignments".into())?;
    Ok(format!("counts {counts:?} (dropped/score/trajectory/sketch), chi2 p={p_value:.3}, reproducible"))
}

// ---------------------------------------------------------------- formats

fn random_mask_file(rng: &mut ChaCha8Rng) -> lamk::MaskFile {
    let size = FrameSize::new(rng.random_range(1..24), rng.random_range(1..16)).unwrap();
    let sets = (0..rng.random_range(0..5))
        .map(|t| {
            let mut ids: Vec<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..100)).collect();
            ids.sort();
            ids.dedup();
            let p: f64 = rng.random();
            let entries = ids
                .into_iter()
                .map(|id| (ElementId(id), PixelMask::from_fn(size, |_, _| rng.random_bool(p))))
                .collect();
            MaskSet::new(t, size, entries).unwrap()
        })
        .collect();
    lamk::MaskFile { size, sets }
}

fn random_flow(rng: &mut ChaCha8Rng) -> FlowField {
    let g = ClipGeometry::new(rng.random_range(1..16), rng.random_range(1..12), rng.random_range(2..6)).unwrap();
    let len = (g.frame_count - 1) * g.pixel_count() * 2;
    FlowField::new(g, (0..len).map(|_| rng.random_range(-40.0f32..40.0)).collect()).unwrap()
}

fn random_tracks(rng: &mut ChaCha8Rng) -> latk::TrackFile {
    let f = rng.random_range(1..20);
    let tracks = (0..rng.random_range(0..10))
        .map(|i| Track {
            id: i * 3 + rng.random_range(0..3),
            points: (0..f)
                .map(|_| TrackPoint {
                    x: rng.random_range(-5.0f32..520.0),
                    y: rng.random_range(-5.0f32..330.0),
                    visible: rng.random_bool(0.8),
                })
                .collect(),
        })
        .collect();
    latk::TrackFile { frame_count: f, tracks }
}

fn random_bundle(rng: &mut ChaCha8Rng, i: usize) -> Bundle {
    let arrays = (0..rng.random_range(0..5))
        .map(|k| {
            let shape: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(1..5)).collect();
            let n: usize = shape.iter().product();
            let name = format!("a{k}.x");
            match rng.random_range(0..3) {
                0 => Array::u8(&name, &shape, (0..n).map(|_| rng.random()).collect()),
                1 => Array::f32(&name, &shape, &(0..n).map(|_| rng.random()).collect::<Vec<f32>>()),
                _ => Array::f64(&name, &shape, &(0..n).map(|_| rng.random()).collect::<Vec<f64>>()),
            }
        })
        .collect();
    Bundle {
        clip_id: format!("clip_{i}"),
        meta: vec![("seed".into(), rng.random::<u64>().to_string()), ("note".into(), "two words".into())],
        arrays,
    }
}

fn corruption_kinds(bytes: &[u8], decode: impl Fn(&[u8]) -> Result<(), Error>) -> Result<(), String> {
    let mut magic = bytes.to_vec();
    magic[1] ^= 0x20;
    let mut version = bytes.to_vec();
    version[4] = 2;
    let short = &bytes[..bytes.len() - 1];
    let got = [decode(&magic), decode(&version), decode(short)];
    let ok = matches!(got[0], Err(Error::BadMagic { .. }))
        && matches!(got[1], Err(Error::UnsupportedVersion { .. }))
        && matches!(got[2], Err(Error::LengthMismatch { .. }));
    ensure(ok, || format!("corruption errors were {got:?}"))
}

fn format_round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for i in 0..100 {
        let m = random_mask_file(&mut rng);
        let bytes = lamk::encode(&m).map_err(e2s)?;
        ensure(lamk::encode(&lamk::decode(&bytes).map_err(e2s)?).map_err(e2s)? == bytes, || format!("LAMK fixture {i}"))?;
        let f = random_flow(&mut rng);
        let bytes = lafl::encode(&f);
        ensure(lafl::encode(&lafl::decode(&bytes).map_err(e2s)?) == bytes, || format!("LAFL fixture {i}"))?;
        let t = random_tracks(&mut rng);
        let bytes = latk::encode(&t).map_err(e2s)?;
        ensure(latk::encode(&latk::decode(&bytes).map_err(e2s)?).map_err(e2s)? == bytes, || format!("LATK fixture {i}"))?;
        let b = random_bundle(&mut rng, i);
        let bytes = latb::encode(&b).map_err(e2s)?;
        ensure(latb::encode(&latb::decode(&bytes).map_err(e2s)?).map_err(e2s)? == bytes, || format!("LATB fixture {i}"))?;
    }
    let size = FrameSize::new(3, 3).unwrap();
    let full = MaskSet::new(0, size, vec![(ElementId(1), PixelMask::full(size))]).unwrap();
    corruption_kinds(&lamk::encode(&lamk::MaskFile { size, sets: vec![full] }).map_err(e2s)?, |b| {
        lamk::decode(b).map(|_| ())
    })?;
    corruption_kinds(&lafl::encode(&FlowField::zeros(ClipGeometry::new(2, 2, 3).unwrap())), |b| {
        lafl::decode(b).map(|_| ())
    })?;
    corruption_kinds(&latk::encode(&random_tracks(&mut rng)).map_err(e2s)?, |b| latk::decode(b).map(|_| ()))?;
    corruption_kinds(&latb::encode(&random_bundle(&mut rng, 0)).map_err(e2s)?, |b| latb::decode(b).map(|_| ()))?;
    Ok("100 fixtures per format byte-identical; magic/version/length errors distinct".into())
}

// ---------------------------------------------------------------- pipeline

fn run_cli(args: &[&str], cwd: &Path) -> Result<(Duration, i32, String), String> {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_layerkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(e2s)?;
    let code = out.status.code().unwrap_or(-1);
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    Ok((start.elapsed(), code, text))
}

fn digests(dir: &Path) -> Result<Vec<(String, [u8; 32])>, String> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(e2s)? {
        let path = entry.map_err(e2s)?.path();
        if path.extension().is_some_and(|e| e == "latb") {
            let bytes = std::fs::read(&path).map_err(e2s)?;
            out.push((path.file_name().unwrap().to_string_lossy().into_owned(), Sha256::digest(&bytes).into()));
        }
    }
    out.sort();
    Ok(out)
}

fn pipeline_determinism_and_throughput() -> Outcome {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let root = dir.path();
    let (_, code, text) = run_cli(&["--seed", "5", "--out", "data", "synth", "--count", "50"], root)?;
    ensure(code == 0, || format!("synth exited {code}: {text}"))?;
    let (t1, code1, text1) = run_cli(&["--seed", "5", "--jobs", "1", "--out", "run1", "run", "--manifest", "data/manifest.toml"], root)?;
    ensure(code1 == 0, || format!("jobs 1 exited {code1}: {text1}"))?;
    let first = digests(&root.join("run1"))?;
    // Drop the first run's bundles before the second to bound disk use.
    std::fs::remove_dir_all(root.join("run1")).map_err(e2s)?;
    let (t8, code8, text8) = run_cli(&["--seed", "5", "--jobs", "8", "--out", "run8", "run", "--manifest", "data/manifest.toml"], root)?;
    ensure(code8 == 0, || format!("jobs 8 exited {code8}: {text8}"))?;
    let second = digests(&root.join("run8"))?;
    ensure(first.len() == 50, || format!("{} bundles written", first.len()))?;
    ensure(first == second, || "bundles differ between --jobs 1 and --jobs 8".into())?;

    let cfg = PipelineConfig::default();
    ensure(cfg.resolution == Resolution { width: 512, height: 320 }, || "default resolution changed".into())?;
    let limit = Duration::from_secs(120);
    ensure(t1 < limit && t8 < limit, || format!("runs took {t1:?} and {t8:?}"))?;
    Ok(format!("50 bundles identical across --jobs 1/8; 50 clips 320x512x16 in {t1:.1?} (jobs 1), {t8:.1?} (jobs 8)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("mhm_oracle_equivalence", mhm_oracle_equivalence),
        ("synthetic_end_to_end_recovery", synthetic_recovery),
        ("motion_scoring", motion_scoring),
        ("assignment_tensors", assignment_tensors),
        ("trajectory_filter_and_encoding", trajectory_filter_and_encoding),
        ("sampler_statistics", sampler_statistics),
        ("format_round_trips", format_round_trips),
        ("pipeline_determinism_and_throughput", pipeline_determinism_and_throughput),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
