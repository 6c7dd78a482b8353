use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layerkit::control::{encode_motion_score, filter_tracks, mask_sketch, rasterize_trajectories};
use layerkit::formats::latb::{self, Array, Bundle};
use layerkit::formats::lamk;
use layerkit::manifest::{ClipEntry, Manifest};
use layerkit::pipeline::{self, BatchReport};
use layerkit::report::{stats, BundleStats};
use layerkit::sampler::{sample_controls_for, Availability};
use layerkit::synth::{generate_scene, SceneSpec};
use layerkit::{ClipGeometry, PipelineConfig};

#[derive(Parser)]
#[command(name = "layerkit", version, about = "Curate animation clips into layer bundles")]
struct Cli {
    /// Pipeline config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch verbs.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ClipArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    clip: String,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic clips and a manifest for them into --out.
    Synth {
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// True layer count per clip; cycles through 2, 3, 4 when omitted.
        #[arg(long)]
        layers: Option<usize>,
        /// Defaults to the configured working resolution.
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        /// Every k-th clip gets an object entering at frame 8 (0 disables).
        #[arg(long, default_value_t = 4)]
        appearing_every: usize,
    },
    /// Run the key-frame refinement loop and write `<clip>.masklets.lamk`.
    Curate(ClipArgs),
    /// Print the merged layers of one clip as JSON.
    Merge(ClipArgs),
    /// Write the padded layer tensors of one clip to `<clip>.layers.latb`.
    Assign(ClipArgs),
    /// Write every control modality for every layer to `<clip>.controls.latb`.
    EncodeControls(ClipArgs),
    /// Print a control assignment for `layers` layers as JSON.
    SampleControls {
        #[arg(long)]
        layers: usize,
        #[arg(long, default_value = "")]
        clip: String,
    },
    /// Process every clip of a manifest into `<clip>.latb` bundles.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Summarize bundles (files or directories of `.latb`).
    Stats {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Check that every clip's files exist, decode and agree on geometry.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
}

/// Exit code when some clips failed but the run as a whole completed.
const PARTIAL: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn jobs(cli: &Cli) -> usize {
    cli.jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn clip<'a>(manifest: &'a Manifest, id: &str) -> Result<&'a ClipEntry> {
    manifest.clip(id).with_context(|| format!("clip {id:?} is not in the manifest"))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Synth {
            count,
            layers,
            width,
            height,
            frames,
            appearing_every,
        } => {
            let g = ClipGeometry::new(
                width.unwrap_or(cfg.resolution.width),
                height.unwrap_or(cfg.resolution.height),
                *frames,
            )?;
            let mut clips = Vec::with_capacity(*count);
            for i in 0..*count {
                let g_layers = layers.unwrap_or(2 + i % 3);
                let appearing = *appearing_every > 0 && i % appearing_every == appearing_every - 1;
                let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let spec = SceneSpec::random(g, g_layers, appearing, seed)?;
                let truth = generate_scene(&spec)?;
                clips.push(truth.write_clip(&out, &format!("clip_{i:04}"), 24.0)?);
            }
            let manifest = Manifest::new(&out, clips)?;
            let path = out.join("manifest.toml");
            manifest.save(&path)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Curate(args) => {
            let manifest = Manifest::load(&args.manifest)?;
            let entry = clip(&manifest, &args.clip)?;
            let g = pipeline::clip_geometry(entry, &cfg)?;
            let curation = pipeline::curate_clip(&manifest, entry, &cfg)?;
            let path = out.join(format!("{}.masklets.lamk", entry.id));
            lamk::write(&path, &pipeline::masklet_file(g, &curation.masklets)?)?;
            let steps: Vec<_> = curation
                .steps
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "frame": s.frame,
                        "new_elements": s.new_elements,
                        "prompts": s.prompt_count,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "masklets": curation.masklets.len(), "steps": steps }))?;
            Ok(0)
        }
        Command::Merge(args) => {
            let manifest = Manifest::load(&args.manifest)?;
            let entry = clip(&manifest, &args.clip)?;
            let g = pipeline::clip_geometry(entry, &cfg)?;
            let curation = pipeline::curate_clip(&manifest, entry, &cfg)?;
            let flow = pipeline::load_flow(&manifest, entry, g)?;
            let scored = pipeline::score_masklets(curation.masklets, &flow)?;
            let layers = pipeline::merge_clip(&scored, &cfg)?;
            let layers: Vec<_> = layers
                .iter()
                .map(|l| {
                    serde_json::json!({
                        "layer_id": l.layer_id,
                        "members": l.members,
                        "raw_score": l.score.raw,
                        "normalized_score": l.score.normalized,
                        "class": l.class,
                    })
                })
                .collect();
            print_json(&serde_json::json!({ "layers": layers, "unscorable": scored.unscorable }))?;
            Ok(0)
        }
        Command::Assign(args) => {
            let manifest = Manifest::load(&args.manifest)?;
            let entry = clip(&manifest, &args.clip)?;
            let (g, layers) = merged_layers(&manifest, entry, &cfg)?;
            let stack = pipeline::assign_clip(&manifest, entry, g, &layers, &cfg)?;
            let n = stack.capacity();
            let validity: Vec<u8> = stack.validity().iter().map(|&v| v as u8).collect();
            let scores: Vec<f32> = stack.normalized_scores().iter().map(|&s| s as f32).collect();
            let (mask_shape, region_shape) = (stack.mask_shape(), stack.region_shape());
            let (masks, regions) = stack.into_tensors();
            let bundle = Bundle {
                clip_id: entry.id.clone(),
                meta: vec![("layers".into(), layers.len().to_string())],
                arrays: vec![
                    Array::u8("layer_masks", &mask_shape, masks),
                    Array::u8("layer_regions", &region_shape, regions),
                    Array::u8("validity", &[n], validity),
                    Array::f32("scores", &[n], &scores),
                ],
            };
            let path = out.join(format!("{}.layers.latb", entry.id));
            latb::write(&path, &bundle)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::EncodeControls(args) => {
            let manifest = Manifest::load(&args.manifest)?;
            let entry = clip(&manifest, &args.clip)?;
            encode_all_controls(&manifest, entry, &cfg, &out)?;
            Ok(0)
        }
        Command::SampleControls { layers, clip } => {
            let avail = vec![Availability::ALL; *layers];
            let assignment = sample_controls_for(clip, &avail, (*layers).max(cfg.capacity), &cfg.sampler())?;
            print_json(&assignment)?;
            Ok(0)
        }
        Command::Run { manifest } => {
            let manifest = Manifest::load(manifest)?;
            let report: BatchReport = pipeline::run_batch(&manifest, &cfg, &out, jobs(&cli))?;
            for f in &report.failed {
                eprintln!("{}: failed at {} stage: {}", f.clip_id, f.stage, f.message);
            }
            println!(
                "{} succeeded, {} failed, report at {}",
                report.succeeded.len(),
                report.failed.len(),
                out.join("run_report.json").display()
            );
            Ok(if report.all_ok() { 0 } else { PARTIAL })
        }
        Command::Stats { paths } => {
            let files = bundle_files(paths)?;
            let bundles = files.iter().map(|p| BundleStats::read(p)).collect::<layerkit::Result<Vec<_>>>()?;
            print_json(&stats(&bundles)?)?;
            Ok(0)
        }
        Command::Validate { manifest } => {
            let manifest = Manifest::load(manifest)?;
            let mut bad = 0;
            for entry in &manifest.clips {
                match pipeline::validate_clip(&manifest, entry, &cfg) {
                    Ok(()) => println!("{}: ok", entry.id),
                    Err(e) => {
                        bad += 1;
                        println!("{}: {} ({})", entry.id, e, e.kind());
                    }
                }
            }
            Ok(if bad == 0 { 0 } else { PARTIAL })
        }
    }
}

fn merged_layers(
    manifest: &Manifest,
    entry: &ClipEntry,
    cfg: &PipelineConfig,
) -> Result<(ClipGeometry, Vec<layerkit::Layer>)> {
    let g = pipeline::clip_geometry(entry, cfg)?;
    let curation = pipeline::curate_clip(manifest, entry, cfg)?;
    let flow = pipeline::load_flow(manifest, entry, g)?;
    let scored = pipeline::score_masklets(curation.masklets, &flow)?;
    Ok((g, pipeline::merge_clip(&scored, cfg)?))
}

fn encode_all_controls(manifest: &Manifest, entry: &ClipEntry, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let g = pipeline::clip_geometry(entry, cfg)?;
    let curation = pipeline::curate_clip(manifest, entry, cfg)?;
    let all = curation.masklets.clone();
    let flow = pipeline::load_flow(manifest, entry, g)?;
    let scored = pipeline::score_masklets(curation.masklets, &flow)?;
    let layers = pipeline::merge_clip(&scored, cfg)?;
    let stack = pipeline::assign_clip(manifest, entry, g, &layers, cfg)?;
    let tracks = pipeline::load_tracks(manifest, entry, g)?;
    let per_layer = filter_tracks(g, &tracks, &all, cfg.min_overlap)?.by_layer(&layers);
    let sketch = pipeline::load_sketch(manifest, entry, g)?;
    let (f, h, w) = (g.frame_count, g.height as usize, g.width as usize);

    let mut arrays = Vec::new();
    for (slot, layer) in layers.iter().enumerate() {
        let map = encode_motion_score(&stack, slot)?;
        arrays.push(Array::f32(&format!("control.{slot}.score_map"), &map.shape(), map.data()));
        let chosen = pipeline::select_tracks(&entry.id, slot, &per_layer[slot], cfg);
        let map = rasterize_trajectories(g, &chosen, cfg.sigma_heat)?;
        arrays.push(Array::f32(&format!("control.{slot}.trajectory_map"), &map.shape(), map.data()));
        if let Some(sketch) = &sketch {
            let masked = mask_sketch(sketch, &layer.masks)?;
            arrays.push(Array::u8(&format!("control.{slot}.sketch"), &[f, 1, h, w], masked.into_frames()));
        }
    }
    let path = out.join(format!("{}.controls.latb", entry.id));
    latb::write(
        &path,
        &Bundle {
            clip_id: entry.id.clone(),
            meta: vec![("layers".into(), layers.len().to_string())],
            arrays,
        },
    )?;
    println!("{}", path.display());
    Ok(())
}

/// Expands directories to their `.latb` files, sorted by name.
fn bundle_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| {
                f.extension().is_some_and(|e| e == "latb")
                    && !f.to_string_lossy().ends_with(".layers.latb")
                    && !f.to_string_lossy().ends_with(".controls.latb")
            });
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(files)
}
