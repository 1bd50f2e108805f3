//! Command-line pipeline: synthesize or load scans, fuse, build training
//! pairs and chunks, refine, mesh, and evaluate.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tsdf_refine::datagen::{sample_chunks, ChunkRecord, CHUNK_DIMS, DEFAULT_KEEP_FRACTION, DEFAULT_STRIDE};
use tsdf_refine::metrics::DEFAULT_CHAMFER_SAMPLES;
use tsdf_refine::render::render;
use tsdf_refine::scan::save_rendered;
use tsdf_refine::volume::DEFAULT_TRUNCATION_VOXELS;
use tsdf_refine::{
    chamfer, enclosing_grid, fuse_scan, load_scan, make_pair, marching_cubes, reconstruction_loss, refine_volume,
    ssim_rgb, synth_scene, voxel_iou_recall, ColoredMesh, GridSpec, RefineConfig, RgbdFrame, ScanPair, SceneKind,
    SynthParams, TsdfVolume, DEFAULT_W_G,
};

#[derive(Parser)]
#[command(name = "tsdf-refine", version, about = "Colored TSDF fusion, differentiable rendering and refinement")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Global {
    /// Voxel edge length in meters.
    #[arg(long, global = true, default_value_t = 0.02)]
    voxel_size: f64,
    /// Truncation distance in meters [default: 3 voxels].
    #[arg(long, global = true)]
    truncation: Option<f64>,
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
}

impl Global {
    fn truncation(&self) -> f64 {
        self.truncation.unwrap_or(DEFAULT_TRUNCATION_VOXELS * self.voxel_size)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Render an analytic scene to a scan directory.
    SynthScene {
        #[arg(long)]
        kind: SceneKind,
        #[arg(long, default_value_t = 12)]
        views: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        /// Focal length in pixels.
        #[arg(long)]
        focal: Option<f64>,
    },
    /// Fuse every frame of a scan into a volume.
    Fuse {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render depth, normal and color PNGs of a volume from one scan camera.
    Render {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        frame: u32,
        /// Writes PREFIX.depth.png, PREFIX.normal.png and PREFIX.color.png.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Fuse a seeded frame subset and the full scan into an input/target pair.
    Pairs {
        #[arg(long)]
        scan: PathBuf,
        #[arg(long, default_value_t = DEFAULT_KEEP_FRACTION)]
        keep: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut a pair into occupied chunks and write a JSON-lines manifest.
    Chunks {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long, num_args = 3, default_values_t = DEFAULT_STRIDE)]
        stride: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a volume against the frames of a scan.
    Refine {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV.
        #[arg(long)]
        history: PathBuf,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        /// Distance step size in meters [default: 0.1 voxel].
        #[arg(long)]
        lr_tsdf: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        lr_color: f64,
        #[arg(long, default_value_t = DEFAULT_W_G)]
        wg: f64,
        #[arg(long, default_value_t = 2)]
        views_per_step: usize,
    },
    /// Extract a colored PLY mesh.
    Extract {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        iso: f64,
    },
    /// Compare a predicted mesh with a target mesh; prints one JSON object.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Volume whose unobserved voxels are left out of IoU and recall.
        #[arg(long)]
        ignore: Option<PathBuf>,
        /// Predicted volume, rendered at the scan's views for SSIM.
        #[arg(long, requires = "scan")]
        pred_volume: Option<PathBuf>,
        #[arg(long)]
        scan: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CHAMFER_SAMPLES)]
        samples: usize,
    },
    /// Reconstruction loss of a volume against a scan; prints one JSON object.
    EvalLoss {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long, default_value_t = DEFAULT_W_G)]
        wg: f64,
    },
}

fn load_volume(path: &Path) -> Result<TsdfVolume<f64>> {
    TsdfVolume::load(path).with_context(|| format!("reading volume {}", path.display()))
}

fn save_volume(vol: &TsdfVolume<f64>, path: &Path) -> Result<()> {
    vol.save(path).with_context(|| format!("writing volume {}", path.display()))
}

fn load_frames(dir: &Path) -> Result<Vec<RgbdFrame<f64>>> {
    let frames = load_scan(dir).with_context(|| format!("loading scan {}", dir.display()))?;
    if frames.is_empty() {
        bail!("scan {} has no frames", dir.display());
    }
    Ok(frames)
}

fn load_mesh(path: &Path) -> Result<ColoredMesh<f64>> {
    ColoredMesh::load_ply(path).with_context(|| format!("reading mesh {}", path.display()))
}

fn print_json(v: &serde_json::Value) {
    println!("{v}");
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn scan_grid(frames: &[RgbdFrame<f64>], g: &Global) -> Result<GridSpec<f64>> {
    Ok(enclosing_grid(frames, g.voxel_size, g.truncation())?)
}

fn pick_frames(frames: &[RgbdFrame<f64>], ids: &[u32]) -> Result<Vec<RgbdFrame<f64>>> {
    ids.iter()
        .map(|id| {
            frames.iter().find(|f| f.frame_id == *id).cloned().with_context(|| format!("frame {id} missing from scan"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.cmd {
        Cmd::SynthScene { kind, views, out, width, height, focal } => {
            let mut p = SynthParams::new(kind, views, g.seed);
            p.width = width.unwrap_or(p.width);
            p.height = height.unwrap_or(p.height);
            p.focal = focal.unwrap_or(p.focal);
            let frames = synth_scene(&out, &p)?;
            print_json(&json!({ "frames": frames.len(), "dir": out }));
        }
        Cmd::Fuse { scan, out } => {
            let frames = load_frames(&scan)?;
            let vol = fuse_scan(&frames, scan_grid(&frames, g)?)?;
            save_volume(&vol, &out)?;
            print_json(&json!({ "dims": vol.dims(), "observed": vol.weight.iter().filter(|w| **w > 0.0).count() }));
        }
        Cmd::Render { volume, scan, frame, out_prefix } => {
            let vol = load_volume(&volume)?;
            let frames = load_frames(&scan)?;
            let f = pick_frames(&frames, &[frame])?.remove(0);
            let r = render(&vol, &f.view);
            save_rendered(
                &r,
                &with_suffix(&out_prefix, ".depth.png"),
                &with_suffix(&out_prefix, ".normal.png"),
                &with_suffix(&out_prefix, ".color.png"),
            )?;
            print_json(&json!({ "valid_pixels": r.num_valid() }));
        }
        Cmd::Pairs { scan, keep, out } => {
            let frames = load_frames(&scan)?;
            // chunks need a grid at least one chunk in size
            let grid = scan_grid(&frames, g)?.padded_to(CHUNK_DIMS);
            let pair = make_pair(&frames, keep, g.seed, grid)?;
            fs::create_dir_all(&out)?;
            save_volume(&pair.input_vol, &out.join("input.tsdf"))?;
            save_volume(&pair.target_vol, &out.join("target.tsdf"))?;
            let meta = json!({
                "seed": g.seed,
                "keep_fraction": keep,
                "dims": grid.dims,
                "input_frames": pair.input_frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(),
                "target_frames": pair.target_frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(),
            });
            fs::write(out.join("pair.json"), serde_json::to_string_pretty(&meta)?)?;
            print_json(&meta);
        }
        Cmd::Chunks { pair, scan, stride, out } => {
            let meta: serde_json::Value = serde_json::from_str(
                &fs::read_to_string(pair.join("pair.json")).with_context(|| format!("reading {}", pair.display()))?,
            )?;
            let ids = |key: &str| -> Result<Vec<u32>> {
                serde_json::from_value(meta[key].clone()).with_context(|| format!("pair.json: bad {key}"))
            };
            let frames = load_frames(&scan)?;
            let pair = ScanPair {
                input_frames: pick_frames(&frames, &ids("input_frames")?)?,
                target_frames: pick_frames(&frames, &ids("target_frames")?)?,
                input_vol: load_volume(&pair.join("input.tsdf"))?,
                target_vol: load_volume(&pair.join("target.tsdf"))?,
                seed: meta["seed"].as_u64().unwrap_or(g.seed),
            };
            let chunks = sample_chunks(&pair, [stride[0], stride[1], stride[2]])?;
            fs::create_dir_all(&out)?;
            let mut manifest = BufWriter::new(File::create(out.join("manifest.jsonl"))?);
            for (n, c) in chunks.iter().enumerate() {
                let (inp, tgt) = (format!("chunk-{n:05}.input.tsdf"), format!("chunk-{n:05}.target.tsdf"));
                save_volume(&c.input_chunk, &out.join(&inp))?;
                save_volume(&c.target_chunk, &out.join(&tgt))?;
                let rec = ChunkRecord {
                    origin_voxel: c.origin_voxel,
                    occupancy: c.occupancy,
                    frames: c.frames.clone(),
                    input_path: inp,
                    target_path: tgt,
                };
                writeln!(manifest, "{}", serde_json::to_string(&rec)?)?;
            }
            manifest.flush()?;
            print_json(&json!({ "chunks": chunks.len() }));
        }
        Cmd::Refine { init, target, scan, out, history, iters, lr_tsdf, lr_color, wg, views_per_step } => {
            let init = load_volume(&init)?;
            let target = load_volume(&target)?;
            let frames = load_frames(&scan)?;
            let defaults = RefineConfig::for_voxel_size(init.voxel_size());
            let cfg = RefineConfig {
                iterations: iters,
                lr_tsdf: lr_tsdf.unwrap_or(defaults.lr_tsdf),
                lr_color,
                w_g: wg,
                views_per_step,
                seed: g.seed,
                ..defaults
            };
            let (vol, hist) = refine_volume(&init, &frames, &target, &cfg)?;
            save_volume(&vol, &out)?;
            let mut csv = BufWriter::new(File::create(&history)?);
            writeln!(csv, "iter,l_depth,l_color,l_geo3d,total")?;
            for (i, r) in hist.iter().enumerate() {
                writeln!(csv, "{i},{},{},{},{}", r.l_depth, r.l_color, r.l_geo3d, r.total)?;
            }
            csv.flush()?;
            let last = hist.last().expect("at least one iteration");
            print_json(&json!({ "iterations": hist.len(), "first_total": hist[0].total, "last_total": last.total }));
        }
        Cmd::Extract { volume, out, iso } => {
            let mesh = marching_cubes(&load_volume(&volume)?, iso);
            mesh.save_ply(&out).with_context(|| format!("writing mesh {}", out.display()))?;
            print_json(&json!({ "vertices": mesh.vertices.len(), "triangles": mesh.triangles.len() }));
        }
        Cmd::Eval { pred, target, ignore, pred_volume, scan, samples } => {
            let (pm, tm) = (load_mesh(&pred)?, load_mesh(&target)?);
            let ignore = ignore.map(|p| load_volume(&p)).transpose()?;
            let (iou, recall) = voxel_iou_recall(&pm, &tm, g.voxel_size, ignore.as_ref())?;
            let cd = chamfer(&pm, &tm, samples, g.seed)?;
            let ssim = match (pred_volume, scan) {
                (Some(v), Some(s)) => {
                    let vol = load_volume(&v)?;
                    let frames = load_frames(&s)?;
                    let mut total = 0.0;
                    for f in &frames {
                        total += ssim_rgb(&render(&vol, &f.view).color, &f.color)?;
                    }
                    Some(total / frames.len() as f64)
                }
                _ => None,
            };
            print_json(&json!({ "ssim": ssim, "iou": iou, "recall": recall, "chamfer": cd }));
        }
        Cmd::EvalLoss { volume, target, scan, wg } => {
            let vol = load_volume(&volume)?;
            let target = load_volume(&target)?;
            let frames = load_frames(&scan)?;
            let refs: Vec<&RgbdFrame<f64>> = frames.iter().collect();
            let (report, _) = reconstruction_loss(&vol, &target, &refs, wg, false)?;
            print_json(&serde_json::to_value(report)?);
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    run(cli)
}
