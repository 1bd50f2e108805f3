//! Self-supervised training pairs: frame subsetting, chunk cropping with an
//! occupancy filter, and frame-to-chunk association.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::RgbdFrame;
use crate::error::{Error, Result};
use crate::fusion::fuse_scan;
use crate::scalar::Real;
use crate::volume::{GridSpec, TsdfVolume};

pub const CHUNK_DIMS: [usize; 3] = [64, 64, 128];
pub const DEFAULT_STRIDE: [usize; 3] = [32, 32, 64];
/// Minimum fraction of near-surface voxels for a chunk to be kept.
pub const MIN_OCCUPANCY: f64 = 0.005;
pub const DEFAULT_FRAMES_PER_CHUNK: usize = 5;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.5;

/// An incomplete scan and the more complete scan it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanPair<T> {
    pub input_frames: Vec<RgbdFrame<T>>,
    pub target_frames: Vec<RgbdFrame<T>>,
    pub input_vol: TsdfVolume<T>,
    pub target_vol: TsdfVolume<T>,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ChunkSample<T> {
    /// First voxel of the window in the parent grid.
    pub origin_voxel: [usize; 3],
    pub input_chunk: TsdfVolume<T>,
    pub target_chunk: TsdfVolume<T>,
    /// Associated frame ids, best overlap first.
    pub frames: Vec<u32>,
    pub occupancy: f64,
}

/// Manifest record for one chunk.
#[derive(Clone, Debug, Serialize)]
pub struct ChunkRecord {
    pub origin_voxel: [usize; 3],
    pub occupancy: f64,
    pub frames: Vec<u32>,
    pub input_path: String,
    pub target_path: String,
}

/// Number of frames kept out of `k` for `keep_fraction`.
pub fn subset_size(k: usize, keep_fraction: f64) -> usize {
    // tolerance keeps e.g. 0.3 * 10 from rounding up to 4
    let m = (keep_fraction * k as f64 - 1e-9).ceil() as usize;
    m.clamp(1, k)
}

/// Sorted indices of the frames kept for the input scan.
pub fn sample_subset(k: usize, keep_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Empty("frame list"));
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("keep_fraction {keep_fraction} not in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, k, subset_size(k, keep_fraction)).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Fuses a seeded frame subset and the full frame set on the same grid.
pub fn make_pair<T: Real>(
    frames: &[RgbdFrame<T>],
    keep_fraction: f64,
    seed: u64,
    grid: GridSpec<T>,
) -> Result<ScanPair<T>> {
    let keep = sample_subset(frames.len(), keep_fraction, seed)?;
    let input_frames: Vec<_> = keep.iter().map(|&i| frames[i].clone()).collect();
    let input_vol = fuse_scan(&input_frames, grid)?;
    let target_vol = fuse_scan(frames, grid)?;
    Ok(ScanPair { input_frames, target_frames: frames.to_vec(), input_vol, target_vol, seed })
}

/// Summed-volume table of near-surface voxels, padded by one in each axis.
struct OccupancyTable {
    dims: [usize; 3],
    sums: Vec<u32>,
}

impl OccupancyTable {
    fn new<T: Real>(vol: &TsdfVolume<T>) -> Self {
        let [dx, dy, dz] = vol.dims();
        let pd = [dx + 1, dy + 1, dz + 1];
        let at = |i: usize, j: usize, k: usize| i + pd[0] * (j + pd[1] * k);
        let mut sums = vec![0u32; pd[0] * pd[1] * pd[2]];
        for k in 0..dz {
            for j in 0..dy {
                for i in 0..dx {
                    let v = vol.is_near_surface(vol.index(i, j, k)) as u32;
                    sums[at(i + 1, j + 1, k + 1)] = v + sums[at(i, j + 1, k + 1)] + sums[at(i + 1, j, k + 1)]
                        + sums[at(i + 1, j + 1, k)]
                        - sums[at(i, j, k + 1)]
                        - sums[at(i, j + 1, k)]
                        - sums[at(i + 1, j, k)]
                        + sums[at(i, j, k)];
                }
            }
        }
        Self { dims: pd, sums }
    }

    fn count(&self, lo: [usize; 3], size: [usize; 3]) -> u32 {
        let at = |i: usize, j: usize, k: usize| self.sums[i + self.dims[0] * (j + self.dims[1] * k)];
        let [a0, b0, c0] = lo;
        let [a1, b1, c1] = [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]];
        // inclusion-exclusion over the 8 box corners; u32 wraps cancel out
        at(a1, b1, c1)
            .wrapping_sub(at(a0, b1, c1))
            .wrapping_sub(at(a1, b0, c1))
            .wrapping_sub(at(a1, b1, c0))
            .wrapping_add(at(a0, b0, c1))
            .wrapping_add(at(a0, b1, c0))
            .wrapping_add(at(a1, b0, c0))
            .wrapping_sub(at(a0, b0, c0))
    }
}

/// Window start positions along one axis.
fn window_starts(dim: usize, chunk: usize, stride: usize) -> Vec<usize> {
    (0..).map(|n| n * stride).take_while(|s| s + chunk <= dim).collect()
}

/// Crops every window of `chunk_dims` at `stride` whose input occupancy is at
/// least `min_occupancy`, in x-fastest window order.
pub fn sample_chunks_with<T: Real>(
    pair: &ScanPair<T>,
    chunk_dims: [usize; 3],
    stride: [usize; 3],
    min_occupancy: f64,
    frames_per_chunk: usize,
) -> Result<Vec<ChunkSample<T>>> {
    let dims = pair.input_vol.dims();
    if !pair.input_vol.grid.same_grid(&pair.target_vol.grid) {
        return Err(Error::GridMismatch("input and target volumes differ".into()));
    }
    if (0..3).any(|a| dims[a] < chunk_dims[a]) {
        return Err(Error::GridMismatch(format!("grid {dims:?} smaller than chunk {chunk_dims:?}")));
    }
    if stride.contains(&0) {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let table = OccupancyTable::new(&pair.input_vol);
    let total = (chunk_dims[0] * chunk_dims[1] * chunk_dims[2]) as f64;
    let xs = window_starts(dims[0], chunk_dims[0], stride[0]);
    let ys = window_starts(dims[1], chunk_dims[1], stride[1]);
    let zs = window_starts(dims[2], chunk_dims[2], stride[2]);
    let mut kept = Vec::new();
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                let occ = table.count([x, y, z], chunk_dims) as f64 / total;
                if occ >= min_occupancy {
                    kept.push(([x, y, z], occ));
                }
            }
        }
    }
    kept.into_par_iter()
        .map(|(origin_voxel, occupancy)| {
            let input_chunk = pair.input_vol.crop(origin_voxel, chunk_dims)?;
            let target_chunk = pair.target_vol.crop(origin_voxel, chunk_dims)?;
            let frames = associate_frames(&target_chunk, &pair.target_frames, frames_per_chunk);
            Ok(ChunkSample { origin_voxel, input_chunk, target_chunk, frames, occupancy })
        })
        .collect()
}

/// [`sample_chunks_with`] using the standard chunk size, occupancy threshold
/// and association count.
pub fn sample_chunks<T: Real>(pair: &ScanPair<T>, stride: [usize; 3]) -> Result<Vec<ChunkSample<T>>> {
    sample_chunks_with(pair, CHUNK_DIMS, stride, MIN_OCCUPANCY, DEFAULT_FRAMES_PER_CHUNK)
}

/// Chunk voxels hit by the frame's back-projected depth (nearest voxel).
pub fn frame_footprint<T: Real>(chunk: &TsdfVolume<T>, frame: &RgbdFrame<T>) -> Vec<bool> {
    let dims = chunk.dims();
    let mut hit = vec![false; chunk.num_voxels()];
    for p in frame.back_project() {
        let u = chunk.world_to_voxel(p);
        let mut c = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let r = u[a].round();
            if !(r >= T::zero() && r < T::from_usize_lossy(dims[a])) {
                inside = false;
                break;
            }
            c[a] = r.to_usize().unwrap_or(0);
        }
        if inside {
            hit[chunk.index(c[0], c[1], c[2])] = true;
        }
    }
    hit
}

/// Intersection over union of the frame footprint with the chunk's
/// near-surface voxels.
pub fn frame_chunk_iou<T: Real>(chunk: &TsdfVolume<T>, frame: &RgbdFrame<T>) -> f64 {
    let hit = frame_footprint(chunk, frame);
    let (mut inter, mut union) = (0usize, 0usize);
    for (i, h) in hit.iter().enumerate() {
        let s = chunk.is_near_surface(i);
        inter += (*h && s) as usize;
        union += (*h || s) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Ids of up to `k` frames with the highest nonzero overlap, best first;
/// ties go to the lower frame id.
pub fn associate_frames<T: Real>(chunk: &TsdfVolume<T>, frames: &[RgbdFrame<T>], k: usize) -> Vec<u32> {
    let mut scored: Vec<(f64, u32)> = frames
        .iter()
        .map(|f| (frame_chunk_iou(chunk, f), f.frame_id))
        .filter(|(iou, _)| *iou > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}
