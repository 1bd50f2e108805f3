//! Evaluation metrics: windowed SSIM, mesh voxel IoU/recall and Chamfer distance.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::Image;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::ColoredMesh;
use crate::scalar::Real;
use crate::spatial::KdTree;
use crate::volume::TsdfVolume;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DEFAULT_CHAMFER_SAMPLES: usize = 30_000;

/// Normalized 1D Gaussian of length [`SSIM_WINDOW`]; the 2D window is its
/// outer product.
pub fn gaussian_window<T: Real>() -> [T; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let w: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let x = i as f64 - r;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = w.iter().sum();
    w.map(|v| T::lit(v / s))
}

/// Separable weighted sum over every full window; output is
/// `(w - 10) × (h - 10)`.
fn filter_valid<T: Real>(data: &[T], w: usize, h: usize, g: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = T::zero();
            for (k, gk) in g.iter().enumerate() {
                acc += *gk * data[y * w + x + k];
            }
            rows[y * ow + x] = acc;
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = T::zero();
            for (k, gk) in g.iter().enumerate() {
                acc += *gk * rows[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean SSIM of two grayscale images in [0, 1] over all window positions
/// that fit inside the image.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    let (w, h) = a.dims();
    b.ensure_dims(w, h)?;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let g = gaussian_window::<T>();
    let prod = |f: &dyn Fn(T, T) -> T| -> Vec<T> { a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(&a.data, w, h, &g);
    let mu_b = filter_valid(&b.data, w, h, &g);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &g);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &g);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &g);
    let c1 = T::lit(SSIM_K1 * SSIM_K1);
    let c2 = T::lit(SSIM_K2 * SSIM_K2);
    let two = T::lit(2.0);
    let mut sum = T::zero();
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += (two * ma * mb + c1) * (two * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / T::from_usize_lossy(mu_a.len()))
}

/// Mean of the per-channel SSIM of two RGB images.
pub fn ssim_rgb<T: Real>(a: &Image<[T; 3]>, b: &Image<[T; 3]>) -> Result<T> {
    let (w, h) = a.dims();
    b.ensure_dims(w, h)?;
    let mut total = T::zero();
    for c in 0..3 {
        let ca = Image { width: w, height: h, data: a.data.iter().map(|p| p[c]).collect() };
        let cb = Image { width: w, height: h, data: b.data.iter().map(|p| p[c]).collect() };
        total += ssim(&ca, &cb)?;
    }
    Ok(total / T::lit(3.0))
}

/// Triangle / axis-aligned box overlap by the separating axis theorem.
/// Touching counts as overlap.
pub fn triangle_box_overlap<T: Real>(tri: [Vec3<T>; 3], center: Vec3<T>, half: Vec3<T>) -> bool {
    let v = tri.map(|p| p - center);
    let e = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let separated = |axis: Vec3<T>| {
        let r = half.x * axis.x.abs() + half.y * axis.y.abs() + half.z * axis.z.abs();
        let p = v.map(|q| q.dot(axis));
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        lo > r || hi < -r
    };
    let unit = [Vec3::new(T::one(), T::zero(), T::zero()), Vec3::new(T::zero(), T::one(), T::zero()), Vec3::new(T::zero(), T::zero(), T::one())];
    for u in unit {
        if separated(u) {
            return false;
        }
    }
    if separated(e[0].cross(e[1])) {
        return false;
    }
    for u in unit {
        for ed in e {
            if separated(u.cross(ed)) {
                return false;
            }
        }
    }
    true
}

/// Cells `[i, i+1)·voxel_size` (per axis) touched by any triangle.
pub fn voxelize<T: Real>(mesh: &ColoredMesh<T>, voxel_size: T) -> HashSet<[i64; 3]> {
    let half = Vec3::splat(voxel_size * T::lit(0.5));
    let per_tri: Vec<Vec<[i64; 3]>> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let tri = mesh.triangle_corners(t);
            let lo = tri[0].min(tri[1]).min(tri[2]);
            let hi = tri[0].max(tri[1]).max(tri[2]);
            let cell = |x: T| (x / voxel_size).floor().to_i64().unwrap_or(0);
            let (l, h) = ([cell(lo.x), cell(lo.y), cell(lo.z)], [cell(hi.x), cell(hi.y), cell(hi.z)]);
            let mut out = Vec::new();
            // one extra layer below catches faces lying on a cell boundary
            for k in l[2] - 1..=h[2] {
                for j in l[1] - 1..=h[1] {
                    for i in l[0] - 1..=h[0] {
                        let c = Vec3::new(T::lit(i as f64 + 0.5), T::lit(j as f64 + 0.5), T::lit(k as f64 + 0.5))
                            * voxel_size;
                        if triangle_box_overlap(tri, c, half) {
                            out.push([i, j, k]);
                        }
                    }
                }
            }
            out
        })
        .collect();
    per_tri.into_iter().flatten().collect()
}

/// False for cells whose center falls outside `mask` or on an unobserved voxel.
fn observed_in<T: Real>(mask: &TsdfVolume<T>, cell: [i64; 3], voxel_size: T) -> bool {
    let c = Vec3::new(T::lit(cell[0] as f64 + 0.5), T::lit(cell[1] as f64 + 0.5), T::lit(cell[2] as f64 + 0.5)) * voxel_size;
    let u = mask.world_to_voxel(c);
    let dims = mask.dims();
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = u[a].round();
        if !(r >= T::zero() && r < T::from_usize_lossy(dims[a])) {
            return false;
        }
        idx[a] = r.to_usize().unwrap_or(0);
    }
    mask.is_observed(mask.index(idx[0], idx[1], idx[2]))
}

/// Voxel IoU and recall of `pred` against `target`; cells unobserved in
/// `ignore` are dropped from both sets.
pub fn voxel_iou_recall<T: Real>(
    pred: &ColoredMesh<T>,
    target: &ColoredMesh<T>,
    voxel_size: T,
    ignore: Option<&TsdfVolume<T>>,
) -> Result<(f64, f64)> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    if !(voxel_size > T::zero()) {
        return Err(Error::InvalidArgument("voxel size must be positive".into()));
    }
    let mut p = voxelize(pred, voxel_size);
    let mut t = voxelize(target, voxel_size);
    if let Some(mask) = ignore {
        p.retain(|c| observed_in(mask, *c, voxel_size));
        t.retain(|c| observed_in(mask, *c, voxel_size));
    }
    let inter = p.intersection(&t).count() as f64;
    let union = p.union(&t).count() as f64;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let recall = if t.is_empty() { 0.0 } else { inter / t.len() as f64 };
    Ok((iou, recall))
}

/// `n` points drawn uniformly by area from the mesh surface.
pub fn sample_surface<T: Real>(mesh: &ColoredMesh<T>, n: usize, seed: u64) -> Result<Vec<Vec3<T>>> {
    if mesh.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0f64;
    for t in 0..mesh.triangles.len() {
        acc += mesh.triangle_area(t).to_f64_lossy();
        cum.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidArgument("mesh has zero area".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.gen::<f64>() * acc;
            let t = cum.partition_point(|c| *c <= r).min(cum.len() - 1);
            let [a, b, c] = mesh.triangle_corners(t);
            let s = rng.gen::<f64>().sqrt();
            let u: f64 = rng.gen();
            let (wa, wb, wc) = (T::lit(1.0 - s), T::lit(s * (1.0 - u)), T::lit(s * u));
            a * wa + b * wb + c * wc
        })
        .collect())
}

/// Mean distance from each point of `from` to its nearest point in `to`.
pub fn mean_nearest_distance<T: Real>(from: &[Vec3<T>], to: &KdTree<T>) -> T {
    let d: Vec<T> = from.par_iter().map(|p| to.nearest(*p).map_or(T::infinity(), |(_, d)| d)).collect();
    d.iter().copied().sum::<T>() / T::from_usize_lossy(d.len())
}

/// Symmetric Chamfer distance: half the sum of the two directed mean
/// nearest-sample distances, both meshes sampled with `n` points.
pub fn chamfer<T: Real>(pred: &ColoredMesh<T>, target: &ColoredMesh<T>, n: usize, seed: u64) -> Result<T> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let ps = sample_surface(pred, n, seed)?;
    let ts = sample_surface(target, n, seed)?;
    let (pt, tt) = (KdTree::build(&ps), KdTree::build(&ts));
    Ok((mean_nearest_distance(&ps, &tt) + mean_nearest_distance(&ts, &pt)) * T::lit(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(z: f64, x0: f64, x1: f64) -> ColoredMesh<f64> {
        ColoredMesh {
            vertices: vec![
                Vec3::new(x0, 0.0, z),
                Vec3::new(x1, 0.0, z),
                Vec3::new(x1, 1.0, z),
                Vec3::new(x0, 1.0, z),
            ],
            vertex_colors: vec![[0.5; 3]; 4],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window::<f64>();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn ssim_identity_and_small_image() {
        let img = Image::from_vec(12, 11, (0..132).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-9);
        let small = Image::filled(10, 20, 0.5);
        assert!(ssim(&small, &small).is_err());
        assert!(ssim(&img, &Image::filled(11, 12, 0.0)).is_err());
    }

    #[test]
    fn ssim_negative_is_anticorrelated() {
        let a = Image::from_vec(16, 16, (0..256).map(|i| if (i / 16 + i % 16) % 2 == 0 { 0.9 } else { 0.1 }).collect()).unwrap();
        let b = Image { width: 16, height: 16, data: a.data.iter().map(|v| 1.0 - v).collect() };
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn box_overlap_cases() {
        let tri = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let h = Vec3::splat(0.25);
        assert!(triangle_box_overlap(tri, Vec3::new(0.2, 0.2, 0.0), h));
        assert!(triangle_box_overlap(tri, Vec3::new(0.2, 0.2, 0.25), h));
        assert!(!triangle_box_overlap(tri, Vec3::new(0.2, 0.2, 0.3), h));
        // beyond the hypotenuse, only the edge cross-axis separates
        assert!(!triangle_box_overlap(tri, Vec3::new(0.9, 0.9, 0.0), h));
        assert!(triangle_box_overlap(tri, Vec3::new(0.6, 0.6, 0.0), h));
    }

    #[test]
    fn identical_and_disjoint_meshes() {
        let a = square(0.05, 0.0, 1.0);
        assert_eq!(voxel_iou_recall(&a, &a, 0.1, None).unwrap(), (1.0, 1.0));
        let b = square(0.55, 0.0, 1.0);
        assert_eq!(voxel_iou_recall(&a, &b, 0.1, None).unwrap(), (0.0, 0.0));
        assert_eq!(chamfer(&a, &a, 500, 3).unwrap(), 0.0);
        assert!(voxel_iou_recall(&a, &ColoredMesh::default(), 0.1, None).is_err());
    }

    #[test]
    fn half_overlapping_plates() {
        let a = square(0.05, 0.0, 1.0);
        let b = square(0.05, 0.5, 1.5);
        let (iou, recall) = voxel_iou_recall(&a, &b, 0.02, None).unwrap();
        // boundary columns may be shared; allow one voxel layer
        assert!((iou - 1.0 / 3.0).abs() < 0.03, "{iou}");
        assert!((recall - 0.5).abs() < 0.03, "{recall}");
    }

    #[test]
    fn ignore_mask_drops_cells() {
        use crate::volume::GridSpec;
        let a = square(0.05, 0.0, 1.0);
        let b = square(0.05, 0.5, 1.5);
        let grid = GridSpec::new([8, 10, 1], 0.1, Vec3::new(0.05, 0.05, 0.05));
        let mut mask = TsdfVolume::<f64>::new(grid).unwrap();
        // mask covers cell columns x in 0..8, y in 0..10 of the z = 0 layer
        for i in 0..mask.num_voxels() {
            mask.weight[i] = 1.0;
        }
        let (iou, recall) = voxel_iou_recall(&a, &b, 0.1, Some(&mask)).unwrap();
        // kept: P spans columns 0..8, T spans 4..8 (column 4 touches x = 0.5)
        assert_eq!((iou, recall), (0.5, 1.0));
    }

    #[test]
    fn samples_lie_on_mesh() {
        let m = square(0.3, 0.0, 2.0);
        let s = sample_surface(&m, 1000, 1).unwrap();
        assert!(s.iter().all(|p| (p.z - 0.3).abs() < 1e-12 && p.x > -1e-12 && p.x < 2.0 + 1e-12 && p.y > -1e-12 && p.y < 1.0 + 1e-12));
        let left = s.iter().filter(|p| p.x < 1.0).count();
        assert!((left as f64 - 500.0).abs() < 60.0);
        assert_eq!(s, sample_surface(&m, 1000, 1).unwrap());
    }
}
