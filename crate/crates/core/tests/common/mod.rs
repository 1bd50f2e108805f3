//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsdf_refine::{render, CameraView, GridSpec, Image, Intrinsics, RigidTransform, TsdfVolume, Vec3};

/// 8×8×8 volume in voxel units (voxel size 1, truncation 3) holding a noisy
/// tilted plane, fully observed, with random colors.
pub fn near_surface_volume(seed: u64) -> TsdfVolume<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new([8, 8, 8], 1.0, Vec3::zero());
    let n = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -1.0)
        .normalized(1e-9)
        .unwrap();
    let center = Vec3::new(3.5, 3.5, rng.gen_range(2.5..4.5));
    let mut vol = TsdfVolume::from_sdf(grid, |p| (p - center).dot(n)).unwrap();
    let tr = vol.truncation();
    for i in 0..vol.num_voxels() {
        let noisy: f64 = vol.tsdf[i] + rng.gen_range(-0.25..0.25);
        vol.tsdf[i] = noisy.clamp(-tr, tr);
        for c in 0..3 {
            vol.color[c][i] = rng.gen_range(0.05..0.95);
        }
    }
    vol
}

/// 16×16 camera looking down +z at the 8³ volume.
pub fn small_view(seed: u64) -> CameraView<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let eye = Vec3::new(3.5 + rng.gen_range(-1.0..1.0), 3.5 + rng.gen_range(-1.0..1.0), -9.0);
    let pose = RigidTransform::look_at(eye, Vec3::new(3.5, 3.5, 3.5), Vec3::new(0.0, -1.0, 0.0)).unwrap();
    CameraView::new(Intrinsics { fx: 30.0, fy: 30.0, cx: 7.5, cy: 7.5 }, 16, 16, pose).with_depth_range(0.1, 100.0)
}

pub struct LinearImageLoss {
    pub a: Image<f64>,
    pub b: Image<[f64; 3]>,
}

impl LinearImageLoss {
    pub fn random(seed: u64, w: usize, h: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let a = Image::from_vec(w, h, (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Image::from_vec(
            w,
            h,
            (0..w * h).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect(),
        )
        .unwrap();
        Self { a, b }
    }

    /// L = Σ a_p D(p) + Σ b_p · C(p), evaluated by a full render.
    pub fn eval(&self, vol: &TsdfVolume<f64>, view: &CameraView<f64>) -> f64 {
        self.eval_with_cells(vol, view).0
    }

    /// Loss plus, per pixel, the trilinear cell containing the hit (None if
    /// the pixel is invalid). The loss is smooth in the volume only while
    /// this signature stays fixed.
    pub fn eval_with_cells(&self, vol: &TsdfVolume<f64>, view: &CameraView<f64>) -> (f64, Vec<Option<[i64; 3]>>) {
        let r = render(vol, view);
        let mut l = 0.0;
        let mut cells = vec![None; view.num_pixels()];
        for p in 0..view.num_pixels() {
            if r.valid.data[p] {
                l += self.a.data[p] * r.depth.data[p];
                for c in 0..3 {
                    l += self.b.data[p][c] * r.color.data[p][c];
                }
                let ray = view.ray(p % view.width, p / view.width);
                let u = vol.grid.world_to_voxel(ray.at(r.hit_t.data[p]));
                cells[p] = Some([u.x.floor() as i64, u.y.floor() as i64, u.z.floor() as i64]);
            }
        }
        (l, cells)
    }
}

/// Which per-voxel parameter a finite difference perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Tsdf(usize),
    Color(usize, usize),
}

/// Copy of `vol` with one parameter shifted by `x`.
pub fn perturbed(vol: &TsdfVolume<f64>, param: Param, x: f64) -> TsdfVolume<f64> {
    let mut v = vol.clone();
    match param {
        Param::Tsdf(i) => v.tsdf[i] += x,
        Param::Color(c, i) => v.color[c][i] += x,
    }
    v
}

/// Central finite difference of `f` with respect to one voxel parameter.
pub fn central_difference(
    vol: &TsdfVolume<f64>,
    param: Param,
    eps: f64,
    f: impl Fn(&TsdfVolume<f64>) -> f64,
) -> f64 {
    (f(&perturbed(vol, param, eps)) - f(&perturbed(vol, param, -eps))) / (2.0 * eps)
}

pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose ±ε step moved some hit across a cell face; these
    /// were re-differenced with a smaller step.
    pub straddled: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

/// Smallest step tried when a perturbation straddles a cell face.
pub const MIN_EPS: f64 = 1e-8;

/// Compares analytic gradients with central differences over every voxel
/// parameter; coordinates with |FD| <= `min_fd` are skipped.
///
/// `f` returns the loss and a piecewise signature (the hit cell per pixel).
/// When the ±ε evaluations disagree with the unperturbed signature the loss
/// is not differentiable across that step, so ε is divided by 10 until both
/// sides land on the same smooth piece, down to `MIN_EPS`.
pub fn check_gradients<S: PartialEq>(
    vol: &TsdfVolume<f64>,
    d_tsdf: &[f64],
    d_color: &[Vec<f64>; 3],
    eps: f64,
    min_fd: f64,
    rel_tol: f64,
    f: impl Fn(&TsdfVolume<f64>) -> (f64, S),
) -> GradCheck {
    let mut params: Vec<(Param, f64)> = (0..vol.num_voxels()).map(|i| (Param::Tsdf(i), d_tsdf[i])).collect();
    for c in 0..3 {
        params.extend((0..vol.num_voxels()).map(|i| (Param::Color(c, i), d_color[c][i])));
    }
    let (_, base_sig) = f(vol);
    let mut out = GradCheck { checked: 0, straddled: 0, worst_rel: 0.0, failures: Vec::new() };
    for (p, analytic) in params {
        let mut e = eps;
        let mut smooth = false;
        let mut fd = 0.0;
        while e >= MIN_EPS * 0.999 {
            let (fp, sp) = f(&perturbed(vol, p, e));
            let (fm, sm) = f(&perturbed(vol, p, -e));
            fd = (fp - fm) / (2.0 * e);
            if sp == base_sig && sm == base_sig {
                smooth = true;
                break;
            }
            e /= 10.0;
        }
        if e != eps {
            out.straddled += 1;
        }
        if fd.abs() <= min_fd && smooth {
            continue;
        }
        if !smooth {
            out.failures.push(format!("{p:?}: no smooth step down to {MIN_EPS:e}"));
            continue;
        }
        out.checked += 1;
        let rel = (analytic - fd).abs() / fd.abs();
        out.worst_rel = out.worst_rel.max(rel);
        if rel >= rel_tol {
            out.failures.push(format!("{p:?}: analytic {analytic:.9e} fd {fd:.9e} (eps {e:e}) rel {rel:.3e}"));
        }
    }
    out
}
