//! Differentiable raycasting of a colored TSDF into depth, normal and color images.
//!
//! Forward: each pixel ray is marched with a fixed step of half the truncation.
//! The first front-facing sign change (previous sample > 0, current <= 0)
//! between two valid samples brackets the surface. The bracket is narrowed by
//! bisection, then a linear-interpolation step and safeguarded Newton
//! iterations converge to the root of the trilinear field along the ray.
//!
//! Backward: the hit parameter `t*` satisfies `s(t*) = 0`, so for a voxel
//! distance `θ_c` in the hit stencil `∂t*/∂θ_c = -w_c / s'(t*)`. This is the
//! bracket-linearized crossing derivative in the limit of a converged
//! bracket. Depth gradients flow through `t*`; color gradients flow both to the
//! color stencil at the hit point and, through the hit position, to `t*`.

use rayon::prelude::*;

use crate::camera::{CameraView, Image, Ray};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;
use crate::volume::{Stencil, TsdfVolume};

/// Bisection iterations after a bracket is found.
pub const BISECTION_ITERS: usize = 8;
/// Bisection stops early once `|tsdf| < BISECTION_TOL * truncation`.
pub const BISECTION_TOL: f64 = 1e-5;
const POLISH_ITERS: usize = 24;
const PIXELS_PER_TASK: usize = 256;
/// Gradients shorter than this cannot be turned into normals.
pub const MIN_NORMAL_GRADIENT: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedViews<T> {
    /// Camera-space z in meters; 0 where invalid.
    pub depth: Image<T>,
    /// Outward world-space unit normals; zero where invalid.
    pub normal: Image<Vec3<T>>,
    /// RGB in [0, 1]; zero where invalid.
    pub color: Image<[T; 3]>,
    pub valid: Image<bool>,
    /// Ray length of the hit, reused by the backward pass.
    pub hit_t: Image<T>,
}

impl<T: Real> RenderedViews<T> {
    fn empty(width: usize, height: usize) -> Self {
        Self {
            depth: Image::filled(width, height, T::zero()),
            normal: Image::filled(width, height, Vec3::zero()),
            color: Image::filled(width, height, [T::zero(); 3]),
            valid: Image::filled(width, height, false),
            hit_t: Image::filled(width, height, T::zero()),
        }
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }

    pub fn num_valid(&self) -> usize {
        self.valid.data.iter().filter(|v| **v).count()
    }
}

/// Per-voxel gradient accumulators, same layout as the source volume.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeGradients<T> {
    pub dims: [usize; 3],
    pub d_tsdf: Vec<T>,
    pub d_color: [Vec<T>; 3],
}

impl<T: Real> VolumeGradients<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        Self { dims, d_tsdf: vec![T::zero(); n], d_color: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]] }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        for (a, b) in self.d_tsdf.iter_mut().zip(&other.d_tsdf) {
            *a += scale * *b;
        }
        for c in 0..3 {
            for (a, b) in self.d_color[c].iter_mut().zip(&other.d_color[c]) {
                *a += scale * *b;
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.d_tsdf.iter().chain(self.d_color.iter().flatten()).all(|g| *g == T::zero())
    }
}

struct Hit<T> {
    t: T,
    normal: Vec3<T>,
    color: [T; 3],
}

/// Ray interval inside the box spanned by voxel centers.
fn clip_to_grid<T: Real>(vol: &TsdfVolume<T>, ray: &Ray<T>) -> Option<(T, T)> {
    let (lo, hi) = vol.grid.bounds();
    let mut t0 = T::neg_infinity();
    let mut t1 = T::infinity();
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d == T::zero() {
            if o < lo[a] || o > hi[a] {
                return None;
            }
            continue;
        }
        let (mut ta, mut tb) = ((lo[a] - o) / d, (hi[a] - o) / d);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
    }
    (t0 <= t1).then_some((t0, t1))
}

#[inline]
fn tsdf_at<T: Real>(vol: &TsdfVolume<T>, p: Vec3<T>) -> Option<(T, Stencil<T>)> {
    vol.observed_stencil(p).map(|st| (st.blend(&vol.tsdf), st))
}

fn trace<T: Real>(vol: &TsdfVolume<T>, view: &CameraView<T>, ray: &Ray<T>) -> Option<Hit<T>> {
    let (ga, gb) = clip_to_grid(vol, ray)?;
    let t_start = (view.z_min / ray.z_per_t).max(ga);
    let t_end = (view.z_max / ray.z_per_t).min(gb);
    if !(t_start <= t_end) {
        return None;
    }
    let tr = vol.truncation();
    let step = tr * T::lit(0.5);

    // coarse march
    let mut prev: Option<(T, T)> = None;
    let mut bracket = None;
    let mut t = t_start;
    while t <= t_end {
        match tsdf_at(vol, ray.at(t)) {
            None => prev = None,
            Some((s, _)) => {
                if let Some((tp, sp)) = prev {
                    if sp > T::zero() && s <= T::zero() {
                        bracket = Some((tp, sp, t, s));
                        break;
                    }
                }
                prev = Some((t, s));
            }
        }
        t += step;
    }
    let (mut a, mut sa, mut b, mut sb) = bracket?;

    // bisection
    let bis_tol = T::lit(BISECTION_TOL) * tr;
    for _ in 0..BISECTION_ITERS {
        let m = (a + b) * T::lit(0.5);
        let (sm, _) = tsdf_at(vol, ray.at(m))?;
        if sm > T::zero() {
            a = m;
            sa = sm;
        } else {
            b = m;
            sb = sm;
        }
        if sm.abs() < bis_tol {
            break;
        }
    }

    // linear interpolation, then Newton polish kept inside the bracket
    let mut t = a + (b - a) * sa / (sa - sb);
    let root_tol = T::epsilon() * T::lit(64.0) * tr;
    for _ in 0..POLISH_ITERS {
        let (s, st) = tsdf_at(vol, ray.at(t))?;
        if s.abs() <= root_tol {
            break;
        }
        if s > T::zero() {
            a = t;
        } else {
            b = t;
        }
        let ds = st.blend_gradient(&vol.tsdf).dot(ray.dir);
        let newton = t - s / ds;
        let next = if ds != T::zero() && newton > a && newton < b { newton } else { (a + b) * T::lit(0.5) };
        if (next - t).abs() <= T::epsilon() * T::lit(8.0) * t.abs().max(T::one()) {
            t = next;
            break;
        }
        t = next;
    }

    let x = ray.at(t);
    let st = vol.observed_stencil(x)?;
    let color = [st.blend(&vol.color[0]), st.blend(&vol.color[1]), st.blend(&vol.color[2])];

    let h = vol.voxel_size() * T::lit(0.5);
    let mut g = [T::zero(); 3];
    for (ax, gv) in g.iter_mut().enumerate() {
        let mut e = [T::zero(); 3];
        e[ax] = h;
        let e = Vec3::from_array(e);
        let (sp, _) = tsdf_at(vol, x + e)?;
        let (sm, _) = tsdf_at(vol, x - e)?;
        *gv = (sp - sm) / (h + h);
    }
    let normal = Vec3::from_array(g).normalized(T::lit(MIN_NORMAL_GRADIENT))?;
    Some(Hit { t, normal, color })
}

/// Renders depth, normal and color images of `vol` from `view`.
pub fn render<T: Real>(vol: &TsdfVolume<T>, view: &CameraView<T>) -> RenderedViews<T> {
    let (w, h) = (view.width, view.height);
    let hits: Vec<Option<(T, Hit<T>)>> = (0..w * h)
        .into_par_iter()
        .with_min_len(PIXELS_PER_TASK)
        .map(|p| {
            let ray = view.ray(p % w, p / w);
            trace(vol, view, &ray).map(|hit| (ray.z_per_t, hit))
        })
        .collect();
    let mut out = RenderedViews::empty(w, h);
    for (p, hit) in hits.into_iter().enumerate() {
        if let Some((z_per_t, hit)) = hit {
            out.valid.data[p] = true;
            out.depth.data[p] = hit.t * z_per_t;
            out.normal.data[p] = hit.normal;
            out.color.data[p] = hit.color;
            out.hit_t.data[p] = hit.t;
        }
    }
    out
}

/// Accumulates `dL/dtsdf` and `dL/dcolor` for upstream image gradients.
///
/// Invalid pixels contribute nothing. Contributions are summed in pixel order,
/// so repeated runs are bit-identical.
pub fn render_backward<T: Real>(
    vol: &TsdfVolume<T>,
    view: &CameraView<T>,
    rendered: &RenderedViews<T>,
    dl_ddepth: &Image<T>,
    dl_dcolor: &Image<[T; 3]>,
) -> Result<VolumeGradients<T>> {
    let (w, h) = (view.width, view.height);
    rendered.depth.ensure_dims(w, h)?;
    rendered.valid.ensure_dims(w, h)?;
    rendered.hit_t.ensure_dims(w, h)?;
    dl_ddepth.ensure_dims(w, h)?;
    dl_dcolor.ensure_dims(w, h)?;

    type Contribution<T> = ([usize; 8], [T; 8], [[T; 8]; 3]);
    let contributions: Vec<Option<Contribution<T>>> = (0..w * h)
        .into_par_iter()
        .with_min_len(PIXELS_PER_TASK)
        .map(|p| {
            if !rendered.valid.data[p] {
                return None;
            }
            let gd = dl_ddepth.data[p];
            let gc = dl_dcolor.data[p];
            if gd == T::zero() && gc.iter().all(|g| *g == T::zero()) {
                return None;
            }
            let ray = view.ray(p % w, p / w);
            let x = ray.at(rendered.hit_t.data[p]);
            let st = vol.observed_stencil(x)?;
            let slope = st.blend_gradient(&vol.tsdf).dot(ray.dir);

            // dL/dt* from depth and from the color sample moving along the ray
            let mut dl_dt = gd * ray.z_per_t;
            for c in 0..3 {
                dl_dt += gc[c] * st.blend_gradient(&vol.color[c]).dot(ray.dir);
            }
            let mut d_tsdf = [T::zero(); 8];
            if slope != T::zero() {
                let k = -dl_dt / slope;
                for (d, wc) in d_tsdf.iter_mut().zip(st.weights) {
                    *d = k * wc;
                }
            }
            let mut d_color = [[T::zero(); 8]; 3];
            for c in 0..3 {
                for (d, wc) in d_color[c].iter_mut().zip(st.weights) {
                    *d = gc[c] * wc;
                }
            }
            Some((st.indices, d_tsdf, d_color))
        })
        .collect();

    let mut grads = VolumeGradients::zeros(vol.dims());
    for (idx, dt, dc) in contributions.into_iter().flatten() {
        for i in 0..8 {
            grads.d_tsdf[idx[i]] += dt[i];
            for c in 0..3 {
                grads.d_color[c][idx[i]] += dc[c][i];
            }
        }
    }
    Ok(grads)
}
