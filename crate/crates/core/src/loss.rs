//! Masked L1 reconstruction losses on rendered views and on the 3D TSDF.
//!
//! `total = w_g * l_geo3d + l_depth + l_color`. The 2D terms are averaged over
//! views. Pixels count only when valid in both the rendering and the target,
//! where target validity is a positive depth measurement (color shares it).

use serde::Serialize;

use crate::camera::{Image, RgbdFrame};
use crate::color::{rgb_to_lab, rgb_to_lab_jacobian, LAB_LOSS_SCALE};
use crate::error::{Error, Result};
use crate::render::{render, render_backward, VolumeGradients};
use crate::scalar::Real;
use crate::volume::TsdfVolume;

/// Weight of the 3D geometric term.
pub const DEFAULT_W_G: f64 = 0.1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_depth: f64,
    pub l_color: f64,
    pub l_geo3d: f64,
    pub total: f64,
    pub n_valid_pixels: usize,
    pub n_valid_voxels: usize,
}

fn check_same<A, B>(a: &Image<A>, b: &Image<B>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch { expected: a.dims(), got: b.dims() });
    }
    Ok(())
}

fn check_all<A, B, C, D>(a: &Image<A>, b: &Image<B>, c: &Image<C>, d: &Image<D>) -> Result<()> {
    check_same(a, b)?;
    check_same(a, c)?;
    check_same(a, d)
}

/// Mean |D - D_t| over jointly valid pixels; `(0, 0)` when none qualify.
pub fn masked_l1_depth<T: Real>(
    depth: &Image<T>,
    valid: &Image<bool>,
    target: &Image<T>,
    target_valid: &Image<bool>,
) -> Result<(T, usize)> {
    depth_term(depth, valid, target, target_valid, false).map(|(l, n, _)| (l, n))
}

/// Lab L1 (Lab scaled by 1/100) summed over channels, divided by 3N.
pub fn masked_l1_color<T: Real>(
    color: &Image<[T; 3]>,
    valid: &Image<bool>,
    target: &Image<[T; 3]>,
    target_valid: &Image<bool>,
) -> Result<(T, usize)> {
    color_term(color, valid, target, target_valid, false).map(|(l, n, _)| (l, n))
}

fn depth_term<T: Real>(
    depth: &Image<T>,
    valid: &Image<bool>,
    target: &Image<T>,
    target_valid: &Image<bool>,
    with_grad: bool,
) -> Result<(T, usize, Option<Image<T>>)> {
    check_all(depth, valid, target, target_valid)?;
    let mask = |p: usize| valid.data[p] && target_valid.data[p];
    let n = (0..depth.data.len()).filter(|&p| mask(p)).count();
    if n == 0 {
        let grad = with_grad.then(|| Image::filled(depth.width, depth.height, T::zero()));
        return Ok((T::zero(), 0, grad));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut sum = T::zero();
    for p in (0..depth.data.len()).filter(|&p| mask(p)) {
        sum += (depth.data[p] - target.data[p]).abs();
    }
    let grad = with_grad.then(|| {
        let data = (0..depth.data.len())
            .map(|p| if mask(p) { (depth.data[p] - target.data[p]).sign0() * inv_n } else { T::zero() })
            .collect();
        Image { width: depth.width, height: depth.height, data }
    });
    Ok((sum * inv_n, n, grad))
}

fn color_term<T: Real>(
    color: &Image<[T; 3]>,
    valid: &Image<bool>,
    target: &Image<[T; 3]>,
    target_valid: &Image<bool>,
    with_grad: bool,
) -> Result<(T, usize, Option<Image<[T; 3]>>)> {
    check_all(color, valid, target, target_valid)?;
    let mask = |p: usize| valid.data[p] && target_valid.data[p];
    let n = (0..color.data.len()).filter(|&p| mask(p)).count();
    let mut grad = with_grad.then(|| Image::filled(color.width, color.height, [T::zero(); 3]));
    if n == 0 {
        return Ok((T::zero(), 0, grad));
    }
    let scale = T::lit(LAB_LOSS_SCALE);
    let norm = T::one() / (T::lit(3.0) * T::from_usize_lossy(n));
    let mut sum = T::zero();
    for p in (0..color.data.len()).filter(|&p| mask(p)) {
        let a = rgb_to_lab(color.data[p]);
        let b = rgb_to_lab(target.data[p]);
        let diff = [0, 1, 2].map(|c| (a[c] - b[c]) * scale);
        sum += diff.iter().map(|d| d.abs()).sum::<T>();
        if let Some(g) = grad.as_mut() {
            let jac = rgb_to_lab_jacobian(color.data[p]);
            let mut out = [T::zero(); 3];
            for (j, o) in out.iter_mut().enumerate() {
                for (i, d) in diff.iter().enumerate() {
                    *o += d.sign0() * scale * jac[i][j] * norm;
                }
            }
            g.data[p] = out;
        }
    }
    Ok((sum * norm, n, grad))
}

/// Mean |pred - target| of tsdf over voxels observed in the target.
pub fn tsdf_l1<T: Real>(pred: &TsdfVolume<T>, target: &TsdfVolume<T>) -> Result<(T, usize)> {
    tsdf_term(pred, target, None)
}

fn tsdf_term<T: Real>(
    pred: &TsdfVolume<T>,
    target: &TsdfVolume<T>,
    grad: Option<(&mut [T], T)>,
) -> Result<(T, usize)> {
    if !pred.grid.same_grid(&target.grid) {
        return Err(Error::GridMismatch(format!("{:?} vs {:?}", pred.grid.dims, target.grid.dims)));
    }
    let observed = || (0..target.num_voxels()).filter(|&i| target.weight[i] > T::zero());
    let n = observed().count();
    if n == 0 {
        return Ok((T::zero(), 0));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let sum: T = observed().map(|i| (pred.tsdf[i] - target.tsdf[i]).abs()).sum();
    if let Some((g, w)) = grad {
        for i in observed() {
            g[i] += w * (pred.tsdf[i] - target.tsdf[i]).sign0() * inv_n;
        }
    }
    Ok((sum * inv_n, n))
}

/// Validity of a target frame's pixels: a depth measurement exists.
pub fn target_mask<T: Real>(frame: &RgbdFrame<T>) -> Image<bool> {
    let data = frame.depth.data.iter().map(|d| *d > T::zero()).collect();
    Image { width: frame.depth.width, height: frame.depth.height, data }
}

/// Combined reconstruction loss of `pred` against target frames and the target volume.
///
/// With `with_grad`, also returns `∂total/∂(tsdf, color)`.
pub fn reconstruction_loss<T: Real>(
    pred: &TsdfVolume<T>,
    target_vol: &TsdfVolume<T>,
    frames: &[&RgbdFrame<T>],
    w_g: T,
    with_grad: bool,
) -> Result<(LossReport, Option<VolumeGradients<T>>)> {
    if frames.is_empty() {
        return Err(Error::Empty("view list"));
    }
    let inv_views = T::one() / T::from_usize_lossy(frames.len());
    let mut grads = with_grad.then(|| VolumeGradients::zeros(pred.dims()));
    let (mut l_depth, mut l_color) = (T::zero(), T::zero());
    let mut n_pixels = 0;
    for frame in frames {
        let view = &frame.view;
        view.validate()?;
        let r = render(pred, view);
        let mask = target_mask(frame);
        let (ld, n, gd) = depth_term(&r.depth, &r.valid, &frame.depth, &mask, with_grad)?;
        let (lc, _, gc) = color_term(&r.color, &r.valid, &frame.color, &mask, with_grad)?;
        l_depth += ld * inv_views;
        l_color += lc * inv_views;
        n_pixels += n;
        if let (Some(acc), Some(gd), Some(gc)) = (grads.as_mut(), gd, gc) {
            if n > 0 {
                let g = render_backward(pred, view, &r, &gd, &gc)?;
                acc.add_scaled(&g, inv_views)?;
            }
        }
    }
    let (l_geo, n_voxels) = tsdf_term(pred, target_vol, grads.as_mut().map(|g| (&mut g.d_tsdf[..], w_g)))?;
    let f = |x: T| x.to_f64_lossy();
    let report = LossReport {
        l_depth: f(l_depth),
        l_color: f(l_color),
        l_geo3d: f(l_geo),
        total: f(w_g) * f(l_geo) + f(l_depth) + f(l_color),
        n_valid_pixels: n_pixels,
        n_valid_voxels: n_voxels,
    };
    Ok((report, grads))
}
