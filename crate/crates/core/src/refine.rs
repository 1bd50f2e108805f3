//! Direct optimization of a volume's distance and color fields against
//! target frames, through the renderer and the reconstruction loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::RgbdFrame;
use crate::error::{Error, Result};
use crate::loss::{reconstruction_loss, LossReport, DEFAULT_W_G};
use crate::scalar::Real;
use crate::volume::TsdfVolume;

/// Adam moments for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![T::zero(); len], v: vec![T::zero(); len], step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, hp: AdamParams<T>) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: if grads.len() != n { grads.len() } else { state.m.len() } });
    }
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let c1 = one - hp.beta1.powi(t);
    let c2 = one - hp.beta2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (one - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (one - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Refinement hyperparameters. Both step sizes start at their configured
/// value and decay to zero along a half cosine over `iterations`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig<T> {
    pub iterations: usize,
    /// Initial step scale for distances, in meters.
    pub lr_tsdf: T,
    /// Initial step scale for colors in [0, 1].
    pub lr_color: T,
    pub w_g: T,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_eps: T,
    pub views_per_step: usize,
    pub seed: u64,
}

impl<T: Real> RefineConfig<T> {
    /// Defaults for a grid with the given voxel size.
    pub fn for_voxel_size(voxel_size: T) -> Self {
        Self {
            iterations: 300,
            lr_tsdf: T::lit(0.1) * voxel_size,
            lr_color: T::lit(0.01),
            w_g: T::lit(DEFAULT_W_G),
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_eps: T::lit(1e-8),
            views_per_step: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.views_per_step == 0 {
            return bad("views_per_step must be at least 1");
        }
        if !(self.lr_tsdf > T::zero() && self.lr_color > T::zero()) {
            return bad("learning rates must be positive");
        }
        let unit = |b: T| b >= T::zero() && b < T::one();
        if !(unit(self.adam_beta1) && unit(self.adam_beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > T::zero()) || !(self.w_g >= T::zero()) {
            return bad("adam_eps must be positive and w_g nonnegative");
        }
        Ok(())
    }
}

/// Seeded frame order consumed in windows of `views_per_step`, wrapping.
struct FrameSchedule {
    order: Vec<usize>,
    next: usize,
}

impl FrameSchedule {
    fn new(n: usize, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self { order, next: 0 }
    }

    fn take(&mut self, k: usize) -> Vec<usize> {
        let k = k.min(self.order.len());
        (0..k)
            .map(|_| {
                let i = self.order[self.next];
                self.next = (self.next + 1) % self.order.len();
                i
            })
            .collect()
    }
}

/// Marks voxels observed by the target but not by `vol` as observed, with
/// distance `+truncation` (free space) and mid-gray color, so that the
/// renderer can grow surface into them.
pub fn activate_target_voxels<T: Real>(vol: &mut TsdfVolume<T>, target: &TsdfVolume<T>) -> usize {
    let mut n = 0;
    for i in 0..vol.num_voxels() {
        if vol.weight[i] <= T::zero() && target.weight[i] > T::zero() {
            vol.weight[i] = T::one();
            vol.color_weight[i] = T::one();
            vol.tsdf[i] = vol.grid.truncation;
            vol.set_rgb(i, [T::lit(0.5); 3]);
            n += 1;
        }
    }
    n
}

/// Optimizes `init` against `target_frames` and `target_vol`.
///
/// Returns the refined volume and the loss measured before each update.
/// Step-size multiplier at iteration `it` of `n`: half a cosine from 1 down to 0.
fn cosine_decay<T: Real>(it: usize, n: usize) -> T {
    let x = it as f64 / n as f64;
    T::lit(0.5 * (1.0 + (std::f64::consts::PI * x).cos()))
}

pub fn refine_volume<T: Real>(
    init: &TsdfVolume<T>,
    target_frames: &[RgbdFrame<T>],
    target_vol: &TsdfVolume<T>,
    cfg: &RefineConfig<T>,
) -> Result<(TsdfVolume<T>, Vec<LossReport>)> {
    cfg.validate()?;
    if target_frames.is_empty() {
        return Err(Error::Empty("target frames"));
    }
    if !init.grid.same_grid(&target_vol.grid) {
        return Err(Error::GridMismatch("initial and target volumes differ".into()));
    }
    let mut vol = init.clone();
    activate_target_voxels(&mut vol, target_vol);
    let n = vol.num_voxels();
    let hp_tsdf = AdamParams { lr: cfg.lr_tsdf, beta1: cfg.adam_beta1, beta2: cfg.adam_beta2, eps: cfg.adam_eps };
    let hp_color = AdamParams { lr: cfg.lr_color, ..hp_tsdf };
    let mut st_tsdf = AdamState::new(n);
    let mut st_color = [AdamState::new(n), AdamState::new(n), AdamState::new(n)];
    let mut schedule = FrameSchedule::new(target_frames.len(), cfg.seed);
    let tr = vol.grid.truncation;
    let mut history = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let decay = cosine_decay(it, cfg.iterations);
        let hp_tsdf = AdamParams { lr: hp_tsdf.lr * decay, ..hp_tsdf };
        let hp_color = AdamParams { lr: hp_color.lr * decay, ..hp_color };
        let views: Vec<&RgbdFrame<T>> =
            schedule.take(cfg.views_per_step).into_iter().map(|i| &target_frames[i]).collect();
        let (report, grads) = reconstruction_loss(&vol, target_vol, &views, cfg.w_g, true)?;
        let grads = grads.expect("gradients requested");
        history.push(report);
        adam_step(&mut vol.tsdf, &grads.d_tsdf, &mut st_tsdf, hp_tsdf)?;
        for c in 0..3 {
            adam_step(&mut vol.color[c], &grads.d_color[c], &mut st_color[c], hp_color)?;
        }
        for i in 0..n {
            // unobserved voxels hold the placeholder values
            if vol.weight[i] <= T::zero() {
                vol.tsdf[i] = tr;
                for c in 0..3 {
                    vol.color[c][i] = T::zero();
                }
                continue;
            }
            vol.tsdf[i] = vol.tsdf[i].max(-tr).min(tr);
            for c in 0..3 {
                vol.color[c][i] = vol.color[c][i].max(T::zero()).min(T::one());
            }
        }
    }
    Ok((vol, history))
}
