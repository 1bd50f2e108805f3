//! Weighted-average volumetric fusion of RGB-D frames.

use rayon::prelude::*;

use crate::camera::RgbdFrame;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{GridSpec, TsdfVolume};

/// Integrates one frame by projecting every voxel center into it.
///
/// A voxel is updated when its projection lands on a valid depth pixel and the
/// projective signed distance `d - z` is at least `-truncation`. Each
/// observation has weight 1. Color is only averaged inside the truncation band.
pub fn fuse_frame<T: Real>(vol: &mut TsdfVolume<T>, frame: &RgbdFrame<T>) -> Result<()> {
    frame.view.validate()?;
    frame.depth.ensure_dims(frame.view.width, frame.view.height)?;
    frame.color.ensure_dims(frame.view.width, frame.view.height)?;

    let grid = vol.grid;
    let tr = grid.truncation;
    let [r, g, b] = &mut vol.color;
    vol.tsdf
        .par_iter_mut()
        .zip(vol.weight.par_iter_mut())
        .zip(vol.color_weight.par_iter_mut())
        .zip(r.par_iter_mut().zip(g.par_iter_mut()).zip(b.par_iter_mut()))
        .enumerate()
        .for_each(|(idx, (((tsdf, w), cw), ((r, g), b)))| {
            let [i, j, k] = grid.coords(idx);
            let proj = frame.view.project(grid.voxel_center(i, j, k));
            let Some((px, py)) = frame.view.pixel_of(&proj) else { return };
            let Some(d) = frame.valid_depth(px, py) else { return };
            let sdf = d - proj.depth;
            if sdf < -tr {
                return;
            }
            let one = T::one();
            let clamped = sdf.min(tr);
            *tsdf = (*w * *tsdf + clamped) / (*w + one);
            *w += one;
            if sdf <= tr {
                let c = frame.color.get(px, py);
                let denom = *cw + one;
                *r = (*cw * *r + c[0]) / denom;
                *g = (*cw * *g + c[1]) / denom;
                *b = (*cw * *b + c[2]) / denom;
                *cw += one;
            }
        });
    Ok(())
}

/// Fuses all frames, in order, into a fresh volume on `grid`.
pub fn fuse_scan<T: Real>(frames: &[RgbdFrame<T>], grid: GridSpec<T>) -> Result<TsdfVolume<T>> {
    if frames.is_empty() {
        return Err(Error::Empty("frame list"));
    }
    let mut vol = TsdfVolume::new(grid)?;
    for f in frames {
        fuse_frame(&mut vol, f)?;
    }
    Ok(vol)
}

/// Grid enclosing every back-projected depth point plus a margin of
/// `truncation + voxel_size` on each side.
pub fn enclosing_grid<T: Real>(frames: &[RgbdFrame<T>], voxel_size: T, truncation: T) -> Result<GridSpec<T>> {
    let mut bounds = None;
    for f in frames {
        for p in f.back_project() {
            bounds = Some(match bounds {
                None => (p, p),
                Some((lo, hi)) => (p.min(lo), p.max(hi)),
            });
        }
    }
    let (lo, hi) = bounds.ok_or(Error::Empty("no valid depth pixels"))?;
    let pad = crate::geom::Vec3::splat(truncation + voxel_size);
    Ok(GridSpec::covering(lo - pad, hi + pad, voxel_size, truncation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{CameraView, Image, Intrinsics};
    use crate::geom::{RigidTransform, Vec3};

    fn plane_frame(z: f64, id: u32) -> RgbdFrame<f64> {
        let view = CameraView::new(
            Intrinsics { fx: 40.0, fy: 40.0, cx: 15.5, cy: 15.5 },
            32,
            32,
            RigidTransform::identity(),
        );
        RgbdFrame::new(view, Image::filled(32, 32, z), Image::filled(32, 32, [0.2, 0.4, 0.6]), id).unwrap()
    }

    fn grid() -> GridSpec<f64> {
        GridSpec::new([10, 10, 20], 0.02, Vec3::new(-0.09, -0.09, 0.8))
    }

    #[test]
    fn frontal_plane_matches_point_plane_distance() {
        let vol = fuse_scan(&[plane_frame(1.0, 0)], grid()).unwrap();
        let tr = vol.truncation();
        for idx in 0..vol.num_voxels() {
            let [i, j, k] = vol.grid.coords(idx);
            let z = vol.grid.voxel_center(i, j, k).z;
            let sdf = 1.0 - z;
            if sdf >= -tr {
                assert_eq!(vol.weight[idx], 1.0);
                assert!((vol.tsdf[idx] - sdf.min(tr)).abs() < 1e-3);
            } else {
                assert_eq!(vol.weight[idx], 0.0);
            }
        }
        vol.check_invariants().unwrap();
    }

    #[test]
    fn invalid_depth_pixels_are_skipped() {
        let mut frame = plane_frame(1.0, 0);
        frame.depth.data.fill(0.0);
        let vol = fuse_scan(&[frame], grid()).unwrap();
        assert!(vol.weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn double_fusion_keeps_values_and_doubles_weight() {
        let f = plane_frame(1.0, 0);
        let once = fuse_scan(std::slice::from_ref(&f), grid()).unwrap();
        let twice = fuse_scan(&[f.clone(), f], grid()).unwrap();
        assert_eq!(once.tsdf, twice.tsdf);
        assert_eq!(once.color, twice.color);
        for (a, b) in once.weight.iter().zip(&twice.weight) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn empty_frame_list_rejected() {
        assert!(fuse_scan::<f64>(&[], grid()).is_err());
    }

    #[test]
    fn bad_pose_rejected() {
        let mut f = plane_frame(1.0, 0);
        f.view.pose.rotation[0][0] = 2.0;
        let mut vol = TsdfVolume::new(grid()).unwrap();
        assert!(fuse_frame(&mut vol, &f).is_err());
    }

    #[test]
    fn color_only_in_band() {
        let vol = fuse_scan(&[plane_frame(1.0, 0)], grid()).unwrap();
        for idx in 0..vol.num_voxels() {
            if vol.weight[idx] > 0.0 && vol.tsdf[idx] < vol.truncation() {
                assert!((vol.color[2][idx] - 0.6).abs() < 1e-12);
            }
        }
        let far = vol.index(0, 0, 0);
        assert_eq!(vol.weight[far], 1.0);
        assert_eq!(vol.color_weight[far], 0.0);
    }
}
