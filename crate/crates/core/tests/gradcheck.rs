mod common;

use common::*;
use tsdf_refine::color::rgb_to_lab;
use tsdf_refine::{reconstruction_loss, render, render_backward, RgbdFrame, TsdfVolume, DEFAULT_W_G};

#[test]
fn render_backward_matches_finite_differences() {
    for seed in 0..20u64 {
        let vol = near_surface_volume(seed);
        let view = small_view(seed);
        let loss = LinearImageLoss::random(seed, 16, 16);
        let r = render(&vol, &view);
        assert!(r.num_valid() > 50, "seed {seed}: only {} valid pixels", r.num_valid());
        let g = render_backward(&vol, &view, &r, &loss.a, &loss.b).unwrap();
        let res = check_gradients(&vol, &g.d_tsdf, &g.d_color, 1e-3, 1e-6, 1e-3, |v| loss.eval_with_cells(v, &view));
        println!("seed {seed}: checked {} straddled {} worst rel {:.3e}", res.checked, res.straddled, res.worst_rel);
        assert!(res.failures.is_empty(), "seed {seed}: {:#?}", res.failures);
    }
}

/// Target frame rendered from an unrelated volume, so depth and color
/// residuals are generically far from zero.
fn target_frame(seed: u64, view: &tsdf_refine::CameraView<f64>) -> RgbdFrame<f64> {
    let r = render(&near_surface_volume(seed + 1000), view);
    RgbdFrame::new(*view, r.depth, r.color, seed as u32).unwrap()
}

/// Per-pixel hit cell plus the sign of every L1 residual: the loss is
/// smooth only while all of these stay fixed.
fn loss_signature(v: &TsdfVolume<f64>, target_vol: &TsdfVolume<f64>, frames: &[&RgbdFrame<f64>]) -> Vec<i64> {
    let mut sig = Vec::new();
    for f in frames {
        let r = render(v, &f.view);
        for p in 0..f.view.num_pixels() {
            if !r.valid.data[p] {
                sig.push(i64::MIN);
                continue;
            }
            let ray = f.view.ray(p % f.view.width, p / f.view.width);
            let u = v.grid.world_to_voxel(ray.at(r.hit_t.data[p]));
            sig.extend([u.x.floor() as i64, u.y.floor() as i64, u.z.floor() as i64]);
            if f.depth.data[p] > 0.0 {
                sig.push((r.depth.data[p] - f.depth.data[p]).signum() as i64);
                let (a, b) = (rgb_to_lab(r.color.data[p]), rgb_to_lab(f.color.data[p]));
                sig.extend((0..3).map(|c| (a[c] - b[c]).signum() as i64));
            }
        }
    }
    sig.extend((0..v.num_voxels()).filter(|&i| target_vol.weight[i] > 0.0).map(|i| (v.tsdf[i] - target_vol.tsdf[i]).signum() as i64));
    sig
}

#[test]
fn reconstruction_loss_matches_finite_differences() {
    for seed in 0..4u64 {
        let vol = near_surface_volume(seed);
        // scaled so no voxel ties with the clamped prediction (L1 kink at 0)
        let mut target_vol = near_surface_volume(seed + 500);
        target_vol.tsdf.iter_mut().for_each(|t| *t *= 0.9);
        let frames = [target_frame(seed, &small_view(seed)), target_frame(seed, &small_view(seed + 77))];
        let refs: Vec<&RgbdFrame<f64>> = frames.iter().collect();
        let (_, g) = reconstruction_loss(&vol, &target_vol, &refs, DEFAULT_W_G, true).unwrap();
        let g = g.unwrap();
        let f = |v: &TsdfVolume<f64>| {
            let l = reconstruction_loss(v, &target_vol, &refs, DEFAULT_W_G, false).unwrap().0.total;
            (l, loss_signature(v, &target_vol, &refs))
        };
        let res = check_gradients(&vol, &g.d_tsdf, &g.d_color, 1e-3, 1e-6, 1e-3, f);
        println!("seed {seed}: checked {} straddled {} worst rel {:.3e}", res.checked, res.straddled, res.worst_rel);
        assert!(res.checked > 300);
        assert!(res.failures.is_empty(), "seed {seed}: {:#?}", res.failures);
    }
}
