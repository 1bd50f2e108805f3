//! Fusion and meshing against analytic scenes.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsdf_refine::metrics::sample_surface;
use tsdf_refine::spatial::KdTree;
use tsdf_refine::*;

fn sphere_frames() -> Vec<RgbdFrame<f64>> {
    synth_frames(&SynthParams::new(SceneKind::Sphere, 8, 4)).unwrap()
}

fn sphere_grid() -> GridSpec<f64> {
    GridSpec::covering(Vec3::splat(-0.7), Vec3::splat(0.7), 0.02, 0.06)
}

#[test]
fn fusion_is_order_invariant() {
    let mut frames = sphere_frames();
    let a = fuse_scan(&frames, sphere_grid()).unwrap();
    frames.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let b = fuse_scan(&frames, sphere_grid()).unwrap();
    assert_eq!(a.weight, b.weight);
    for i in 0..a.num_voxels() {
        assert!((a.tsdf[i] - b.tsdf[i]).abs() < 1e-5);
        for c in 0..3 {
            assert!((a.color[c][i] - b.color[c][i]).abs() < 1e-5);
        }
    }
}

#[test]
fn fused_sphere_is_within_one_voxel() {
    let grid = sphere_grid();
    let vol = fuse_scan(&sphere_frames(), grid).unwrap();
    let mesh = marching_cubes(&vol, 0.0);
    assert!(mesh.triangles.len() > 1000);
    // mesh to sphere
    let worst = mesh.vertices.iter().map(|v| (v.norm() - 0.5).abs()).fold(0.0, f64::max);
    assert!(worst <= grid.voxel_size, "vertex off by {worst}");
    // sphere to mesh, through dense surface samples
    let tree = KdTree::build(&sample_surface(&mesh, 60_000, 3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..2000 {
        let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let Some(d) = d.normalized(1e-3) else { continue };
        worst = worst.max(tree.nearest(d * 0.5).unwrap().1);
    }
    assert!(worst <= grid.voxel_size, "sphere point off by {worst}");
    eprintln!("sphere to mesh {worst:.4}");
}

/// Random field on a 14³ grid, positive on the boundary, so every
/// isosurface component is closed.
fn closed_random_field(seed: u64) -> TsdfVolume<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = GridSpec::new([14, 14, 14], 1.0, Vec3::zero());
    let mut vol = TsdfVolume::from_sdf(grid, |_| 0.0).unwrap();
    let tr = vol.truncation();
    for k in 0..14 {
        for j in 0..14 {
            for i in 0..14 {
                let edge = [i, j, k].iter().any(|&a| a == 0 || a == 13);
                let idx = vol.index(i, j, k);
                vol.tsdf[idx] = if edge { tr } else { rng.gen_range(-1.0..1.0) };
            }
        }
    }
    vol
}

#[test]
fn random_closed_fields_give_watertight_meshes() {
    for seed in 0..20 {
        let vol = closed_random_field(seed);
        let mesh = marching_cubes(&vol, 0.0);
        mesh.validate().unwrap();
        assert!(!mesh.triangles.is_empty());
        assert!(mesh.is_closed_manifold(), "seed {seed}: open or non-manifold edges");
        // closed orientable surfaces have even Euler characteristic
        assert_eq!(mesh.euler_characteristic() % 2, 0, "seed {seed}");
    }
}

#[test]
fn random_iso_levels_stay_watertight() {
    let vol = closed_random_field(99);
    for iso in [-0.5, -0.1, 0.0, 0.3, 0.7] {
        let mesh = marching_cubes(&vol, iso);
        assert!(mesh.is_closed_manifold(), "iso {iso}");
    }
}

