//! Colored TSDF fusion, differentiable raycasting and self-supervised refinement
//! of incomplete RGB-D scans.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the scalar for common use.

pub mod camera;
pub mod color;
pub mod datagen;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod loss;
pub mod mesh;
pub mod metrics;
pub mod refine;
pub mod render;
pub mod scalar;
pub mod scan;
pub mod spatial;
pub mod volume;

pub use camera::{CameraView, Image, Intrinsics, Projection, Ray, RgbdFrame};
pub use error::{Error, Result};
pub use color::{lab_to_rgb, rgb_to_lab};
pub use fusion::{enclosing_grid, fuse_frame, fuse_scan};
pub use geom::{RigidTransform, Vec3};
pub use loss::{masked_l1_color, masked_l1_depth, reconstruction_loss, tsdf_l1, LossReport, DEFAULT_W_G};
pub use datagen::{associate_frames, make_pair, sample_chunks, ChunkSample, ScanPair};
pub use metrics::{chamfer, ssim, ssim_rgb, voxel_iou_recall};
pub use mesh::{marching_cubes, ColoredMesh};
pub use refine::{adam_step, refine_volume, AdamParams, AdamState, RefineConfig};
pub use render::{render, render_backward, RenderedViews, VolumeGradients};
pub use scalar::Real;
pub use scan::{load_scan, save_scan, synth_frames, synth_scene, SceneKind, SynthParams};
pub use volume::{Channel, GridSpec, Sample, Stencil, TsdfVolume};

pub type TsdfVolumeF32 = TsdfVolume<f32>;
pub type TsdfVolumeF64 = TsdfVolume<f64>;
pub type CameraViewF64 = CameraView<f64>;
pub type RgbdFrameF64 = RgbdFrame<f64>;
