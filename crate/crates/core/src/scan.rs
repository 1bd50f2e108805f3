//! Scan directories on disk and analytic synthetic scenes.
//!
//! Layout: `intrinsics.txt` holds `fx fy cx cy width height`; each frame `N`
//! has `frame-NNNNNN.depth.png` (16-bit, millimeters, 0 = invalid),
//! `frame-NNNNNN.color.png` (8-bit RGB) and `frame-NNNNNN.pose.txt` (4×4
//! row-major camera-to-world).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraView, Image, Intrinsics, RgbdFrame};
use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};
use crate::render::RenderedViews;
use crate::volume::unit_to_u8;

pub const INTRINSICS_FILE: &str = "intrinsics.txt";

fn scan_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Scan { path: path.to_path_buf(), msg: msg.into() }
}

pub fn frame_path(dir: &Path, id: u32, suffix: &str) -> PathBuf {
    dir.join(format!("frame-{id:06}.{suffix}"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| scan_err(path, e.to_string()))
}

fn parse_numbers(path: &Path, text: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| scan_err(path, format!("not a number: {t:?}"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(scan_err(path, format!("expected {n} numbers, found {}", v.len())));
    }
    Ok(v)
}

fn read_intrinsics(dir: &Path) -> Result<(Intrinsics<f64>, usize, usize)> {
    let path = dir.join(INTRINSICS_FILE);
    let v = parse_numbers(&path, &read_text(&path)?, 6)?;
    let dim = |x: f64| {
        (x >= 1.0 && x.fract() == 0.0).then_some(x as usize).ok_or_else(|| scan_err(&path, "bad image size"))
    };
    let (w, h) = (dim(v[4])?, dim(v[5])?);
    Ok((Intrinsics { fx: v[0], fy: v[1], cx: v[2], cy: v[3] }, w, h))
}

fn read_pose(path: &Path) -> Result<RigidTransform<f64>> {
    let v = parse_numbers(path, &read_text(path)?, 16)?;
    let m: [[f64; 4]; 4] = std::array::from_fn(|r| std::array::from_fn(|c| v[4 * r + c]));
    RigidTransform::from_matrix(m).map_err(|e| scan_err(path, e.to_string()))
}

fn open_png(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(scan_err(path, "missing file"));
    }
    image::open(path).map_err(|e| scan_err(path, e.to_string()))
}

fn check_size(path: &Path, got: (u32, u32), w: usize, h: usize) -> Result<()> {
    if got != (w as u32, h as u32) {
        return Err(scan_err(path, format!("image is {}x{}, intrinsics say {w}x{h}", got.0, got.1)));
    }
    Ok(())
}

/// Frame ids present in the directory, from any of the per-frame files.
fn frame_ids(dir: &Path) -> Result<BTreeSet<u32>> {
    let mut ids = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| scan_err(dir, e.to_string()))? {
        let name = entry?.file_name();
        let Some(name) = name.to_str() else { continue };
        let Some(rest) = name.strip_prefix("frame-") else { continue };
        let Some((num, suffix)) = rest.split_once('.') else { continue };
        if matches!(suffix, "depth.png" | "color.png" | "pose.txt") {
            if let Ok(id) = num.parse::<u32>() {
                ids.insert(id);
            }
        }
    }
    Ok(ids)
}

/// Loads every frame, sorted by id, with depth in meters.
pub fn load_scan(dir: &Path) -> Result<Vec<RgbdFrame<f64>>> {
    let (k, w, h) = read_intrinsics(dir)?;
    let mut frames = Vec::new();
    for id in frame_ids(dir)? {
        let paths = ["depth.png", "color.png", "pose.txt"].map(|s| frame_path(dir, id, s));
        if let Some(missing) = paths.iter().find(|p| !p.exists()) {
            return Err(scan_err(missing, "missing file"));
        }
        let pose = read_pose(&paths[2])?;
        let depth = match open_png(&paths[0])? {
            DynamicImage::ImageLuma16(b) => b,
            _ => return Err(scan_err(&paths[0], "depth must be a 16-bit grayscale PNG")),
        };
        check_size(&paths[0], depth.dimensions(), w, h)?;
        let color = open_png(&paths[1])?.into_rgb8();
        check_size(&paths[1], color.dimensions(), w, h)?;
        let depth = Image::from_vec(w, h, depth.into_raw().into_iter().map(|mm| mm as f64 / 1000.0).collect())?;
        let color = Image::from_vec(
            w,
            h,
            color.pixels().map(|p| [0, 1, 2].map(|c| p.0[c] as f64 / 255.0)).collect(),
        )?;
        let view = CameraView::new(k, w, h, pose);
        frames.push(RgbdFrame::new(view, depth, color, id)?);
    }
    Ok(frames)
}

/// Writes frames in the scan layout. All frames must share intrinsics and size.
pub fn save_scan(dir: &Path, frames: &[RgbdFrame<f64>]) -> Result<()> {
    let first = frames.first().ok_or(Error::Empty("frame list"))?;
    fs::create_dir_all(dir)?;
    let v0 = &first.view;
    let k = v0.intrinsics;
    fs::write(
        dir.join(INTRINSICS_FILE),
        format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, v0.width, v0.height),
    )?;
    for f in frames {
        let v = &f.view;
        if v.intrinsics != k || (v.width, v.height) != (v0.width, v0.height) {
            return Err(Error::InvalidCamera(format!("frame {} has different intrinsics", f.frame_id)));
        }
        let (w, h) = (v.width as u32, v.height as u32);
        let mm: Vec<u16> = f.depth.data.iter().map(|d| depth_to_mm(*d)).collect();
        let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, mm).expect("size checked");
        depth.save(frame_path(dir, f.frame_id, "depth.png"))?;
        let rgb: Vec<u8> = f.color.data.iter().flat_map(|c| c.map(unit_to_u8)).collect();
        let color: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, rgb).expect("size checked");
        color.save(frame_path(dir, f.frame_id, "color.png"))?;
        let mut pose = String::new();
        for row in v.pose.to_matrix() {
            let _ = writeln!(pose, "{} {} {} {}", row[0], row[1], row[2], row[3]);
        }
        fs::write(frame_path(dir, f.frame_id, "pose.txt"), pose)?;
    }
    Ok(())
}

/// Writes rendered images as PNGs: depth in 16-bit millimeters, normals as
/// `(n + 1) / 2` in 8 bits, color in 8 bits. Invalid pixels are 0 in all three.
pub fn save_rendered(r: &RenderedViews<f64>, depth: &Path, normal: &Path, color: &Path) -> Result<()> {
    let (w, h) = (r.width() as u32, r.height() as u32);
    let mm: Vec<u16> =
        r.depth.data.iter().zip(&r.valid.data).map(|(d, v)| if *v { depth_to_mm(*d) } else { 0 }).collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, mm).expect("image size").save(depth)?;
    let mut n8 = Vec::with_capacity(3 * r.normal.data.len());
    let mut c8 = Vec::with_capacity(3 * r.color.data.len());
    for p in 0..r.valid.data.len() {
        if r.valid.data[p] {
            let n = r.normal.data[p].to_array();
            n8.extend(n.map(|x| unit_to_u8((x + 1.0) * 0.5)));
            c8.extend(r.color.data[p].map(unit_to_u8));
        } else {
            n8.extend([0; 3]);
            c8.extend([0; 3]);
        }
    }
    ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, n8).expect("image size").save(normal)?;
    ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, c8).expect("image size").save(color)?;
    Ok(())
}

/// Meters to the 16-bit millimeter encoding; out-of-range depths become 0.
pub fn depth_to_mm(d: f64) -> u16 {
    let mm = (d * 1000.0).round();
    if mm >= 1.0 && mm <= u16::MAX as f64 {
        mm as u16
    } else {
        0
    }
}

/// Primitive surfaces with exact ray intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3<f64>, radius: f64 },
    /// Axis-aligned solid box.
    Cuboid { lo: Vec3<f64>, hi: Vec3<f64> },
    /// Axis-aligned rectangle at `coord` along `axis`, bounded by `lo..hi`
    /// on the other two axes.
    Rect { axis: usize, coord: f64, lo: Vec3<f64>, hi: Vec3<f64> },
}

impl Shape {
    /// Smallest ray parameter `t > 0` at which the ray meets the surface.
    pub fn intersect(&self, o: Vec3<f64>, d: Vec3<f64>) -> Option<f64> {
        const EPS: f64 = 1e-9;
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = o - center;
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - c * d.dot(d);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let dd = d.dot(d);
                [(-b - s) / dd, (-b + s) / dd].into_iter().find(|t| *t > EPS)
            }
            Shape::Cuboid { lo, hi } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a] < lo[a] || o[a] > hi[a] {
                            return None;
                        }
                        continue;
                    }
                    let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
                if t0 > t1 {
                    return None;
                }
                [t0, t1].into_iter().find(|t| *t > EPS)
            }
            Shape::Rect { axis, coord, lo, hi } => {
                if d[axis] == 0.0 {
                    return None;
                }
                let t = (coord - o[axis]) / d[axis];
                if t <= EPS {
                    return None;
                }
                let p = o + d * t;
                (0..3).filter(|a| *a != axis).all(|a| p[a] >= lo[a] && p[a] <= hi[a]).then_some(t)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Sphere,
    Box,
    Room,
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Self::Sphere),
            "box" => Ok(Self::Box),
            "room" => Ok(Self::Room),
            _ => Err(Error::InvalidArgument(format!("unknown scene {s:?}; expected sphere, box or room"))),
        }
    }
}

/// Sphere scene: radius 0.5 at the origin.
pub const SPHERE_RADIUS: f64 = 0.5;
/// Camera distance from the origin for the sphere and box orbits.
pub const ORBIT_DISTANCE: f64 = 2.0;

/// Room interior bounds.
pub const ROOM_LO: [f64; 3] = [-1.0, -1.0, 0.0];
pub const ROOM_HI: [f64; 3] = [1.0, 1.0, 1.2];

impl SceneKind {
    pub fn objects(self) -> Vec<SceneObject> {
        let v = |x, y, z| Vec3::new(x, y, z);
        match self {
            SceneKind::Sphere => vec![SceneObject {
                shape: Shape::Sphere { center: Vec3::zero(), radius: SPHERE_RADIUS },
                color: [0.8, 0.3, 0.2],
            }],
            SceneKind::Box => vec![SceneObject {
                shape: Shape::Cuboid { lo: v(-0.3, -0.2, -0.25), hi: v(0.3, 0.2, 0.25) },
                color: [0.2, 0.5, 0.8],
            }],
            SceneKind::Room => {
                let (lo, hi) = (Vec3::from_array(ROOM_LO), Vec3::from_array(ROOM_HI));
                let wall = |axis: usize, coord: f64, color: [f64; 3]| SceneObject {
                    shape: Shape::Rect { axis, coord, lo, hi },
                    color,
                };
                vec![
                    wall(2, lo.z, [0.55, 0.45, 0.35]),
                    wall(2, hi.z, [0.9, 0.9, 0.85]),
                    wall(0, lo.x, [0.75, 0.3, 0.3]),
                    wall(0, hi.x, [0.3, 0.65, 0.35]),
                    wall(1, lo.y, [0.35, 0.4, 0.75]),
                    wall(1, hi.y, [0.85, 0.8, 0.35]),
                    SceneObject { shape: Shape::Cuboid { lo: v(0.05, -0.4, 0.0), hi: v(0.4, -0.05, 0.35) }, color: [0.2, 0.35, 0.6] },
                    SceneObject { shape: Shape::Sphere { center: v(-0.25, 0.2, 0.22), radius: 0.22 }, color: [0.95, 0.75, 0.2] },
                ]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub kind: SceneKind,
    pub n_views: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (fx = fy); the principal point is the image center.
    pub focal: f64,
}

impl SynthParams {
    /// Default image size and focal length for a scene kind.
    pub fn new(kind: SceneKind, n_views: usize, seed: u64) -> Self {
        let (width, height, focal) = match kind {
            SceneKind::Sphere | SceneKind::Box => (81, 81, 100.0),
            SceneKind::Room => (81, 61, 60.0),
        };
        Self { kind, n_views, seed, width, height, focal }
    }

    pub fn intrinsics(&self) -> Intrinsics<f64> {
        Intrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: (self.width as f64 - 1.0) * 0.5,
            cy: (self.height as f64 - 1.0) * 0.5,
        }
    }

    /// Seeded camera poses: an orbit around the origin, or a ring inside
    /// the room looking across it.
    pub fn poses(&self) -> Result<Vec<RigidTransform<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let up = Vec3::new(0.0, 0.0, 1.0);
        (0..self.n_views)
            .map(|i| {
                let az = phase + std::f64::consts::TAU * i as f64 / self.n_views as f64;
                let (eye, target) = match self.kind {
                    SceneKind::Sphere | SceneKind::Box => {
                        // alternate above and below the equator so both poles are seen
                        let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                        let el: f64 = side * 0.55 + rng.gen_range(-0.1..0.1);
                        let dir = Vec3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin());
                        (dir * ORBIT_DISTANCE, Vec3::zero())
                    }
                    SceneKind::Room => {
                        let h = 0.75 + rng.gen_range(-0.05..0.05);
                        let eye = Vec3::new(0.8 * az.cos(), 0.8 * az.sin(), h);
                        let target = Vec3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), 0.3);
                        (eye, target)
                    }
                };
                RigidTransform::look_at(eye, target, up)
            })
            .collect()
    }
}

/// Renders the analytic scene into frames, quantized exactly as they would
/// be stored on disk (millimeter depth, 8-bit color).
pub fn synth_frames(p: &SynthParams) -> Result<Vec<RgbdFrame<f64>>> {
    if p.n_views == 0 {
        return Err(Error::InvalidArgument("n_views must be at least 1".into()));
    }
    if p.width == 0 || p.height == 0 || !(p.focal > 0.0) {
        return Err(Error::InvalidArgument("image size and focal length must be positive".into()));
    }
    let objects = p.kind.objects();
    let k = p.intrinsics();
    p.poses()?
        .into_iter()
        .enumerate()
        .map(|(id, pose)| {
            let view = CameraView::new(k, p.width, p.height, pose);
            let mut depth = Image::filled(p.width, p.height, 0.0);
            let mut color = Image::filled(p.width, p.height, [0.0; 3]);
            for y in 0..p.height {
                for x in 0..p.width {
                    let ray = view.ray(x, y);
                    let hit = objects
                        .iter()
                        .filter_map(|o| o.shape.intersect(ray.origin, ray.dir).map(|t| (t, o.color)))
                        .min_by(|a, b| a.0.total_cmp(&b.0));
                    if let Some((t, c)) = hit {
                        depth.set(x, y, depth_to_mm(t * ray.z_per_t) as f64 / 1000.0);
                        color.set(x, y, c.map(|v| unit_to_u8(v) as f64 / 255.0));
                    }
                }
            }
            RgbdFrame::new(view, depth, color, id as u32)
        })
        .collect()
}

/// Renders the scene and writes it as a scan directory.
pub fn synth_scene(dir: &Path, p: &SynthParams) -> Result<Vec<RgbdFrame<f64>>> {
    let frames = synth_frames(p)?;
    save_scan(dir, &frames)?;
    Ok(frames)
}
