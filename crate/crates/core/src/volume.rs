//! Dense colored TSDF grid with trilinear sampling and the binary volume format.
//!
//! Voxel values live at voxel centers; `origin` is the world position of the
//! center of voxel `(0, 0, 0)`. Storage is x-fastest.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::scalar::Real;

pub const VOLUME_MAGIC: &[u8; 4] = b"TSDF";
pub const VOLUME_VERSION: u32 = 1;

/// Default voxel edge length in meters.
pub const DEFAULT_VOXEL_SIZE: f64 = 0.02;
/// Default truncation band in voxels.
pub const DEFAULT_TRUNCATION_VOXELS: f64 = 3.0;

/// Geometry of a voxel grid, without any per-voxel data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec<T> {
    pub dims: [usize; 3],
    pub voxel_size: T,
    pub origin: Vec3<T>,
    pub truncation: T,
}

impl<T: Real> GridSpec<T> {
    /// Grid with the default truncation of three voxels.
    pub fn new(dims: [usize; 3], voxel_size: T, origin: Vec3<T>) -> Self {
        Self {
            dims,
            voxel_size,
            origin,
            truncation: voxel_size * T::lit(DEFAULT_TRUNCATION_VOXELS),
        }
    }

    pub fn with_truncation(mut self, truncation: T) -> Self {
        self.truncation = truncation;
        self
    }

    /// Smallest grid whose voxel centers cover the box `[lo, hi]`.
    pub fn covering(lo: Vec3<T>, hi: Vec3<T>, voxel_size: T, truncation: T) -> Self {
        let ext = (hi - lo).scale(T::one() / voxel_size);
        let n = |e: T| e.ceil().to_usize().unwrap_or(0) + 1;
        Self {
            dims: [n(ext.x), n(ext.y), n(ext.z)],
            voxel_size,
            origin: lo,
            truncation,
        }
    }

    /// Grows each axis to at least `min_dims`, adding voxels evenly on both
    /// sides. Existing voxel centers keep their positions.
    pub fn padded_to(&self, min_dims: [usize; 3]) -> Self {
        let mut out = *self;
        let mut origin = self.origin.to_array();
        for a in 0..3 {
            if self.dims[a] < min_dims[a] {
                let before = (min_dims[a] - self.dims[a]) / 2;
                out.dims[a] = min_dims[a];
                origin[a] -= self.voxel_size * T::from_usize_lossy(before);
            }
        }
        out.origin = Vec3::from_array(origin);
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("zero dimension in {:?}", self.dims)));
        }
        if !(self.voxel_size > T::zero()) {
            return Err(Error::InvalidVolume("voxel_size must be positive".into()));
        }
        if !(self.truncation > T::zero()) {
            return Err(Error::InvalidVolume("truncation must be positive".into()));
        }
        if !self.origin.is_finite() {
            return Err(Error::InvalidVolume("origin must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Continuous voxel coordinate of a world point.
    #[inline]
    pub fn world_to_voxel(&self, p: Vec3<T>) -> Vec3<T> {
        (p - self.origin).scale(T::one() / self.voxel_size)
    }

    #[inline]
    pub fn voxel_to_world(&self, v: Vec3<T>) -> Vec3<T> {
        self.origin + v.scale(self.voxel_size)
    }

    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        let f = T::from_usize_lossy;
        self.voxel_to_world(Vec3::new(f(i), f(j), f(k)))
    }

    /// World-space box spanned by the voxel centers.
    pub fn bounds(&self) -> (Vec3<T>, Vec3<T>) {
        let f = |d: usize| T::from_usize_lossy(d.saturating_sub(1));
        let hi = self.voxel_to_world(Vec3::new(f(self.dims[0]), f(self.dims[1]), f(self.dims[2])));
        (self.origin, hi)
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        let tol = self.voxel_size * T::lit(1e-6);
        self.dims == other.dims
            && (self.voxel_size - other.voxel_size).abs() <= tol
            && (self.origin - other.origin).norm() <= tol
    }

    /// Interpolation stencil for a world point, or `None` if any corner lies outside the grid.
    pub fn stencil(&self, p: Vec3<T>) -> Option<Stencil<T>> {
        let u = self.world_to_voxel(p);
        if !u.is_finite() {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let mut ua = u[a];
            let nearest = ua.round();
            if (ua - nearest).abs() <= T::epsilon() * T::lit(64.0) * nearest.abs().max(T::one()) {
                ua = nearest;
            }
            let fl = ua.floor();
            if fl < T::zero() {
                return None;
            }
            let mut b = fl.to_usize()?;
            let mut f = ua - fl;
            if b + 1 >= self.dims[a] {
                // a point exactly on the last voxel center still has a full stencil
                if b + 1 == self.dims[a] && f == T::zero() && b >= 1 {
                    b -= 1;
                    f = T::one();
                } else {
                    return None;
                }
            }
            base[a] = b;
            frac[a] = f;
        }
        let mut indices = [0usize; 8];
        let mut weights = [T::zero(); 8];
        let one = T::one();
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let wx = [one - fx, fx];
        let wy = [one - fy, fy];
        let wz = [one - fz, fz];
        let i0 = self.index(base[0], base[1], base[2]);
        let sx = 1;
        let sy = self.dims[0];
        let sz = self.dims[0] * self.dims[1];
        for c in 0..8 {
            let (ox, oy, oz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            indices[c] = i0 + ox * sx + oy * sy + oz * sz;
            weights[c] = wx[ox] * wy[oy] * wz[oz];
        }
        Some(Stencil { indices, weights, frac, inv_voxel: one / self.voxel_size })
    }
}

/// The eight voxels around a point with their trilinear weights.
///
/// Corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)` from the base voxel.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    pub indices: [usize; 8],
    pub weights: [T; 8],
    /// Fractional position inside the cell.
    pub frac: [T; 3],
    inv_voxel: T,
}

impl<T: Real> Stencil<T> {
    #[inline]
    pub fn blend(&self, values: &[T]) -> T {
        let mut acc = T::zero();
        for c in 0..8 {
            acc += self.weights[c] * values[self.indices[c]];
        }
        acc
    }

    /// Spatial derivative of each corner weight, in world units.
    pub fn weight_gradients(&self) -> [Vec3<T>; 8] {
        let one = T::one();
        let [fx, fy, fz] = self.frac;
        let w = [[one - fx, fx], [one - fy, fy], [one - fz, fz]];
        let d = [-self.inv_voxel, self.inv_voxel];
        std::array::from_fn(|c| {
            let (ox, oy, oz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            Vec3::new(d[ox] * w[1][oy] * w[2][oz], w[0][ox] * d[oy] * w[2][oz], w[0][ox] * w[1][oy] * d[oz])
        })
    }

    /// Spatial gradient of the blended field, in world units.
    #[inline]
    pub fn blend_gradient(&self, values: &[T]) -> Vec3<T> {
        let mut acc = Vec3::zero();
        for (c, dw) in self.weight_gradients().into_iter().enumerate() {
            acc += dw * values[self.indices[c]];
        }
        acc
    }

    #[inline]
    pub fn all_observed(&self, weight: &[T]) -> bool {
        self.indices.iter().all(|&i| weight[i] > T::zero())
    }
}

/// Per-voxel quantity selectable in [`TsdfVolume::sample_trilinear`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Tsdf,
    ColorR,
    ColorG,
    ColorB,
    Weight,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample<T> {
    pub value: T,
    pub valid: bool,
}

/// Dense voxel grid of truncated signed distance, integration weight and RGB color.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume<T> {
    pub grid: GridSpec<T>,
    /// Signed distance in meters, positive in front of surfaces, clamped to ±truncation.
    pub tsdf: Vec<T>,
    /// Integration weight; zero means unobserved.
    pub weight: Vec<T>,
    /// Channel-planar RGB in [0, 1] (`color[c][voxel]`).
    pub color: [Vec<T>; 3],
    /// Number of observations that contributed to `color`; not persisted.
    pub color_weight: Vec<T>,
}

impl<T: Real> TsdfVolume<T> {
    /// Unobserved volume: tsdf = +truncation, weight 0, black.
    pub fn new(grid: GridSpec<T>) -> Result<Self> {
        grid.validate()?;
        let n = grid.num_voxels();
        Ok(Self {
            grid,
            tsdf: vec![grid.truncation; n],
            weight: vec![T::zero(); n],
            color: [vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]],
            color_weight: vec![T::zero(); n],
        })
    }

    /// Fully observed volume whose tsdf is `sdf(center)` clamped to the band.
    pub fn from_sdf(grid: GridSpec<T>, sdf: impl Fn(Vec3<T>) -> T) -> Result<Self> {
        let mut vol = Self::new(grid)?;
        let tr = grid.truncation;
        for idx in 0..grid.num_voxels() {
            let [i, j, k] = grid.coords(idx);
            vol.tsdf[idx] = sdf(grid.voxel_center(i, j, k)).max(-tr).min(tr);
            vol.weight[idx] = T::one();
            vol.color_weight[idx] = T::one();
        }
        Ok(vol)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn voxel_size(&self) -> T {
        self.grid.voxel_size
    }

    #[inline]
    pub fn truncation(&self) -> T {
        self.grid.truncation
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.tsdf.len()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        self.grid.index(i, j, k)
    }

    #[inline]
    pub fn world_to_voxel(&self, p: Vec3<T>) -> Vec3<T> {
        self.grid.world_to_voxel(p)
    }

    #[inline]
    pub fn voxel_to_world(&self, v: Vec3<T>) -> Vec3<T> {
        self.grid.voxel_to_world(v)
    }

    #[inline]
    pub fn rgb(&self, idx: usize) -> [T; 3] {
        [self.color[0][idx], self.color[1][idx], self.color[2][idx]]
    }

    #[inline]
    pub fn set_rgb(&mut self, idx: usize, c: [T; 3]) {
        for (ch, v) in c.into_iter().enumerate() {
            self.color[ch][idx] = v;
        }
    }

    #[inline]
    pub fn is_observed(&self, idx: usize) -> bool {
        self.weight[idx] > T::zero()
    }

    /// Observed and inside the truncation band.
    #[inline]
    pub fn is_near_surface(&self, idx: usize) -> bool {
        self.weight[idx] > T::zero() && self.tsdf[idx].abs() < self.grid.truncation
    }

    fn channel(&self, channel: Channel) -> &[T] {
        match channel {
            Channel::Tsdf => &self.tsdf,
            Channel::ColorR => &self.color[0],
            Channel::ColorG => &self.color[1],
            Channel::ColorB => &self.color[2],
            Channel::Weight => &self.weight,
        }
    }

    /// Trilinear blend of the eight voxels around `p`.
    ///
    /// Invalid when a corner is outside the grid or, for tsdf and color, unobserved.
    /// The blend never renormalizes over a subset of corners.
    pub fn sample_trilinear(&self, p: Vec3<T>, channel: Channel) -> Sample<T> {
        match self.grid.stencil(p) {
            None => Sample { value: T::zero(), valid: false },
            Some(st) => {
                let valid = channel == Channel::Weight || st.all_observed(&self.weight);
                Sample { value: st.blend(self.channel(channel)), valid }
            }
        }
    }

    /// Observed stencil at `p`, the building block of the renderer.
    #[inline]
    pub fn observed_stencil(&self, p: Vec3<T>) -> Option<Stencil<T>> {
        self.grid.stencil(p).filter(|st| st.all_observed(&self.weight))
    }

    /// Checks the clamp, weight and color invariants.
    pub fn check_invariants(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.grid.num_voxels();
        if self.tsdf.len() != n
            || self.weight.len() != n
            || self.color_weight.len() != n
            || self.color.iter().any(|c| c.len() != n)
        {
            return Err(Error::InvalidVolume("buffer length does not match dims".into()));
        }
        let tr = self.grid.truncation * (T::one() + T::lit(1e-6));
        if let Some(i) = self.tsdf.iter().position(|t| !(t.abs() <= tr)) {
            return Err(Error::InvalidVolume(format!("tsdf out of band at voxel {i}")));
        }
        if self.weight.iter().any(|w| !(*w >= T::zero())) {
            return Err(Error::InvalidVolume("negative or NaN weight".into()));
        }
        for ch in &self.color {
            if ch.iter().any(|c| !(*c >= T::zero() && *c <= T::one())) {
                return Err(Error::InvalidVolume("color outside [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Copy of the sub-grid starting at voxel `start` with the given dims.
    pub fn crop(&self, start: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        for a in 0..3 {
            if start[a] + dims[a] > self.grid.dims[a] {
                return Err(Error::GridMismatch(format!(
                    "crop {start:?}+{dims:?} exceeds grid {:?}",
                    self.grid.dims
                )));
            }
        }
        let grid = GridSpec {
            dims,
            voxel_size: self.grid.voxel_size,
            origin: self.grid.voxel_center(start[0], start[1], start[2]),
            truncation: self.grid.truncation,
        };
        let mut out = Self::new(grid)?;
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let src = self.index(start[0] + i, start[1] + j, start[2] + k);
                    let dst = out.index(i, j, k);
                    out.tsdf[dst] = self.tsdf[src];
                    out.weight[dst] = self.weight[src];
                    out.color_weight[dst] = self.color_weight[src];
                    for c in 0..3 {
                        out.color[c][dst] = self.color[c][src];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Writes the little-endian binary volume format.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dims;
        w.write_all(VOLUME_MAGIC)?;
        w.write_u32::<LittleEndian>(VOLUME_VERSION)?;
        for a in d {
            let a = u32::try_from(a).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
            w.write_u32::<LittleEndian>(a)?;
        }
        let f32of = |x: T| x.to_f32().unwrap_or(f32::NAN);
        w.write_f32::<LittleEndian>(f32of(self.grid.voxel_size))?;
        for a in 0..3 {
            w.write_f32::<LittleEndian>(f32of(self.grid.origin[a]))?;
        }
        w.write_f32::<LittleEndian>(f32of(self.grid.truncation))?;
        for &t in &self.tsdf {
            w.write_f32::<LittleEndian>(f32of(t))?;
        }
        for &x in &self.weight {
            w.write_f32::<LittleEndian>(f32of(x))?;
        }
        let mut rgb = Vec::with_capacity(3 * self.num_voxels());
        for i in 0..self.num_voxels() {
            for c in 0..3 {
                rgb.push(unit_to_u8(self.color[c][i].to_f64_lossy()));
            }
        }
        w.write_all(&rgb)?;
        Ok(())
    }

    /// Reads the binary volume format; `color_weight` is restored from `weight`.
    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != VOLUME_MAGIC {
            return Err(Error::Format("bad volume magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VOLUME_VERSION {
            return Err(Error::Format(format!("unsupported volume version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.read_u32::<LittleEndian>()? as usize;
        }
        let lit = |x: f32| T::lit(x as f64);
        let voxel_size = lit(r.read_f32::<LittleEndian>()?);
        let mut o = [T::zero(); 3];
        for v in &mut o {
            *v = lit(r.read_f32::<LittleEndian>()?);
        }
        let truncation = lit(r.read_f32::<LittleEndian>()?);
        let grid = GridSpec { dims, voxel_size, origin: Vec3::from_array(o), truncation };
        let mut vol = Self::new(grid)?;
        let n = grid.num_voxels();
        let mut buf = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut buf)?;
        for (d, s) in vol.tsdf.iter_mut().zip(&buf) {
            *d = lit(*s);
        }
        r.read_f32_into::<LittleEndian>(&mut buf)?;
        for (d, s) in vol.weight.iter_mut().zip(&buf) {
            *d = lit(*s);
        }
        vol.color_weight.clone_from(&vol.weight);
        let mut rgb = vec![0u8; 3 * n];
        r.read_exact(&mut rgb)?;
        for i in 0..n {
            for c in 0..3 {
                vol.color[c][i] = T::lit(rgb[3 * i + c] as f64 / 255.0);
            }
        }
        Ok(vol)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }
}

#[inline]
pub(crate) fn unit_to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}
