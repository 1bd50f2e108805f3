//! Pinhole cameras, images and RGB-D frames.
//!
//! Pixel `(u, v)` has its center at integer coordinates; `u` runs along image
//! columns and `v` along rows. Depth is camera-space z, not ray length.

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};
use crate::scalar::Real;

pub const DEFAULT_Z_MIN: f64 = 0.1;
pub const DEFAULT_Z_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraView<T> {
    pub intrinsics: Intrinsics<T>,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world.
    pub pose: RigidTransform<T>,
    pub z_min: T,
    pub z_max: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    /// Camera-space z.
    pub depth: T,
    pub behind: bool,
}

/// Camera ray through a pixel center, with a unit world-space direction.
#[derive(Clone, Copy, Debug)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub dir: Vec3<T>,
    /// Camera-space z per unit of ray length (`depth = t * z_per_t`).
    pub z_per_t: T,
}

impl<T: Real> Ray<T> {
    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.dir * t
    }
}

impl<T: Real> CameraView<T> {
    pub fn new(intrinsics: Intrinsics<T>, width: usize, height: usize, pose: RigidTransform<T>) -> Self {
        Self {
            intrinsics,
            width,
            height,
            pose,
            z_min: T::lit(DEFAULT_Z_MIN),
            z_max: T::lit(DEFAULT_Z_MAX),
        }
    }

    pub fn with_depth_range(mut self, z_min: T, z_max: T) -> Self {
        self.z_min = z_min;
        self.z_max = z_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.pose.validate()?;
        let k = &self.intrinsics;
        if !(k.fx > T::zero() && k.fy > T::zero()) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(k.cx.is_finite() && k.cy.is_finite()) {
            return Err(Error::InvalidCamera("principal point must be finite".into()));
        }
        if !(T::zero() < self.z_min && self.z_min < self.z_max) {
            return Err(Error::InvalidCamera("depth range must satisfy 0 < z_min < z_max".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera("image must be non-empty".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn project(&self, p: Vec3<T>) -> Projection<T> {
        let c = self.pose.apply_inverse(p);
        if c.z <= T::zero() {
            return Projection { u: T::zero(), v: T::zero(), depth: c.z, behind: true };
        }
        let k = &self.intrinsics;
        Projection {
            u: k.fx * c.x / c.z + k.cx,
            v: k.fy * c.y / c.z + k.cy,
            depth: c.z,
            behind: false,
        }
    }

    /// World point at camera-space depth `depth` through pixel coordinate `(u, v)`.
    pub fn unproject(&self, u: T, v: T, depth: T) -> Vec3<T> {
        let k = &self.intrinsics;
        let c = Vec3::new((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth);
        self.pose.apply(c)
    }

    /// Nearest pixel for a projection, if it lands inside the image.
    #[inline]
    pub fn pixel_of(&self, proj: &Projection<T>) -> Option<(usize, usize)> {
        if proj.behind {
            return None;
        }
        let half = T::lit(0.5);
        let (u, v) = ((proj.u + half).floor(), (proj.v + half).floor());
        if u < T::zero() || v < T::zero() {
            return None;
        }
        let (u, v) = (u.to_usize()?, v.to_usize()?);
        (u < self.width && v < self.height).then_some((u, v))
    }

    pub fn ray(&self, px: usize, py: usize) -> Ray<T> {
        let k = &self.intrinsics;
        let dc = Vec3::new(
            (T::from_usize_lossy(px) - k.cx) / k.fx,
            (T::from_usize_lossy(py) - k.cy) / k.fy,
            T::one(),
        );
        let n = dc.norm();
        Ray {
            origin: self.pose.center(),
            dir: self.pose.rotate(dc * (T::one() / n)),
            z_per_t: T::one() / n,
        }
    }
}

/// Row-major image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<P> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<P>,
}

impl<P: Clone> Image<P> {
    pub fn filled(width: usize, height: usize, value: P) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch { expected: width * height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }
}

impl<P> Image<P> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &P {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: P) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn ensure_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                got: (self.width, self.height),
            });
        }
        Ok(())
    }
}

/// Registered color + depth frame with its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame<T> {
    pub view: CameraView<T>,
    /// Meters; 0 marks an invalid pixel.
    pub depth: Image<T>,
    /// RGB in [0, 1].
    pub color: Image<[T; 3]>,
    pub frame_id: u32,
}

impl<T: Real> RgbdFrame<T> {
    pub fn new(view: CameraView<T>, depth: Image<T>, color: Image<[T; 3]>, frame_id: u32) -> Result<Self> {
        depth.ensure_dims(view.width, view.height)?;
        color.ensure_dims(view.width, view.height)?;
        Ok(Self { view, depth, color, frame_id })
    }

    /// Depth at a pixel if it is a usable measurement.
    #[inline]
    pub fn valid_depth(&self, x: usize, y: usize) -> Option<T> {
        let d = *self.depth.get(x, y);
        (d > T::zero() && d >= self.view.z_min && d <= self.view.z_max).then_some(d)
    }

    /// World points of all valid depth pixels.
    pub fn back_project(&self) -> Vec<Vec3<T>> {
        let mut pts = Vec::new();
        for y in 0..self.view.height {
            for x in 0..self.view.width {
                if let Some(d) = self.valid_depth(x, y) {
                    pts.push(self.view.unproject(T::from_usize_lossy(x), T::from_usize_lossy(y), d));
                }
            }
        }
        pts
    }
}
