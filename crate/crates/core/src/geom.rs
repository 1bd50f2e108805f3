//! Minimal 3-vector and rigid transform types.

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector, or `None` when the norm is below `min_norm`.
    #[inline]
    pub fn normalized(self, min_norm: T) -> Option<Self> {
        let n = self.norm();
        if n < min_norm || !n.is_finite() {
            None
        } else {
            Some(self * (T::one() / n))
        }
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn component_mul(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Camera-to-world rigid transform: `p_world = rotation * p_cam + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform<T> {
    /// Row-major rotation.
    pub rotation: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: Vec3::zero(),
        }
    }

    /// Builds a pose from a row-major 4×4 matrix, checking the rigid-body invariants.
    pub fn from_matrix(m: [[T; 4]; 4]) -> Result<Self> {
        let tol = T::lit(1e-6);
        let (z, o) = (T::zero(), T::one());
        let bottom_ok = (m[3][0] - z).abs() <= tol
            && (m[3][1] - z).abs() <= tol
            && (m[3][2] - z).abs() <= tol
            && (m[3][3] - o).abs() <= tol;
        if !bottom_ok {
            return Err(Error::InvalidPose("bottom row must be (0, 0, 0, 1)".into()));
        }
        let pose = Self {
            rotation: [
                [m[0][0], m[0][1], m[0][2]],
                [m[1][0], m[1][1], m[1][2]],
                [m[2][0], m[2][1], m[2][2]],
            ],
            translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn to_matrix(&self) -> [[T; 4]; 4] {
        let r = &self.rotation;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [z, z, z, o],
        ]
    }

    /// Pose looking from `eye` toward `target`; camera axes are x right, y down, z forward.
    pub fn look_at(eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>) -> Result<Self> {
        let eps = T::lit(1e-12);
        let forward = (target - eye)
            .normalized(eps)
            .ok_or_else(|| Error::InvalidPose("eye and target coincide".into()))?;
        let right = forward
            .cross(up)
            .normalized(eps)
            .ok_or_else(|| Error::InvalidPose("up vector parallel to viewing direction".into()))?;
        let down = forward.cross(right);
        Ok(Self {
            rotation: [
                [right.x, down.x, forward.x],
                [right.y, down.y, forward.y],
                [right.z, down.z, forward.z],
            ],
            translation: eye,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let tol = T::lit(1e-6);
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot = r[0][i] * r[0][j] + r[1][i] * r[1][j] + r[2][i] * r[2][j];
                let expect = if i == j { T::one() } else { T::zero() };
                if (dot - expect).abs() > tol || !dot.is_finite() {
                    return Err(Error::InvalidPose("rotation block is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - T::one()).abs() > tol {
            return Err(Error::InvalidPose("rotation determinant must be +1".into()));
        }
        if !self.translation.is_finite() {
            return Err(Error::InvalidPose("translation is not finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn rotate(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    #[inline]
    pub fn rotate_inverse(&self, v: Vec3<T>) -> Vec3<T> {
        let r = &self.rotation;
        Vec3::new(
            r[0][0] * v.x + r[1][0] * v.y + r[2][0] * v.z,
            r[0][1] * v.x + r[1][1] * v.y + r[2][1] * v.z,
            r[0][2] * v.x + r[1][2] * v.y + r[2][2] * v.z,
        )
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotate(p) + self.translation
    }

    #[inline]
    pub fn apply_inverse(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotate_inverse(p - self.translation)
    }

    /// Camera center in world coordinates.
    #[inline]
    pub fn center(&self) -> Vec3<T> {
        self.translation
    }
}
