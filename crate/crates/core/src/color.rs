//! sRGB ↔ CIELAB (D65 white, 2° observer).

use crate::scalar::Real;

/// Linear sRGB → XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const DELTA: f64 = 6.0 / 29.0;

/// Scale applied to Lab before the color loss.
pub const LAB_LOSS_SCALE: f64 = 0.01;

/// Reference white: XYZ of linear RGB (1, 1, 1), so sRGB white maps to exactly L = 100.
fn white() -> [f64; 3] {
    let m = RGB_TO_XYZ;
    [m[0].iter().sum(), m[1].iter().sum(), m[2].iter().sum()]
}

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = RGB_TO_XYZ;
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    adj.map(|row| row.map(|x| x / det))
}

fn mat_vec<T: Real>(m: &[[f64; 3]; 3], v: [T; 3]) -> [T; 3] {
    m.map(|row| T::lit(row[0]) * v[0] + T::lit(row[1]) * v[1] + T::lit(row[2]) * v[2])
}

#[inline]
fn srgb_to_linear<T: Real>(c: T) -> T {
    if c <= T::lit(0.04045) {
        c / T::lit(12.92)
    } else {
        ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(2.4))
    }
}

#[inline]
fn d_srgb_to_linear<T: Real>(c: T) -> T {
    if c <= T::lit(0.04045) {
        T::one() / T::lit(12.92)
    } else {
        T::lit(2.4 / 1.055) * ((c + T::lit(0.055)) / T::lit(1.055)).powf(T::lit(1.4))
    }
}

#[inline]
fn linear_to_srgb<T: Real>(c: T) -> T {
    if c <= T::lit(0.0031308) {
        c * T::lit(12.92)
    } else {
        T::lit(1.055) * c.powf(T::lit(1.0 / 2.4)) - T::lit(0.055)
    }
}

#[inline]
fn lab_f<T: Real>(t: T) -> T {
    if t > T::lit(DELTA * DELTA * DELTA) {
        t.cbrt()
    } else {
        t / T::lit(3.0 * DELTA * DELTA) + T::lit(4.0 / 29.0)
    }
}

#[inline]
fn d_lab_f<T: Real>(t: T) -> T {
    if t > T::lit(DELTA * DELTA * DELTA) {
        T::one() / (T::lit(3.0) * t.cbrt() * t.cbrt())
    } else {
        T::one() / T::lit(3.0 * DELTA * DELTA)
    }
}

#[inline]
fn lab_f_inv<T: Real>(f: T) -> T {
    if f > T::lit(DELTA) {
        f * f * f
    } else {
        T::lit(3.0 * DELTA * DELTA) * (f - T::lit(4.0 / 29.0))
    }
}

fn clamp01<T: Real>(c: [T; 3]) -> [T; 3] {
    c.map(|x| x.max(T::zero()).min(T::one()))
}

/// sRGB in [0, 1] (clamped) to CIELAB.
pub fn rgb_to_lab<T: Real>(rgb: [T; 3]) -> [T; 3] {
    let lin = clamp01(rgb).map(srgb_to_linear);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let w = white();
    let f = [lab_f(xyz[0] / T::lit(w[0])), lab_f(xyz[1] / T::lit(w[1])), lab_f(xyz[2] / T::lit(w[2]))];
    [
        T::lit(116.0) * f[1] - T::lit(16.0),
        T::lit(500.0) * (f[0] - f[1]),
        T::lit(200.0) * (f[1] - f[2]),
    ]
}

/// CIELAB to sRGB, clamped to [0, 1].
pub fn lab_to_rgb<T: Real>(lab: [T; 3]) -> [T; 3] {
    let fy = (lab[0] + T::lit(16.0)) / T::lit(116.0);
    let fx = fy + lab[1] / T::lit(500.0);
    let fz = fy - lab[2] / T::lit(200.0);
    let w = white();
    let xyz = [
        lab_f_inv(fx) * T::lit(w[0]),
        lab_f_inv(fy) * T::lit(w[1]),
        lab_f_inv(fz) * T::lit(w[2]),
    ];
    let lin = mat_vec(&xyz_to_rgb_matrix(), xyz);
    clamp01(lin.map(|c| linear_to_srgb(c.max(T::zero()))))
}

/// Jacobian `∂lab[i] / ∂rgb[j]`; channels outside [0, 1] have zero derivative.
pub fn rgb_to_lab_jacobian<T: Real>(rgb: [T; 3]) -> [[T; 3]; 3] {
    let inside = rgb.map(|c| c >= T::zero() && c <= T::one());
    let c = clamp01(rgb);
    let lin = c.map(srgb_to_linear);
    let dlin = [0, 1, 2].map(|j| if inside[j] { d_srgb_to_linear(c[j]) } else { T::zero() });
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let w = white();
    // d f_k / d rgb_j = f'(xyz_k / w_k) / w_k * M[k][j] * dlin_j
    let mut df = [[T::zero(); 3]; 3];
    for k in 0..3 {
        let s = d_lab_f(xyz[k] / T::lit(w[k])) / T::lit(w[k]);
        for j in 0..3 {
            df[k][j] = s * T::lit(RGB_TO_XYZ[k][j]) * dlin[j];
        }
    }
    let mut jac = [[T::zero(); 3]; 3];
    for j in 0..3 {
        jac[0][j] = T::lit(116.0) * df[1][j];
        jac[1][j] = T::lit(500.0) * (df[0][j] - df[1][j]);
        jac[2][j] = T::lit(200.0) * (df[1][j] - df[2][j]);
    }
    jac
}
