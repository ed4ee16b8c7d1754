//! Real spherical harmonics up to degree 3 (sign convention of the reference
//! 3DGS implementation).

use crate::scene::SH_COEFFS;
use crate::Real;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Basis values `Y_k(d)` for a unit direction.
pub fn sh_basis<T: Real>(d: [T; 3]) -> [T; SH_COEFFS] {
    let [x, y, z] = d;
    let c = |v: f64| T::lit(v);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        c(SH_C0),
        -c(SH_C1) * y,
        c(SH_C1) * z,
        -c(SH_C1) * x,
        c(SH_C2[0]) * x * y,
        c(SH_C2[1]) * y * z,
        c(SH_C2[2]) * (c(2.0) * zz - xx - yy),
        c(SH_C2[3]) * x * z,
        c(SH_C2[4]) * (xx - yy),
        c(SH_C3[0]) * y * (c(3.0) * xx - yy),
        c(SH_C3[1]) * x * y * z,
        c(SH_C3[2]) * y * (c(4.0) * zz - xx - yy),
        c(SH_C3[3]) * z * (c(2.0) * zz - c(3.0) * xx - c(3.0) * yy),
        c(SH_C3[4]) * x * (c(4.0) * zz - xx - yy),
        c(SH_C3[5]) * z * (xx - yy),
        c(SH_C3[6]) * x * (xx - c(3.0) * yy),
    ]
}

/// Partial derivatives of each basis polynomial with respect to `(x, y, z)`.
pub fn sh_basis_grad<T: Real>(d: [T; 3]) -> [[T; 3]; SH_COEFFS] {
    let [x, y, z] = d;
    let c = |v: f64| T::lit(v);
    let o = T::zero();
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let s = |k: f64, g: [T; 3]| g.map(|v| c(k) * v);
    [
        [o, o, o],
        [o, -c(SH_C1), o],
        [o, o, c(SH_C1)],
        [-c(SH_C1), o, o],
        s(SH_C2[0], [y, x, o]),
        s(SH_C2[1], [o, z, y]),
        s(SH_C2[2], [c(-2.0) * x, c(-2.0) * y, c(4.0) * z]),
        s(SH_C2[3], [z, o, x]),
        s(SH_C2[4], [c(2.0) * x, c(-2.0) * y, o]),
        s(SH_C3[0], [c(6.0) * x * y, c(3.0) * xx - c(3.0) * yy, o]),
        s(SH_C3[1], [y * z, x * z, x * y]),
        s(SH_C3[2], [c(-2.0) * x * y, c(4.0) * zz - xx - c(3.0) * yy, c(8.0) * y * z]),
        s(SH_C3[3], [c(-6.0) * x * z, c(-6.0) * y * z, c(6.0) * zz - c(3.0) * xx - c(3.0) * yy]),
        s(SH_C3[4], [c(4.0) * zz - c(3.0) * xx - yy, c(-2.0) * x * y, c(8.0) * x * z]),
        s(SH_C3[5], [c(2.0) * x * z, c(-2.0) * y * z, xx - yy]),
        s(SH_C3[6], [c(3.0) * xx - c(3.0) * yy, c(-6.0) * x * y, o]),
    ]
}

/// Colour before the clamp: `Σ_k Y_k(d) sh[k] + 0.5`.
pub fn evaluate_sh_raw<T: Real>(sh: &[[T; 3]; SH_COEFFS], d: [T; 3]) -> [T; 3] {
    let basis = sh_basis(d);
    let mut out = [T::lit(0.5); 3];
    for (b, coeffs) in basis.iter().zip(sh) {
        for ch in 0..3 {
            out[ch] += *b * coeffs[ch];
        }
    }
    out
}

/// View-dependent colour for a unit direction, clamped at zero.
pub fn evaluate_sh<T: Real>(sh: &[[T; 3]; SH_COEFFS], direction: [T; 3]) -> [T; 3] {
    evaluate_sh_raw(sh, direction).map(|v| v.max(T::zero()))
}
