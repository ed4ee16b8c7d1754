//! World-space Gaussians to screen-space footprints, and the adjoint of that
//! mapping.

use crate::render::sh::{sh_basis, sh_basis_grad};
use crate::render::RenderOptions;
use crate::scene::{layout, Camera, PARAM_COUNT, SH_COEFFS};
use crate::Real;

/// Screen-space footprint of one Gaussian for one camera.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedGaussian<T> {
    pub mean2d: [T; 2],
    /// Symmetric `[[a, b], [b, c]]` stored as `[a, b, c]`, low-pass floor included.
    pub cov2d: [T; 3],
    /// Inverse of `cov2d` in the same packing.
    pub conic: [T; 3],
    pub depth: T,
    pub color: [T; 3],
    pub opacity: T,
    pub source_index: usize,
    /// Pixel radius outside of which the footprint weight is below the
    /// compositing threshold.
    pub radius: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProjectionStats {
    pub visible: usize,
    pub culled_near: usize,
    pub culled_guard_band: usize,
    pub culled_degenerate: usize,
    pub culled_transparent: usize,
}

impl ProjectionStats {
    pub fn culled(&self) -> usize {
        self.culled_near + self.culled_guard_band + self.culled_degenerate + self.culled_transparent
    }
}

type M3<T> = [[T; 3]; 3];

#[inline]
fn matmul3<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[inline]
fn transpose3<T: Real>(a: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
#[inline]
pub(crate) fn quat_to_rot<T: Real>(q: [T; 4]) -> M3<T> {
    let [w, x, y, z] = q;
    let one = T::one();
    let two = T::lit(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// Intermediate quantities of one projection, kept for the adjoint.
pub(crate) struct ProjectionTrace<T> {
    q_unit: [T; 4],
    q_norm: T,
    rot_q: M3<T>,
    scale: [T; 3],
    /// `R_q · diag(scale)`.
    rs: M3<T>,
    cov_cam: M3<T>,
    mu: [T; 3],
    mu_norm: T,
    dir: [T; 3],
    jac: [[T; 3]; 2],
    cov2d: [T; 3],
    conic: [T; 3],
    raw_color: [T; 3],
    opacity: T,
    mean2d: [T; 2],
}

pub(crate) enum Projected<T> {
    Visible(Box<ProjectionTrace<T>>),
    Near,
    GuardBand,
    Degenerate,
    Transparent,
}

/// Projects one parameter row. Culling is by near plane, guard band,
/// degenerate geometry, or opacity too low to ever pass the blend threshold.
pub(crate) fn project_one<T: Real>(p: &[T], cam: &Camera<T>, opts: &RenderOptions) -> Projected<T> {
    debug_assert_eq!(p.len(), PARAM_COUNT);
    let mean = [p[0], p[1], p[2]];
    let mu = cam.world_to_camera(mean);
    if !(mu[2] > T::lit(opts.near as f64)) {
        return Projected::Near;
    }
    let q = [p[3], p[4], p[5], p[6]];
    let q_norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(q_norm > T::lit(1e-12)) {
        return Projected::Degenerate;
    }
    let q_unit = q.map(|v| v / q_norm);
    let rot_q = quat_to_rot(q_unit);
    let scale = [p[7].exp(), p[8].exp(), p[9].exp()];
    let mut rs = rot_q;
    for row in rs.iter_mut() {
        for j in 0..3 {
            row[j] *= scale[j];
        }
    }
    let cov_world = matmul3(&rs, &transpose3(&rs));
    let w = &cam.rotation;
    let cov_cam = matmul3(&matmul3(w, &cov_world), &transpose3(w));

    let (x, y, z) = (mu[0], mu[1], mu[2]);
    let inv_z = T::one() / z;
    let u = (cam.fx * x + cam.skew * y) * inv_z + cam.cx;
    let v = cam.fy * y * inv_z + cam.cy;
    let (wf, hf) = (T::lit(cam.width as f64), T::lit(cam.height as f64));
    let g = T::lit(opts.guard_band as f64);
    if u < -g * wf
        || u > (T::one() + g) * wf
        || v < -g * hf
        || v > (T::one() + g) * hf
        || !u.is_finite()
        || !v.is_finite()
    {
        return Projected::GuardBand;
    }
    let inv_z2 = inv_z * inv_z;
    let jac = [
        [cam.fx * inv_z, cam.skew * inv_z, -(cam.fx * x + cam.skew * y) * inv_z2],
        [T::zero(), cam.fy * inv_z, -cam.fy * y * inv_z2],
    ];
    // J Σ Jᵀ
    let mut js = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            js[i][j] = jac[i][0] * cov_cam[0][j] + jac[i][1] * cov_cam[1][j] + jac[i][2] * cov_cam[2][j];
        }
    }
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let lp = T::lit(opts.low_pass as f64);
    let cov2d = [dot(&js[0], &jac[0]) + lp, dot(&js[0], &jac[1]), dot(&js[1], &jac[1]) + lp];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > T::zero()) || !det.is_finite() {
        return Projected::Degenerate;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];

    let opacity = T::one() / (T::one() + (-p[layout::OPACITY]).exp());
    let reach = (T::lit(255.0) * opacity).ln();
    if !(reach > T::zero()) {
        return Projected::Transparent;
    }

    let mu_norm = (x * x + y * y + z * z).sqrt();
    let dir = [-x / mu_norm, -y / mu_norm, -z / mu_norm];
    let basis = sh_basis(dir);
    let mut raw_color = [T::lit(0.5); 3];
    for (k, b) in basis.iter().enumerate() {
        for (ch, rc) in raw_color.iter_mut().enumerate() {
            *rc += *b * p[layout::sh(k, ch)];
        }
    }

    Projected::Visible(Box::new(ProjectionTrace {
        q_unit,
        q_norm,
        rot_q,
        scale,
        rs,
        cov_cam,
        mu,
        mu_norm,
        dir,
        jac,
        cov2d,
        conic,
        raw_color,
        opacity,
        mean2d: [u, v],
    }))
}

impl<T: Real> ProjectionTrace<T> {
    pub(crate) fn to_projected(&self, source_index: usize) -> ProjectedGaussian<T> {
        let mid = T::lit(0.5) * (self.cov2d[0] + self.cov2d[2]);
        let disc = (mid * mid - (self.cov2d[0] * self.cov2d[2] - self.cov2d[1] * self.cov2d[1])).max(T::zero()).sqrt();
        let lambda_max = mid + disc;
        let reach = T::lit(2.0) * (T::lit(255.0) * self.opacity).ln();
        ProjectedGaussian {
            mean2d: self.mean2d,
            cov2d: self.cov2d,
            conic: self.conic,
            depth: self.mu[2],
            color: self.raw_color.map(|c| c.max(T::zero())),
            opacity: self.opacity,
            source_index,
            radius: (reach * lambda_max).sqrt() + T::one(),
        }
    }

    /// Chain rule from screen-space gradients to the 59 parameters.
    ///
    /// `g` holds `[d mean2d (2), d conic (a, b, c), d color (3), d opacity]`.
    pub(crate) fn backward(&self, p: &[T], cam: &Camera<T>, g: &[T; 9], out: &mut [T]) {
        let two = T::lit(2.0);
        let zero = T::zero();
        let [gu, gv, ga, gb, gc, gr, gg, gbl, go] = *g;

        // opacity through the sigmoid
        out[layout::OPACITY] += go * self.opacity * (T::one() - self.opacity);

        // colour: clamp at zero, then SH coefficients and view direction
        let g_color = [gr, gg, gbl];
        let mut g_col = [zero; 3];
        for ch in 0..3 {
            if self.raw_color[ch] >= zero {
                g_col[ch] = g_color[ch];
            }
        }
        let basis = sh_basis(self.dir);
        let dbasis = sh_basis_grad(self.dir);
        let mut g_dir = [zero; 3];
        for k in 0..SH_COEFFS {
            let mut s = zero;
            for ch in 0..3 {
                out[layout::sh(k, ch)] += basis[k] * g_col[ch];
                s += p[layout::sh(k, ch)] * g_col[ch];
            }
            for a in 0..3 {
                g_dir[a] += s * dbasis[k][a];
            }
        }
        // dir = -mu / |mu|
        let d_dot = g_dir[0] * self.dir[0] + g_dir[1] * self.dir[1] + g_dir[2] * self.dir[2];
        let mut g_mu = [zero; 3];
        for a in 0..3 {
            g_mu[a] = -(g_dir[a] - self.dir[a] * d_dot) / self.mu_norm;
        }

        // conic -> cov2d
        let [ca, cb, cc] = self.cov2d;
        let det = ca * cc - cb * cb;
        let det2 = det * det;
        let g_a = ga * (-cc * cc / det2) + gb * (cb * cc / det2) + gc * (-cb * cb / det2);
        let g_b = ga * (two * cb * cc / det2) + gb * (-(ca * cc + cb * cb) / det2) + gc * (two * ca * cb / det2);
        let g_c = ga * (-cb * cb / det2) + gb * (ca * cb / det2) + gc * (-ca * ca / det2);
        // full symmetric 2×2 gradient of M = J Σc Jᵀ
        let gm = [[g_a, g_b / two], [g_b / two, g_c]];

        // gΣc = Jᵀ GM J ; gJ = 2 GM J Σc
        let jac = &self.jac;
        let mut gmj = [[zero; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                gmj[i][j] = gm[i][0] * jac[0][j] + gm[i][1] * jac[1][j];
            }
        }
        let mut g_cov_cam = [[zero; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g_cov_cam[i][j] = jac[0][i] * gmj[0][j] + jac[1][i] * gmj[1][j];
            }
        }
        let mut g_jac = [[zero; 3]; 2];
        for i in 0..2 {
            for j in 0..3 {
                g_jac[i][j] = two
                    * (gmj[i][0] * self.cov_cam[0][j]
                        + gmj[i][1] * self.cov_cam[1][j]
                        + gmj[i][2] * self.cov_cam[2][j]);
            }
        }

        let (x, y, z) = (self.mu[0], self.mu[1], self.mu[2]);
        let inv_z = T::one() / z;
        let inv_z2 = inv_z * inv_z;
        let inv_z3 = inv_z2 * inv_z;
        let num_u = cam.fx * x + cam.skew * y;
        // Jacobian entries as functions of mu
        g_mu[0] += g_jac[0][2] * (-cam.fx * inv_z2);
        g_mu[1] += g_jac[0][2] * (-cam.skew * inv_z2) + g_jac[1][2] * (-cam.fy * inv_z2);
        g_mu[2] += g_jac[0][0] * (-cam.fx * inv_z2)
            + g_jac[0][1] * (-cam.skew * inv_z2)
            + g_jac[0][2] * (two * num_u * inv_z3)
            + g_jac[1][1] * (-cam.fy * inv_z2)
            + g_jac[1][2] * (two * cam.fy * y * inv_z3);
        // projected mean
        g_mu[0] += gu * cam.fx * inv_z;
        g_mu[1] += gu * cam.skew * inv_z + gv * cam.fy * inv_z;
        g_mu[2] += -gu * num_u * inv_z2 - gv * cam.fy * y * inv_z2;

        // mu = W (p - t)
        let w = &cam.rotation;
        for a in 0..3 {
            out[a] += w[0][a] * g_mu[0] + w[1][a] * g_mu[1] + w[2][a] * g_mu[2];
        }

        // Σc = W Σ Wᵀ -> gΣ = Wᵀ gΣc W
        let g_cov = matmul3(&matmul3(&transpose3(w), &g_cov_cam), w);
        // Σ = (R S)(R S)ᵀ -> g(RS) = 2 gΣ (RS)
        let g_rs = matmul3(&g_cov, &self.rs).map(|r| r.map(|v| two * v));
        let mut g_rot = [[zero; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                g_rot[i][j] = g_rs[i][j] * self.scale[j];
            }
        }
        for j in 0..3 {
            let g_s = (0..3).map(|i| g_rs[i][j] * self.rot_q[i][j]).fold(zero, |a, b| a + b);
            out[layout::LOG_SCALE.start + j] += g_s * self.scale[j];
        }

        // rotation matrix -> unit quaternion
        let [qw, qx, qy, qz] = self.q_unit;
        let m2 = |v: T| two * v;
        let m4 = |v: T| T::lit(4.0) * v;
        let d_w = [[zero, -m2(qz), m2(qy)], [m2(qz), zero, -m2(qx)], [-m2(qy), m2(qx), zero]];
        let d_x = [[zero, m2(qy), m2(qz)], [m2(qy), -m4(qx), -m2(qw)], [m2(qz), m2(qw), -m4(qx)]];
        let d_y = [[-m4(qy), m2(qx), m2(qw)], [m2(qx), zero, m2(qz)], [-m2(qw), m2(qz), -m4(qy)]];
        let d_z = [[-m4(qz), -m2(qw), m2(qx)], [m2(qw), -m4(qz), m2(qy)], [m2(qx), m2(qy), zero]];
        let contract = |d: &M3<T>| {
            let mut s = zero;
            for i in 0..3 {
                for j in 0..3 {
                    s += g_rot[i][j] * d[i][j];
                }
            }
            s
        };
        let g_qu = [contract(&d_w), contract(&d_x), contract(&d_y), contract(&d_z)];
        let proj = g_qu[0] * qw + g_qu[1] * qx + g_qu[2] * qy + g_qu[3] * qz;
        for a in 0..4 {
            out[layout::QUAT.start + a] += (g_qu[a] - self.q_unit[a] * proj) / self.q_norm;
        }
    }
}

/// Projects every Gaussian; culled ones are omitted and counted in the stats.
pub fn project_gaussians<T: Real>(
    params: &[T],
    cam: &Camera<T>,
    opts: &RenderOptions,
) -> (Vec<ProjectedGaussian<T>>, ProjectionStats) {
    let mut stats = ProjectionStats::default();
    let mut out = Vec::new();
    for (i, row) in params.chunks_exact(PARAM_COUNT).enumerate() {
        match project_one(row, cam, opts) {
            Projected::Visible(t) => {
                stats.visible += 1;
                out.push(t.to_projected(i));
            }
            Projected::Near => stats.culled_near += 1,
            Projected::GuardBand => stats.culled_guard_band += 1,
            Projected::Degenerate => stats.culled_degenerate += 1,
            Projected::Transparent => stats.culled_transparent += 1,
        }
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian, GaussianCloud};

    pub(crate) fn camera(width: usize, height: usize, f: f64) -> Camera<f64> {
        Camera {
            fx: f,
            fy: f,
            skew: 0.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            center: [0.0; 3],
            width,
            height,
        }
    }

    fn iso(mean: [f64; 3], s: f64, opacity_logit: f64) -> Vec<f64> {
        let mut g = Gaussian::<f64>::from_params(&[0.0; PARAM_COUNT]);
        g.mean = mean;
        g.quaternion = [1.0, 0.0, 0.0, 0.0];
        g.log_scale = [s.ln(); 3];
        g.opacity_logit = opacity_logit;
        GaussianCloud::from_gaussians(&[g]).unwrap().into_matrix()
    }

    #[test]
    fn on_axis_isotropic_projection() {
        let cam = camera(32, 32, 40.0);
        let opts = RenderOptions { low_pass: 0.0, ..RenderOptions::default() };
        let (d, s) = (4.0, 0.2);
        let (proj, stats) = project_gaussians(&iso([0.0, 0.0, d], s, 2.0), &cam, &opts);
        assert_eq!(stats.visible, 1);
        let g = &proj[0];
        assert_eq!(g.mean2d, [16.0, 16.0]);
        let want = (40.0 * s / d).powi(2);
        assert!((g.cov2d[0] - want).abs() < 1e-12);
        assert!((g.cov2d[2] - want).abs() < 1e-12);
        assert!(g.cov2d[1].abs() < 1e-12);
        assert_eq!(g.depth, d);

        let floored = project_gaussians(&iso([0.0, 0.0, d], s, 2.0), &cam, &RenderOptions::default()).0;
        assert!((floored[0].cov2d[0] - want - 0.3).abs() < 1e-7);
    }

    #[test]
    fn near_plane_and_origin_are_culled() {
        let cam = camera(16, 16, 20.0);
        let opts = RenderOptions::default();
        let (p, st) = project_gaussians(&iso([0.0, 0.0, 0.001], 0.1, 0.0), &cam, &opts);
        assert!(p.is_empty());
        assert_eq!(st.culled_near, 1);
        let (p, _) = project_gaussians(&iso([0.0, 0.0, 0.0], 0.1, 0.0), &cam, &opts);
        assert!(p.is_empty());
        let (p, _) = project_gaussians(&iso([0.0, 0.0, -3.0], 0.1, 0.0), &cam, &opts);
        assert!(p.is_empty());
    }

    #[test]
    fn far_off_screen_is_culled_by_guard_band() {
        let cam = camera(16, 16, 20.0);
        let (p, st) = project_gaussians(&iso([50.0, 0.0, 2.0], 0.1, 0.0), &cam, &RenderOptions::default());
        assert!(p.is_empty());
        assert_eq!(st.culled_guard_band, 1);
    }

    #[test]
    fn nearly_transparent_is_culled() {
        let cam = camera(16, 16, 20.0);
        let (p, st) = project_gaussians(&iso([0.0, 0.0, 2.0], 0.1, -8.0), &cam, &RenderOptions::default());
        assert!(p.is_empty());
        assert_eq!(st.culled_transparent, 1);
    }
}
