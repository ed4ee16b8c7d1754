use std::ops::Range;

use crate::{Error, Real, Result};

/// Number of scalar parameters per Gaussian.
pub const PARAM_COUNT: usize = 59;
/// Number of spherical-harmonics coefficients per colour channel (degree 3).
pub const SH_COEFFS: usize = 16;

/// Column ranges of the flattened parameter vector.
pub mod layout {
    use std::ops::Range;

    pub const MEAN: Range<usize> = 0..3;
    pub const QUAT: Range<usize> = 3..7;
    pub const LOG_SCALE: Range<usize> = 7..10;
    pub const OPACITY: usize = 10;
    pub const SH: Range<usize> = 11..59;
    pub const SH_DC: Range<usize> = 11..14;
    pub const SH_REST: Range<usize> = 14..59;

    /// Column of SH coefficient `k` (0..16) for channel `c` (0..3).
    #[inline(always)]
    pub const fn sh(k: usize, c: usize) -> usize {
        11 + k * 3 + c
    }
}

/// Parameter groups with separate learning rates in the classical optimizers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Means,
    Rotations,
    Scales,
    Opacities,
    Sh0,
    ShN,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Means,
        ParamGroup::Rotations,
        ParamGroup::Scales,
        ParamGroup::Opacities,
        ParamGroup::Sh0,
        ParamGroup::ShN,
    ];

    pub fn columns(self) -> Range<usize> {
        match self {
            ParamGroup::Means => layout::MEAN,
            ParamGroup::Rotations => layout::QUAT,
            ParamGroup::Scales => layout::LOG_SCALE,
            ParamGroup::Opacities => layout::OPACITY..layout::OPACITY + 1,
            ParamGroup::Sh0 => layout::SH_DC,
            ParamGroup::ShN => layout::SH_REST,
        }
    }

    pub fn of_column(col: usize) -> ParamGroup {
        Self::ALL.into_iter().find(|g| g.columns().contains(&col)).expect("column out of range")
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Means => "means",
            ParamGroup::Rotations => "rotations",
            ParamGroup::Scales => "scales",
            ParamGroup::Opacities => "opacities",
            ParamGroup::Sh0 => "sh0",
            ParamGroup::ShN => "shN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name().eq_ignore_ascii_case(s))
    }
}

/// One anisotropic 3D Gaussian in unconstrained parameterisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian<T = f32> {
    pub mean: [T; 3],
    /// `(w, x, y, z)`; renormalised before use.
    pub quaternion: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_logit: T,
    /// `sh[k][c]`: coefficient `k` of channel `c`.
    pub sh: [[T; 3]; SH_COEFFS],
}

impl<T: Real> Gaussian<T> {
    pub fn from_params(p: &[T]) -> Self {
        assert_eq!(p.len(), PARAM_COUNT);
        let mut sh = [[T::zero(); 3]; SH_COEFFS];
        for (k, row) in sh.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = p[layout::sh(k, c)];
            }
        }
        Gaussian {
            mean: [p[0], p[1], p[2]],
            quaternion: [p[3], p[4], p[5], p[6]],
            log_scale: [p[7], p[8], p[9]],
            opacity_logit: p[10],
            sh,
        }
    }

    pub fn write_params(&self, out: &mut [T]) {
        assert_eq!(out.len(), PARAM_COUNT);
        out[layout::MEAN].copy_from_slice(&self.mean);
        out[layout::QUAT].copy_from_slice(&self.quaternion);
        out[layout::LOG_SCALE].copy_from_slice(&self.log_scale);
        out[layout::OPACITY] = self.opacity_logit;
        for k in 0..SH_COEFFS {
            for c in 0..3 {
                out[layout::sh(k, c)] = self.sh[k][c];
            }
        }
    }

    pub fn to_params(&self) -> [T; PARAM_COUNT] {
        let mut out = [T::zero(); PARAM_COUNT];
        self.write_params(&mut out);
        out
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [T; 3] {
        self.log_scale.map(|v| v.exp())
    }

    pub fn unit_quaternion(&self) -> [T; 4] {
        let q = self.quaternion;
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        q.map(|v| v / n)
    }

    pub fn cast_f64(&self) -> Gaussian<f64> {
        Gaussian::from_params(&self.to_params().map(|v| v.to_f64_lossy()))
    }

    /// Colour of the DC term alone, including the +0.5 offset.
    pub fn dc_color(&self) -> [T; 3] {
        let c0 = T::lit(crate::render::sh::SH_C0);
        [0, 1, 2].map(|c| self.sh[0][c] * c0 + T::lit(0.5))
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Ordered set of `G ≥ 1` Gaussians stored as a row-major `G × 59` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T = f32> {
    params: Vec<T>,
}

impl<T: Real> GaussianCloud<T> {
    pub fn from_matrix(params: Vec<T>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::EmptyCloud("cloud must contain at least one gaussian"));
        }
        if !params.len().is_multiple_of(PARAM_COUNT) {
            return Err(Error::config(format!(
                "parameter matrix length {} is not a multiple of {PARAM_COUNT}",
                params.len()
            )));
        }
        Ok(GaussianCloud { params })
    }

    pub fn from_gaussians(gaussians: &[Gaussian<T>]) -> Result<Self> {
        let mut params = vec![T::zero(); gaussians.len() * PARAM_COUNT];
        for (g, row) in gaussians.iter().zip(params.chunks_exact_mut(PARAM_COUNT)) {
            g.write_params(row);
        }
        Self::from_matrix(params)
    }

    pub fn len(&self) -> usize {
        self.params.len() / PARAM_COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_matrix(&self) -> &[T] {
        &self.params
    }

    pub fn as_matrix_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn into_matrix(self) -> Vec<T> {
        self.params
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.params[i * PARAM_COUNT..(i + 1) * PARAM_COUNT]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.params[i * PARAM_COUNT..(i + 1) * PARAM_COUNT]
    }

    pub fn gaussian(&self, i: usize) -> Gaussian<T> {
        Gaussian::from_params(self.row(i))
    }

    pub fn gaussians(&self) -> Vec<Gaussian<T>> {
        (0..self.len()).map(|i| self.gaussian(i)).collect()
    }

    pub fn means(&self) -> Vec<[T; 3]> {
        self.params.chunks_exact(PARAM_COUNT).map(|r| [r[0], r[1], r[2]]).collect()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut params = Vec::with_capacity(indices.len() * PARAM_COUNT);
        for &i in indices {
            params.extend_from_slice(self.row(i));
        }
        Self::from_matrix(params)
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.params.chunks_exact(PARAM_COUNT).position(|r| r.iter().any(|v| !v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        GaussianCloud { params: self.params.iter().map(|v| U::lit(v.to_f64_lossy())).collect() }
    }
}
