//! Differentiable Gaussian splatting: projection, tiled front-to-back
//! compositing, and the analytic adjoint.

mod project;
mod raster;
pub mod sh;

pub use project::{project_gaussians, ProjectedGaussian, ProjectionStats};
pub use raster::{render, render_backward, render_backward_batch, render_batch, render_naive, render_with_backward};

use crate::image::Image;
use crate::scene::PARAM_COUNT;
use crate::Real;

/// Weights below this are skipped at a pixel.
pub const MIN_WEIGHT: f64 = 1.0 / 255.0;
/// Per-Gaussian weight clamp.
pub const MAX_WEIGHT: f64 = 0.999;
/// Compositing stops once transmittance would fall below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RenderOptions {
    pub near: f32,
    /// Culling margin outside the frame, as a fraction of the image size.
    pub guard_band: f32,
    /// Added to the 2D covariance diagonal, in px².
    pub low_pass: f32,
    pub background: [f32; 3],
    pub tile_size: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { near: 0.01, guard_band: 0.5, low_pass: 0.3, background: [0.0; 3], tile_size: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage<T> {
    pub rgb: Image<T>,
    /// `H × W` coverage, `1 − Π(1 − w_k)`.
    pub alpha: Vec<T>,
    pub stats: ProjectionStats,
}

impl<T: Real> RenderedImage<T> {
    pub fn alpha_at(&self, x: usize, y: usize) -> T {
        self.alpha[y * self.rgb.width + x]
    }
}

/// Per-Gaussian parameter gradients in the cloud's `G × 59` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBatch<T = f32> {
    pub grads: Vec<T>,
}

impl<T: Real> GradientBatch<T> {
    pub fn zeros(g: usize) -> Self {
        GradientBatch { grads: vec![T::zero(); g * PARAM_COUNT] }
    }

    pub fn len(&self) -> usize {
        self.grads.len() / PARAM_COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.grads[i * PARAM_COUNT..(i + 1) * PARAM_COUNT]
    }

    pub fn add_assign(&mut self, other: &GradientBatch<T>) {
        assert_eq!(self.grads.len(), other.grads.len());
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.grads {
            *a *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|v| v.is_finite())
    }
}
