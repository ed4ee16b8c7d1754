use crate::image::Image;
use crate::scene::GaussianCloud;
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Context,
    Target,
}

/// A posed pinhole camera with its reference image.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    /// Row-major intrinsic matrix `K` in pixels.
    pub intrinsics: [[f32; 3]; 3],
    /// World-to-camera rotation.
    pub rotation: [[f32; 3]; 3],
    /// Camera centre in world coordinates: `x_cam = R (x_world - t)`.
    pub translation: [f32; 3],
    pub image: Image<f32>,
    pub role: Role,
}

impl View {
    pub fn width(&self) -> usize {
        self.image.width
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn center(&self) -> [f32; 3] {
        self.translation
    }

    pub fn camera<T: Real>(&self) -> Camera<T> {
        let k = self.intrinsics;
        let m = |a: [[f32; 3]; 3]| a.map(|r| r.map(T::widen));
        Camera {
            fx: T::widen(k[0][0]),
            fy: T::widen(k[1][1]),
            skew: T::widen(k[0][1]),
            cx: T::widen(k[0][2]),
            cy: T::widen(k[1][2]),
            rotation: m(self.rotation),
            center: self.translation.map(T::widen),
            width: self.width(),
            height: self.height(),
        }
    }

    /// Checks orthonormality of `R` (det +1) and positive focal lengths.
    pub fn validate(&self) -> Result<()> {
        let r = self.rotation.map(|row| row.map(|v| v as f64));
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-5 {
                    return Err(Error::config(format!("view {}: rotation is not orthonormal", self.name)));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > 1e-5 {
            return Err(Error::config(format!("view {}: rotation determinant {det}", self.name)));
        }
        let k = self.intrinsics;
        if !(k[0][0] > 0.0 && k[1][1] > 0.0) {
            return Err(Error::config(format!("view {}: focal lengths must be positive", self.name)));
        }
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 || k[2][2] != 1.0 {
            return Err(Error::config(format!("view {}: malformed intrinsic matrix", self.name)));
        }
        let all = k.iter().chain(self.rotation.iter()).flatten().chain(self.translation.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config(format!("view {}: non-finite camera values", self.name)));
        }
        if self.width() == 0 || self.height() == 0 {
            return Err(Error::config(format!("view {}: empty image", self.name)));
        }
        Ok(())
    }
}

/// Camera in the renderer's scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub skew: T,
    pub cx: T,
    pub cy: T,
    pub rotation: [[T; 3]; 3],
    pub center: [T; 3],
    pub width: usize,
    pub height: usize,
}

impl<T: Real> Camera<T> {
    #[inline]
    pub fn world_to_camera(&self, p: [T; 3]) -> [T; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[0][1] * d[1] + r[0][2] * d[2],
            r[1][0] * d[0] + r[1][1] * d[1] + r[1][2] * d[2],
            r[2][0] * d[0] + r[2][1] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// Posed views of one scene split into disjoint context and target sets,
/// plus the cloud the optimizers start from.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub scene_id: String,
    pub context_views: Vec<View>,
    pub target_views: Vec<View>,
    pub initial_cloud: GaussianCloud<f32>,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if self.context_views.is_empty() || self.target_views.is_empty() {
            return Err(Error::config(format!(
                "scene {}: context and target view sets must be non-empty",
                self.scene_id
            )));
        }
        for v in self.context_views.iter().chain(&self.target_views) {
            v.validate()?;
        }
        for c in &self.context_views {
            if self.target_views.iter().any(|t| t.name == c.name) {
                return Err(Error::config(format!(
                    "scene {}: view {} is both context and target",
                    self.scene_id, c.name
                )));
            }
        }
        if let Some(i) = self.initial_cloud.first_non_finite() {
            return Err(Error::NonFiniteGaussian { index: i });
        }
        Ok(())
    }
}

/// World-to-camera rotation for a camera at `eye` looking at `target`, with
/// image `y` pointing along world `-Y`.
pub fn look_at(eye: [f32; 3], target: [f32; 3]) -> [[f32; 3]; 3] {
    let sub = |a: [f64; 3], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let cross =
        |a: [f64; 3], b: [f64; 3]| [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let norm = |a: [f64; 3]| {
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
        [a[0] / n, a[1] / n, a[2] / n]
    };
    let eye = eye.map(|v| v as f64);
    let target = target.map(|v| v as f64);
    let z = norm(sub(target, eye));
    let mut up = [0.0, 1.0, 0.0];
    if cross(z, up).iter().map(|v| v * v).sum::<f64>() < 1e-12 {
        up = [0.0, 0.0, 1.0];
    }
    let x = norm(cross(z, up));
    let y = cross(z, x);
    [x, y, z].map(|r| r.map(|v| v as f32))
}
