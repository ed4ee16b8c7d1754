//! Random ground-truth scenes rendered from a ring of cameras.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::render::sh::SH_C0;
use crate::render::{render, RenderOptions};
use crate::scene::{logit, look_at, Gaussian, GaussianCloud, Role, SceneDataset, View, SH_COEFFS};
use crate::{Error, Result};

/// Cameras on a horizontal arc around the origin, looking at it.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CameraArc {
    pub radius: f32,
    /// Total azimuth swept; 360 spaces cameras evenly around a full ring.
    pub arc_degrees: f32,
    pub elevation_degrees: f32,
}

impl Default for CameraArc {
    fn default() -> Self {
        CameraArc { radius: 4.0, arc_degrees: 360.0, elevation_degrees: 20.0 }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_gaussians: usize,
    pub n_context: usize,
    pub n_target: usize,
    /// `(width, height)` in pixels.
    pub image_size: (usize, usize),
    pub camera_arc: CameraArc,
    /// Multiplier on every perturbation of the initial cloud; 0 gives the
    /// ground truth back.
    pub perturbation: f32,
    /// Snap rendered reference images to 8-bit levels so that saving and
    /// reloading a scene is lossless.
    pub quantize_images: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_gaussians: 50,
            n_context: 8,
            n_target: 4,
            image_size: (32, 32),
            camera_arc: CameraArc::default(),
            perturbation: 1.0,
            quantize_images: true,
        }
    }
}

/// Half extent of the cube the ground-truth means are drawn from.
const EXTENT: f32 = 1.0;

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_gaussians == 0 {
            return Err(Error::config("scene spec: n_gaussians must be at least 1"));
        }
        if self.n_context == 0 || self.n_target == 0 {
            return Err(Error::config("scene spec: context and target view counts must be at least 1"));
        }
        if self.image_size.0 < 8 || self.image_size.1 < 8 {
            return Err(Error::config("scene spec: images must be at least 8x8"));
        }
        let arc = &self.camera_arc;
        let bound = EXTENT * 3f32.sqrt();
        if !(arc.radius > 1.2 * bound) || !arc.radius.is_finite() {
            return Err(Error::config(format!(
                "scene spec: camera radius {} does not clear the scene bound {bound:.3}",
                arc.radius
            )));
        }
        if !(arc.arc_degrees > 0.0 && arc.arc_degrees <= 360.0) {
            return Err(Error::config("scene spec: arc must sweep (0, 360] degrees"));
        }
        if !(arc.elevation_degrees.abs() < 80.0) {
            return Err(Error::config("scene spec: elevation must be within (-80, 80) degrees"));
        }
        if !(self.perturbation >= 0.0) || !self.perturbation.is_finite() {
            return Err(Error::config("scene spec: perturbation must be finite and non-negative"));
        }
        Ok(())
    }

    fn total_views(&self) -> usize {
        self.n_context + self.n_target
    }
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> [f32; 4] {
    loop {
        let q: [f32; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > 1e-3 {
            return q.map(|v| v / n);
        }
    }
}

fn quat_mul(a: [f32; 4], b: [f32; 4]) -> [f32; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn ground_truth(rng: &mut ChaCha8Rng, n: usize) -> Vec<Gaussian> {
    let sh_noise = Normal::new(0.0f32, 0.05).unwrap();
    (0..n)
        .map(|_| {
            let mean = std::array::from_fn(|_| rng.random_range(-EXTENT..EXTENT));
            let quaternion = random_unit_quaternion(rng);
            let log_scale = std::array::from_fn(|_| rng.random_range(0.12f32..0.3).ln());
            let opacity_logit = logit(rng.random_range(0.5f32..0.95));
            let mut sh = [[0.0f32; 3]; SH_COEFFS];
            for c in 0..3 {
                sh[0][c] = (rng.random_range(0.1f32..0.9) - 0.5) / SH_C0 as f32;
            }
            for row in sh.iter_mut().skip(1) {
                for v in row.iter_mut() {
                    *v = sh_noise.sample(rng);
                }
            }
            Gaussian { mean, quaternion, log_scale, opacity_logit, sh }
        })
        .collect()
}

fn perturb(rng: &mut ChaCha8Rng, g: &Gaussian, magnitude: f32) -> Gaussian {
    let mut out = g.clone();
    let sigma = 0.02 * 2.0 * EXTENT * magnitude;
    let noise = Normal::new(0.0f32, sigma).unwrap();
    for m in out.mean.iter_mut() {
        *m += noise.sample(rng);
    }
    let axis: [f32; 3] = {
        let q = random_unit_quaternion(rng);
        let n = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt().max(1e-6);
        [q[1] / n, q[2] / n, q[3] / n]
    };
    let angle = rng.random_range(0.0f32..=1.0) * 10f32.to_radians() * magnitude.min(1.0);
    let (s, c) = (0.5 * angle).sin_cos();
    out.quaternion = quat_mul([c, axis[0] * s, axis[1] * s, axis[2] * s], g.quaternion);
    for v in out.log_scale.iter_mut() {
        *v += rng.random_range(-0.2f32..=0.2) * magnitude;
    }
    for c in 0..3 {
        out.sh[0][c] += rng.random_range(-0.1f32..=0.1) * magnitude / SH_C0 as f32;
    }
    out
}

/// Name, intrinsics, world-to-camera rotation, centre and role of one view.
type ViewPose = (String, [[f32; 3]; 3], [[f32; 3]; 3], [f32; 3], Role);

fn camera_views(spec: &SceneSpec) -> Vec<ViewPose> {
    let n = spec.total_views();
    let arc = &spec.camera_arc;
    let (w, h) = spec.image_size;
    let full = arc.arc_degrees >= 360.0;
    let step = if full {
        arc.arc_degrees / n as f32
    } else if n > 1 {
        arc.arc_degrees / (n - 1) as f32
    } else {
        0.0
    };
    let start = if full { 0.0 } else { -0.5 * arc.arc_degrees };
    let half_fov = ((EXTENT * 3f32.sqrt()) / arc.radius).asin() * 1.05;
    let focal = 0.5 * w.min(h) as f32 / half_fov.tan();
    let intrinsics = [[focal, 0.0, 0.5 * w as f32], [0.0, focal, 0.5 * h as f32], [0.0, 0.0, 1.0]];
    let targets: Vec<usize> = (0..spec.n_target).map(|j| ((2 * j + 1) * n) / (2 * spec.n_target)).collect();
    let elev = arc.elevation_degrees.to_radians();
    (0..n)
        .map(|i| {
            let az = (start + step * i as f32).to_radians();
            let eye =
                [arc.radius * elev.cos() * az.sin(), -arc.radius * elev.sin(), -arc.radius * elev.cos() * az.cos()];
            let rotation = look_at(eye, [0.0; 3]);
            let role = if targets.contains(&i) { Role::Target } else { Role::Context };
            (format!("view_{i:03}"), intrinsics, rotation, eye, role)
        })
        .collect()
}

/// A generated scene together with the cloud its images were rendered from.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub dataset: SceneDataset,
    pub ground_truth: GaussianCloud,
}

pub fn generate_synthetic_scene_with_truth(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = ground_truth(&mut rng, spec.n_gaussians);
    let initial: Vec<Gaussian> = if spec.perturbation == 0.0 {
        truth.clone()
    } else {
        truth.iter().map(|g| perturb(&mut rng, g, spec.perturbation)).collect()
    };
    let truth = GaussianCloud::from_gaussians(&truth)?;
    let initial_cloud = GaussianCloud::from_gaussians(&initial)?;
    let opts = RenderOptions::default();
    let (w, h) = spec.image_size;
    let mut context_views = Vec::new();
    let mut target_views = Vec::new();
    for (name, intrinsics, rotation, translation, role) in camera_views(spec) {
        let mut view = View { name, intrinsics, rotation, translation, image: crate::image::Image::zeros(w, h), role };
        let img = render(&truth, &view.camera(), &opts)?.rgb;
        view.image = if spec.quantize_images { img.quantized() } else { img };
        match role {
            Role::Context => context_views.push(view),
            Role::Target => target_views.push(view),
        }
    }
    let dataset = SceneDataset { scene_id: format!("synthetic-{seed}"), context_views, target_views, initial_cloud };
    dataset.validate()?;
    Ok(SyntheticScene { dataset, ground_truth: truth })
}

/// Samples a ground-truth cloud, renders it from every camera of the arc and
/// perturbs it into the initial cloud. Deterministic in `seed`.
pub fn generate_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<SceneDataset> {
    Ok(generate_synthetic_scene_with_truth(seed, spec)?.dataset)
}
