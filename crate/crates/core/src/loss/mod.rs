//! Image losses for per-scene optimization and the meta-training objective.

mod ssim;

pub use ssim::{ssim, C1, C2};

use indexmap::IndexMap;

use crate::image::Image;
use crate::Real;

pub const INNER_L1_WEIGHT: f64 = 0.8;
pub const INNER_DSSIM_WEIGHT: f64 = 0.2;
pub const PERCEPTUAL_WEIGHT: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const LVS_EPSILON: f64 = 1e-8;

/// A scalar loss with its named components.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub value: f64,
    pub terms: IndexMap<String, f64>,
}

impl LossReport {
    pub fn from_terms<'a>(terms: impl IntoIterator<Item = (&'a str, f64, f64)>) -> Self {
        let mut r = LossReport::default();
        for (name, weight, value) in terms {
            r.value += weight * value;
            r.terms.insert(name.to_string(), value);
        }
        r
    }

    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(0.0)
    }
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Mean absolute error.
pub fn l1<T: Real>(a: &Image<T>, b: &Image<T>) -> T {
    assert!(a.same_shape(b), "l1: image shapes differ");
    let s: T = a.data.iter().zip(&b.data).map(|(x, y)| (*x - *y).abs()).sum();
    s / T::lit(a.len() as f64)
}

/// [`l1`] and its gradient with respect to `b`.
pub fn l1_grad<T: Real>(a: &Image<T>, b: &Image<T>) -> (T, Image<T>) {
    let n = T::lit(a.len() as f64);
    let grad = Image {
        width: b.width,
        height: b.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| sign(*y - *x) / n).collect(),
    };
    (l1(a, b), grad)
}

/// `(1 − SSIM) / 2`.
pub fn d_ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> T {
    (T::one() - ssim(a, b)) * T::lit(0.5)
}

pub fn d_ssim_grad<T: Real>(a: &Image<T>, b: &Image<T>) -> (T, Image<T>) {
    let (s, g) = ssim::ssim_impl(a, b, true);
    let mut g = g.unwrap();
    for v in &mut g.data {
        *v *= T::lit(-0.5);
    }
    ((T::one() - s) * T::lit(0.5), g)
}

/// Differentiable image-pair functional for the perceptual slot of the
/// render loss.
pub trait Perceptual<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Value and gradient with respect to `rendered`.
    fn eval(&self, reference: &Image<T>, rendered: &Image<T>) -> (T, Image<T>);
}

/// Default perceptual plug-in.
#[derive(Clone, Copy, Debug, Default)]
pub struct DSsim;

impl<T: Real> Perceptual<T> for DSsim {
    fn name(&self) -> &'static str {
        "d_ssim"
    }

    fn eval(&self, reference: &Image<T>, rendered: &Image<T>) -> (T, Image<T>) {
        d_ssim_grad(reference, rendered)
    }
}

/// `0.8·L1 + 0.2·D-SSIM`.
pub fn inner_loss<T: Real>(reference: &Image<T>, rendered: &Image<T>) -> LossReport {
    LossReport::from_terms([
        ("l1", INNER_L1_WEIGHT, l1(reference, rendered).to_f64_lossy()),
        ("d_ssim", INNER_DSSIM_WEIGHT, d_ssim(reference, rendered).to_f64_lossy()),
    ])
}

pub fn inner_loss_grad<T: Real>(reference: &Image<T>, rendered: &Image<T>) -> (LossReport, Image<T>) {
    let (l, gl) = l1_grad(reference, rendered);
    let (d, gd) = d_ssim_grad(reference, rendered);
    let (wl, wd) = (T::lit(INNER_L1_WEIGHT), T::lit(INNER_DSSIM_WEIGHT));
    let grad = Image {
        width: gl.width,
        height: gl.height,
        data: gl.data.iter().zip(&gd.data).map(|(a, b)| wl * *a + wd * *b).collect(),
    };
    let report = LossReport::from_terms([
        ("l1", INNER_L1_WEIGHT, l.to_f64_lossy()),
        ("d_ssim", INNER_DSSIM_WEIGHT, d.to_f64_lossy()),
    ]);
    (report, grad)
}

/// Weight `γ^{τ−1−t}` of step `t` in a trajectory of length `tau`.
pub fn step_weight(t: usize, tau: usize, gamma: f64) -> f64 {
    gamma.powi((tau - 1 - t) as i32)
}

/// Per-step image term `ℓ1 + 0.5·perceptual`, averaged over the step's views,
/// with the gradient for each rendered image.
pub fn render_step_term<T: Real>(
    pairs: &[(&Image<T>, &Image<T>)],
    perceptual: &dyn Perceptual<T>,
) -> (T, Vec<Image<T>>) {
    assert!(!pairs.is_empty(), "render loss step needs at least one view");
    let inv = T::one() / T::lit(pairs.len() as f64);
    let pw = T::lit(PERCEPTUAL_WEIGHT);
    let mut total = T::zero();
    let grads = pairs
        .iter()
        .map(|(reference, rendered)| {
            let (l, gl) = l1_grad(reference, rendered);
            let (p, gp) = perceptual.eval(reference, rendered);
            total += (l + pw * p) * inv;
            Image {
                width: gl.width,
                height: gl.height,
                data: gl.data.iter().zip(&gp.data).map(|(a, b)| (*a + pw * *b) * inv).collect(),
            }
        })
        .collect();
    (total, grads)
}

/// `Σ_t γ^{τ−1−t} [ℓ1 + 0.5·perceptual]` over a trajectory whose entries are
/// the `(reference, rendered)` pairs of each step. Returns the value and
/// per-step, per-view image gradients.
pub fn render_loss<T: Real>(
    trajectory: &[Vec<(&Image<T>, &Image<T>)>],
    gamma: f64,
    perceptual: &dyn Perceptual<T>,
) -> (T, Vec<Vec<Image<T>>>) {
    assert!(!trajectory.is_empty(), "render loss needs τ ≥ 1");
    let tau = trajectory.len();
    let mut total = T::zero();
    let grads = trajectory
        .iter()
        .enumerate()
        .map(|(t, pairs)| {
            let w = T::lit(step_weight(t, tau, gamma));
            let (v, mut g) = render_step_term(pairs, perceptual);
            total += w * v;
            for img in &mut g {
                for x in &mut img.data {
                    *x *= w;
                }
            }
            g
        })
        .collect();
    (total, grads)
}

/// `Σ mask·|update|` with the mask set where the raw gradient vanishes or the
/// update's sign contradicts the normalized Adam gradient. A zero on either
/// side of the sign test counts as agreement. Returns the gradient with
/// respect to `updates`.
pub fn low_visibility_loss<T: Real>(updates: &[T], raw_grads: &[T], adam_grads: &[T], epsilon: T) -> (T, Vec<T>) {
    assert_eq!(updates.len(), raw_grads.len());
    assert_eq!(updates.len(), adam_grads.len());
    let mut total = T::zero();
    let grad = updates
        .iter()
        .zip(raw_grads.iter().zip(adam_grads))
        .map(|(&u, (&r, &a))| {
            let disagree = sign(u) * sign(a) < T::zero();
            if r.abs() < epsilon || disagree {
                total += u.abs();
                sign(u)
            } else {
                T::zero()
            }
        })
        .collect();
    (total, grad)
}

/// `Σ_{t≥1} max(0, e_t − sg(e_{t−1}))`. The gradient only reaches `e_t`.
pub fn stability_loss<T: Real>(errors: &[T]) -> (T, Vec<T>) {
    stability_loss_against(errors, errors)
}

/// Stability loss with the stopped-gradient predecessors taken from
/// `previous` instead of `errors`; equal to [`stability_loss`] when both
/// slices agree.
pub fn stability_loss_against<T: Real>(errors: &[T], previous: &[T]) -> (T, Vec<T>) {
    assert_eq!(errors.len(), previous.len());
    let mut grad = vec![T::zero(); errors.len()];
    let mut total = T::zero();
    for t in 1..errors.len() {
        let d = errors[t] - previous[t - 1];
        if d > T::zero() {
            total += d;
            grad[t] = T::one();
        }
    }
    (total, grad)
}

/// Unweighted sum of the three meta-loss components.
pub fn meta_loss(render: f64, lvs: f64, stab: f64) -> LossReport {
    LossReport::from_terms([("render", 1.0, render), ("lvs", 1.0, lvs), ("stab", 1.0, stab)])
}
