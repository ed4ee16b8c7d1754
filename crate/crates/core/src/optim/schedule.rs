use std::f64::consts::PI;

use crate::render::GradientBatch;
use crate::scene::PARAM_COUNT;
use crate::Real;

/// Offset `s` of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Number of frequencies `L` of the time encoding.
pub const TIME_FREQS: usize = 6;

/// Divides every column by its largest magnitude within the scene; all-zero
/// columns stay zero.
pub fn g3r_normalize<T: Real>(grads: &GradientBatch<T>) -> GradientBatch<T> {
    let mut max = [T::zero(); PARAM_COUNT];
    for row in grads.grads.chunks_exact(PARAM_COUNT) {
        for (m, g) in max.iter_mut().zip(row) {
            *m = m.max(g.abs());
        }
    }
    let mut out = grads.clone();
    for row in out.grads.chunks_exact_mut(PARAM_COUNT) {
        for (g, m) in row.iter_mut().zip(&max) {
            if *m > T::zero() {
                *g /= *m;
            }
        }
    }
    out
}

/// Cosine factor `cos²(((t/T + s)/(1 + s))·π/2)`, written through the
/// complementary angle so that it is exactly zero at `t = T`. Not clamped
/// past `T`.
pub fn cosine_lr(t: f64, total: f64, s: f64) -> f64 {
    let p = t / total;
    let x = ((1.0 - p) / (1.0 + s)) * PI / 2.0;
    let v = x.sin();
    v * v
}

/// How the step index is turned into the encoding input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeInput {
    /// `t / T`.
    #[default]
    Fraction,
    /// The raw step index.
    Raw,
}

impl TimeInput {
    pub fn value(self, t: f64, total: f64) -> f64 {
        match self {
            TimeInput::Fraction => t / total,
            TimeInput::Raw => t,
        }
    }
}

/// `(sin(2ᵏπp), cos(2ᵏπp))` for `k = 0..L`, interleaved.
pub fn time_encoding(p: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for k in 0..freqs {
        let a = (1u64 << k) as f64 * PI * p;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}
