use crate::render::GradientBatch;
use crate::scene::{GaussianCloud, ParamGroup, PARAM_COUNT};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One moment update for a single scalar at 1-based `step`; returns the
/// bias-corrected direction `m̂ / (√v̂ + ε)`.
#[inline]
pub fn adam_direction<T: Real>(g: T, m: &mut T, v: &mut T, step: u64, h: AdamHyper) -> T {
    let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
    *m = b1 * *m + (T::one() - b1) * g;
    *v = b2 * *v + (T::one() - b2) * g * g;
    let (m_hat, v_hat) = if step == 1 {
        // from zero moments the corrected estimates are exactly g and g²
        (g, g * g)
    } else {
        let bc1 = T::one() - b1.powi(step as i32);
        let bc2 = T::one() - b2.powi(step as i32);
        (*m / bc1, *v / bc2)
    };
    m_hat / (v_hat.sqrt() + T::lit(h.eps))
}

/// First and second moments over a `G × 59` parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Number of completed steps.
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn zeros(g: usize) -> Self {
        AdamState { m: vec![T::zero(); g * PARAM_COUNT], v: vec![T::zero(); g * PARAM_COUNT], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len() / PARAM_COUNT
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        AdamState {
            m: self.m.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            v: self.v.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            step: self.step,
        }
    }
}

/// Advances `state` with `grads` and returns the normalized gradient.
pub fn adam_normalize<T: Real>(grads: &GradientBatch<T>, state: &mut AdamState<T>, hyper: AdamHyper) -> Result<Vec<T>> {
    if grads.grads.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam_normalize",
            lhs: (state.len(), PARAM_COUNT),
            rhs: (grads.len(), PARAM_COUNT),
        });
    }
    state.step += 1;
    let step = state.step;
    Ok(grads
        .grads
        .iter()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
        .map(|(&g, (m, v))| adam_direction(g, m, v, step, hyper))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupLrs {
    pub means: f64,
    pub rotations: f64,
    pub scales: f64,
    pub opacities: f64,
    pub sh0: f64,
    #[serde(rename = "shN")]
    pub sh_n: f64,
}

impl GroupLrs {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Means => self.means,
            ParamGroup::Rotations => self.rotations,
            ParamGroup::Scales => self.scales,
            ParamGroup::Opacities => self.opacities,
            ParamGroup::Sh0 => self.sh0,
            ParamGroup::ShN => self.sh_n,
        }
    }

    pub fn set(&mut self, g: ParamGroup, lr: f64) {
        match g {
            ParamGroup::Means => self.means = lr,
            ParamGroup::Rotations => self.rotations = lr,
            ParamGroup::Scales => self.scales = lr,
            ParamGroup::Opacities => self.opacities = lr,
            ParamGroup::Sh0 => self.sh0 = lr,
            ParamGroup::ShN => self.sh_n = lr,
        }
    }
}

/// Log-linear decay of the means learning rate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeansSchedule {
    pub init: f64,
    pub final_lr: f64,
    pub total_steps: u64,
}

impl MeansSchedule {
    /// Learning rate at the 0-based `step`.
    pub fn at(&self, step: u64) -> f64 {
        let t = if self.total_steps == 0 { 1.0 } else { (step as f64 / self.total_steps as f64).clamp(0.0, 1.0) };
        (self.init.ln() * (1.0 - t) + self.final_lr.ln() * t).exp()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamGroupConfig {
    pub lr: GroupLrs,
    /// Replaces `lr.means` when present.
    pub means_schedule: Option<MeansSchedule>,
    #[serde(flatten)]
    pub hyper: AdamHyper,
}

impl Default for ParamGroupConfig {
    fn default() -> Self {
        Self::gs3d()
    }
}

impl ParamGroupConfig {
    /// Standard 3DGS learning rates.
    pub fn gs3d() -> Self {
        ParamGroupConfig {
            lr: GroupLrs { means: 1.6e-4, rotations: 1e-3, scales: 5e-3, opacities: 5e-2, sh0: 2.5e-3, sh_n: 1.25e-4 },
            means_schedule: Some(MeansSchedule { init: 1.6e-4, final_lr: 1e-5, total_steps: 30_000 }),
            hyper: AdamHyper::default(),
        }
    }

    /// Five times every 3DGS rate, `β1 = 0.99`, constant means rate.
    pub fn gs3d_star() -> Self {
        let base = Self::gs3d().lr;
        ParamGroupConfig {
            lr: GroupLrs {
                means: 5.0 * base.means,
                rotations: 5.0 * base.rotations,
                scales: 5.0 * base.scales,
                opacities: 5.0 * base.opacities,
                sh0: 5.0 * base.sh0,
                sh_n: 5.0 * base.sh_n,
            },
            means_schedule: None,
            hyper: AdamHyper { beta1: 0.99, beta2: 0.999, eps: 1e-8 },
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "3dgs" => Ok(Self::gs3d()),
            "3dgs-star" => Ok(Self::gs3d_star()),
            other => Err(Error::config(format!("unknown optimizer preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        if !(0.0..1.0).contains(&h.beta1) || !(0.0..1.0).contains(&h.beta2) || !(h.eps > 0.0) {
            return Err(Error::config("adam: betas must lie in [0, 1) and eps must be positive"));
        }
        for g in ParamGroup::ALL {
            if !(self.lr.get(g) >= 0.0) {
                return Err(Error::config(format!("adam: learning rate for {} must be non-negative", g.name())));
            }
        }
        Ok(())
    }

    /// Per-group rate at the 0-based `step`.
    pub fn group_lr(&self, g: ParamGroup, step: u64) -> f64 {
        match (g, &self.means_schedule) {
            (ParamGroup::Means, Some(s)) => s.at(step),
            _ => self.lr.get(g),
        }
    }

    /// Rate for each of the 59 columns at the 0-based `step`.
    pub fn column_lrs(&self, step: u64) -> [f64; PARAM_COUNT] {
        std::array::from_fn(|c| self.group_lr(ParamGroup::of_column(c), step))
    }
}

/// One Adam step. Returns the displacement that was subtracted from the cloud.
pub fn adam_step<T: Real>(
    cloud: &mut GaussianCloud<T>,
    grads: &GradientBatch<T>,
    state: &mut AdamState<T>,
    config: &ParamGroupConfig,
) -> Result<Vec<T>> {
    if grads.len() != cloud.len() {
        return Err(Error::Shape { op: "adam_step", lhs: (cloud.len(), PARAM_COUNT), rhs: (grads.len(), PARAM_COUNT) });
    }
    let lrs = config.column_lrs(state.step).map(T::lit);
    let mut update = adam_normalize(grads, state, config.hyper)?;
    for (row, u) in cloud.as_matrix_mut().chunks_exact_mut(PARAM_COUNT).zip(update.chunks_exact_mut(PARAM_COUNT)) {
        for c in 0..PARAM_COUNT {
            u[c] = lrs[c] * u[c];
            row[c] -= u[c];
        }
    }
    Ok(update)
}

/// `cloud − lr · grads`.
pub fn sgd_step<T: Real>(cloud: &mut GaussianCloud<T>, grads: &GradientBatch<T>, lr: T) -> Result<()> {
    if grads.len() != cloud.len() {
        return Err(Error::Shape { op: "sgd_step", lhs: (cloud.len(), PARAM_COUNT), rhs: (grads.len(), PARAM_COUNT) });
    }
    for (p, g) in cloud.as_matrix_mut().iter_mut().zip(&grads.grads) {
        *p -= lr * *g;
    }
    Ok(())
}
