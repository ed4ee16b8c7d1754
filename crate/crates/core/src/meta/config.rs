use std::path::Path;

use crate::model::{L2SConfig, ModelKind};
use crate::optim::AdamHyper;
use crate::render::RenderOptions;
use crate::{Error, Result};

/// How each inner step picks its context views.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewPolicy {
    /// The first `context_batch` context views, every step.
    #[default]
    Fixed,
    /// Furthest-point resample of `context_batch` views per step.
    Fps,
}

/// How the low-visibility penalty is aggregated over a scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LvsReduction {
    /// Sum over every entry of every Gaussian.
    Sum,
    /// Per-Gaussian sum over the 59 entries, averaged over Gaussians.
    #[default]
    GaussianMean,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub tau_max: usize,
    pub p_buffer: f64,
    pub p_push: f64,
    pub p_push_back: f64,
    pub buffer_capacity: usize,
    pub tau_a_start: usize,
    pub tau_a_end: usize,
    /// Meta-iterations over which the rollout bound ramps up.
    pub tau_a_ramp: usize,
    pub meta_lr: f64,
    pub meta_adam: AdamHyper,
    pub gamma: f64,
    pub lvs_epsilon: f64,
    pub use_lvs: bool,
    pub lvs_reduction: LvsReduction,
    pub use_stability: bool,
    /// One meta update per inner step instead of one per meta-iteration.
    pub update_every_step: bool,
    pub context_batch: usize,
    pub target_views: usize,
    pub view_policy: ViewPolicy,
    pub meta_iterations: usize,
    /// Meta-iterations between model checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    /// Hyperparameters of the shadow Adam that normalizes model inputs.
    pub shadow_adam: AdamHyper,
    pub model: L2SConfig,
    pub render: RenderOptions,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl MetaConfig {
    pub fn paper() -> Self {
        MetaConfig {
            tau_max: 6,
            p_buffer: 0.7,
            p_push: 0.99,
            p_push_back: 0.99,
            buffer_capacity: 20,
            tau_a_start: 1,
            tau_a_end: 50,
            tau_a_ramp: 10_000,
            meta_lr: 1e-4,
            meta_adam: AdamHyper::default(),
            gamma: crate::loss::DEFAULT_GAMMA,
            lvs_epsilon: crate::loss::LVS_EPSILON,
            use_lvs: true,
            lvs_reduction: LvsReduction::GaussianMean,
            use_stability: true,
            update_every_step: false,
            context_batch: 8,
            target_views: 6,
            view_policy: ViewPolicy::Fixed,
            meta_iterations: 50_000,
            checkpoint_every: 1000,
            shadow_adam: AdamHyper::default(),
            model: L2SConfig::paper(),
            render: RenderOptions::default(),
        }
    }

    pub fn desk() -> Self {
        MetaConfig { meta_iterations: 3000, checkpoint_every: 500, model: L2SConfig::desk(), ..Self::paper() }
    }

    /// `"paper"`, `"desk"`, `"lo-paper"` or `"lo-desk"`.
    pub fn preset(name: &str) -> Result<Self> {
        let (lo, base) = match name.strip_prefix("lo-") {
            Some(rest) => (true, rest),
            None => (false, name),
        };
        let cfg = match base {
            "paper" => Self::paper(),
            "desk" => Self::desk(),
            other => return Err(Error::config(format!("unknown trainer preset {other:?}"))),
        };
        Ok(if lo { cfg.into_baseline() } else { cfg })
    }

    /// The baseline's trainer: no low-visibility or stability terms, a meta
    /// update after every inner step.
    pub fn into_baseline(mut self) -> Self {
        self.model.kind = ModelKind::LoBaseline;
        self.use_lvs = false;
        self.use_stability = false;
        self.update_every_step = true;
        self
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: MetaConfig = toml::from_str(s).map_err(|e| Error::config(format!("trainer config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_buffer", self.p_buffer), ("p_push", self.p_push), ("p_push_back", self.p_push_back)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.tau_max == 0 {
            return Err(Error::config("tau_max must be at least 1"));
        }
        if self.tau_a_start == 0 || self.tau_a_end < self.tau_a_start {
            return Err(Error::config("rollout bound must satisfy 1 <= tau_a_start <= tau_a_end"));
        }
        if self.buffer_capacity == 0 || self.context_batch == 0 || self.target_views == 0 {
            return Err(Error::config("buffer capacity and view counts must be positive"));
        }
        if !(self.meta_lr.is_finite() && self.meta_lr > 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config("meta_lr must be positive and gamma in (0, 1]"));
        }
        self.model.validate()
    }

    /// Upper bound of the rollout length at meta-iteration `t_meta`: a linear
    /// ramp from `tau_a_start` to `tau_a_end`, floored.
    pub fn tau_a(&self, t_meta: u64) -> usize {
        let frac = if self.tau_a_ramp == 0 { 1.0 } else { (t_meta as f64 / self.tau_a_ramp as f64).min(1.0) };
        let span = (self.tau_a_end - self.tau_a_start) as f64;
        self.tau_a_start + (span * frac).floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_a_ramp_endpoints_and_floor() {
        let c = MetaConfig::paper();
        assert_eq!(c.tau_a(0), 1);
        assert_eq!(c.tau_a(10_000), 50);
        assert_eq!(c.tau_a(1_000_000), 50);
        assert_eq!(c.tau_a(5_000), 25);
        // 1 + 49·(204/10000) = 1.9996
        assert_eq!(c.tau_a(204), 1);
        assert_eq!(c.tau_a(205), 2);
        let mut prev = 1;
        for t in 0..12_000 {
            let v = c.tau_a(t);
            assert!(v >= prev && v <= 50);
            prev = v;
        }
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = MetaConfig::desk();
        assert_eq!(MetaConfig::from_toml_str(&c.to_toml()).unwrap(), c);
        let partial = "p_buffer = 0.5\ntau_max = 3\n[model]\nd_state = 16\n";
        let p = MetaConfig::from_toml_str(partial).unwrap();
        assert_eq!(p.p_buffer, 0.5);
        assert_eq!(p.tau_max, 3);
        assert_eq!(p.model.d_state, 16);
        assert_eq!(p.model.n_blocks, 4);
        assert!(MetaConfig::from_toml_str("p_push = 1.5").is_err());
        assert!(MetaConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn baseline_preset() {
        let c = MetaConfig::preset("lo-desk").unwrap();
        assert_eq!(c.model.kind, ModelKind::LoBaseline);
        assert!(!c.use_lvs && !c.use_stability && c.update_every_step);
        assert!(MetaConfig::preset("nope").is_err());
    }
}
