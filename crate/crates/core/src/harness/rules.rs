use std::path::Path;

use super::{OptimizerChoice, RunConfig};
use crate::autodiff::{ModelCheckpoint, ModelParameters};
use crate::knn::NeighborTable;
use crate::model::{init_latents, l2s_step, neighbors_for, L2SConfig, LatentStates, ModelKind};
use crate::optim::{adam_normalize, adam_step, sgd_step, AdamHyper, AdamState, ParamGroupConfig};
use crate::render::GradientBatch;
use crate::scene::{GaussianCloud, ParamGroup, PARAM_COUNT};
use crate::{Error, Result};

/// A trained learned optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedModel {
    pub cfg: L2SConfig,
    pub params: ModelParameters<f32>,
}

impl LoadedModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self> {
        let cfg: L2SConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::config(format!("model checkpoint config: {e}")))?;
        cfg.validate()?;
        Ok(LoadedModel { cfg, params: ckpt.params.clone() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&ModelCheckpoint::load(path)?)
    }
}

/// A stateful per-scene update rule.
pub trait UpdateRule: Send {
    /// Advances `cloud` by one step given the gradient of the inner loss at it.
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()>;
}

pub struct Sgd {
    pub lr: f32,
}

impl UpdateRule for Sgd {
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()> {
        sgd_step(cloud, grads, self.lr)
    }
}

pub struct Adam {
    pub config: ParamGroupConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: ParamGroupConfig, g: usize) -> Self {
        Adam { config, state: AdamState::zeros(g) }
    }
}

impl UpdateRule for Adam {
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()> {
        adam_step(cloud, grads, &mut self.state, &self.config).map(drop)
    }
}

/// The learned optimizer (or the baseline) with its per-scene state.
pub struct Learned {
    pub cfg: L2SConfig,
    pub params: ModelParameters<f32>,
    pub latents: LatentStates,
    pub shadow: AdamState,
    pub shadow_hyper: AdamHyper,
    /// Completed steps.
    pub step: u64,
    neighbors: Option<(NeighborTable, u64)>,
}

impl Learned {
    pub fn new(model: &LoadedModel, g: usize, seed: u64) -> Self {
        Learned {
            latents: init_latents(g, model.cfg.d_state, seed),
            cfg: model.cfg.clone(),
            params: model.params.clone(),
            shadow: AdamState::zeros(g),
            shadow_hyper: AdamHyper::default(),
            step: 0,
            neighbors: None,
        }
    }
}

impl UpdateRule for Learned {
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()> {
        let adam = adam_normalize(grads, &mut self.shadow, self.shadow_hyper)?;
        let stale = self.neighbors.as_ref().is_none_or(|(_, built)| self.step - built >= self.cfg.knn_refresh as u64);
        if stale {
            self.neighbors = Some((neighbors_for(cloud, &self.cfg)?, self.step));
        }
        let table = &self.neighbors.as_ref().expect("built above").0;
        let (next, states, _) = l2s_step(cloud, &adam, &self.latents, &self.params, &self.cfg, table, self.step)?;
        *cloud = next;
        self.latents = states;
        self.step += 1;
        Ok(())
    }
}

/// Takes `group`'s columns from `source` and every other column from
/// `target`; both rules see the same cloud and gradient.
pub struct Swap {
    pub group: ParamGroup,
    pub source: Box<dyn UpdateRule>,
    pub target: Box<dyn UpdateRule>,
}

impl UpdateRule for Swap {
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()> {
        let mut from_source = cloud.clone();
        self.source.step(&mut from_source, grads)?;
        self.target.step(cloud, grads)?;
        copy_columns(cloud, &from_source, self.group.columns());
        Ok(())
    }
}

/// Holds the listed groups at their values before each step.
pub struct Freeze {
    pub groups: Vec<ParamGroup>,
    pub inner: Box<dyn UpdateRule>,
}

impl UpdateRule for Freeze {
    fn step(&mut self, cloud: &mut GaussianCloud, grads: &GradientBatch) -> Result<()> {
        let before = cloud.clone();
        self.inner.step(cloud, grads)?;
        for g in &self.groups {
            copy_columns(cloud, &before, g.columns());
        }
        Ok(())
    }
}

fn copy_columns(dst: &mut GaussianCloud, src: &GaussianCloud, cols: std::ops::Range<usize>) {
    for (d, s) in dst.as_matrix_mut().chunks_exact_mut(PARAM_COUNT).zip(src.as_matrix().chunks_exact(PARAM_COUNT)) {
        d[cols.clone()].copy_from_slice(&s[cols.clone()]);
    }
}

/// The rule a run config asks for, freeze mask included, for a scene of `g`
/// Gaussians.
pub fn build_rule(cfg: &RunConfig, model: Option<&LoadedModel>, g: usize) -> Result<Box<dyn UpdateRule>> {
    let rule: Box<dyn UpdateRule> = match cfg.optimizer {
        OptimizerChoice::Sgd => Box::new(Sgd { lr: cfg.sgd_lr as f32 }),
        OptimizerChoice::Adam3dgs | OptimizerChoice::Adam3dgsStar => Box::new(Adam::new(cfg.adam_config()?, g)),
        OptimizerChoice::L2s | OptimizerChoice::LoBaseline => {
            let model = model.ok_or_else(|| Error::config(format!("optimizer {} needs a model", cfg.optimizer)))?;
            let want = if cfg.optimizer == OptimizerChoice::L2s { ModelKind::L2s } else { ModelKind::LoBaseline };
            if model.cfg.kind != want {
                return Err(Error::config(format!(
                    "optimizer {} cannot run a {:?} model",
                    cfg.optimizer, model.cfg.kind
                )));
            }
            let mut learned = Learned::new(model, g, cfg.seed);
            if let Some(h) = cfg.horizon {
                learned.cfg.horizon = h;
                learned.cfg.validate()?;
            }
            Box::new(learned)
        }
    };
    Ok(if cfg.freeze.is_empty() { rule } else { Box::new(Freeze { groups: cfg.freeze.clone(), inner: rule }) })
}
