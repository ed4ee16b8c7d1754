use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::optim::ParamGroupConfig;
use crate::render::RenderOptions;
use crate::scene::ParamGroup;
use crate::{Error, Result};

/// Update rule applied to a scene.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Sgd,
    #[default]
    #[serde(rename = "adam-3dgs")]
    Adam3dgs,
    #[serde(rename = "adam-3dgs-star")]
    Adam3dgsStar,
    L2s,
    LoBaseline,
}

impl OptimizerChoice {
    pub const ALL: [OptimizerChoice; 5] = [
        OptimizerChoice::Sgd,
        OptimizerChoice::Adam3dgs,
        OptimizerChoice::Adam3dgsStar,
        OptimizerChoice::L2s,
        OptimizerChoice::LoBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerChoice::Sgd => "sgd",
            OptimizerChoice::Adam3dgs => "adam-3dgs",
            OptimizerChoice::Adam3dgsStar => "adam-3dgs-star",
            OptimizerChoice::L2s => "l2s",
            OptimizerChoice::LoBaseline => "lo-baseline",
        }
    }

    /// Whether the rule needs a trained model.
    pub fn is_learned(self) -> bool {
        matches!(self, OptimizerChoice::L2s | OptimizerChoice::LoBaseline)
    }
}

impl fmt::Display for OptimizerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|o| o.name() == s).ok_or_else(|| Error::config(format!("unknown optimizer {s:?}")))
    }
}

/// Which context views feed the gradient at each iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ViewsPolicy {
    #[default]
    FixedAll,
    /// Furthest-point sample of this many views, resampled every iteration.
    Fps(usize),
}

impl fmt::Display for ViewsPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViewsPolicy::FixedAll => f.write_str("fixed-all"),
            ViewsPolicy::Fps(n) => write!(f, "fps-{n}"),
        }
    }
}

impl FromStr for ViewsPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fixed-all" {
            return Ok(ViewsPolicy::FixedAll);
        }
        s.strip_prefix("fps-")
            .and_then(|n| n.parse().ok())
            .filter(|n| *n > 0)
            .map(ViewsPolicy::Fps)
            .ok_or_else(|| Error::config(format!("views policy {s:?} is neither fixed-all nor fps-<n>")))
    }
}

impl serde::Serialize for ViewsPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ViewsPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Evaluation points used when none are configured.
pub const DEFAULT_CADENCE: [u64; 11] = [1, 2, 4, 10, 20, 50, 100, 200, 500, 1000, 2000];

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub optimizer: OptimizerChoice,
    /// Iteration budget.
    pub iterations: u64,
    /// Iterations after which metrics are recorded, ascending. Iteration 0
    /// and the final iteration are always recorded.
    pub cadence: Vec<u64>,
    pub views: ViewsPolicy,
    pub seed: u64,
    /// Groups held at their initial values.
    pub freeze: Vec<ParamGroup>,
    pub sgd_lr: f64,
    /// Replaces the preset rates of the Adam optimizers.
    pub adam: Option<ParamGroupConfig>,
    /// Trained model for `l2s` and `lo-baseline`.
    pub model: Option<PathBuf>,
    /// Overrides the baseline's schedule length.
    pub horizon: Option<usize>,
    pub psnr_cap: f64,
    /// Save target-view renders at every cadence point.
    pub snapshots: bool,
    /// How many target views get snapshots.
    pub snapshot_views: usize,
    pub render: RenderOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            optimizer: OptimizerChoice::default(),
            iterations: 100,
            cadence: DEFAULT_CADENCE.to_vec(),
            views: ViewsPolicy::default(),
            seed: 0,
            freeze: Vec::new(),
            sgd_lr: 1.0,
            adam: None,
            model: None,
            horizon: None,
            psnr_cap: 99.0,
            snapshots: false,
            snapshot_views: 1,
            render: RenderOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn new(optimizer: OptimizerChoice, iterations: u64) -> Self {
        RunConfig { optimizer, iterations, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cadence.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("eval cadence must be strictly ascending"));
        }
        if self.optimizer.is_learned() && self.model.is_none() {
            return Err(Error::config(format!("optimizer {} needs a model path", self.optimizer)));
        }
        if !(self.psnr_cap > 0.0) {
            return Err(Error::config("psnr_cap must be positive"));
        }
        if !(self.sgd_lr.is_finite() && self.sgd_lr > 0.0) {
            return Err(Error::config("sgd_lr must be positive"));
        }
        if let Some(a) = &self.adam {
            a.validate()?;
        }
        Ok(())
    }

    /// Iterations at which a metrics row is written: 0, the cadence points
    /// within budget, and the budget itself.
    pub fn eval_points(&self) -> Vec<u64> {
        let mut pts = vec![0];
        pts.extend(self.cadence.iter().copied().filter(|&c| c > 0 && c <= self.iterations));
        if self.iterations > 0 && pts.last() != Some(&self.iterations) {
            pts.push(self.iterations);
        }
        pts
    }

    /// Adam rates for the chosen optimizer.
    pub fn adam_config(&self) -> Result<ParamGroupConfig> {
        if let Some(a) = &self.adam {
            return Ok(a.clone());
        }
        match self.optimizer {
            OptimizerChoice::Adam3dgsStar => Ok(ParamGroupConfig::gs3d_star()),
            _ => Ok(ParamGroupConfig::gs3d()),
        }
    }
}

/// One labelled method of a comparison.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub label: String,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Label of the method whose gain defines the thresholds.
    pub reference: String,
    /// Fractions of the reference's gain.
    pub thresholds: Vec<f64>,
    pub methods: Vec<MethodSpec>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            reference: OptimizerChoice::Adam3dgs.name().into(),
            thresholds: vec![0.25, 0.5, 0.75, 0.9, 1.0],
            methods: Vec::new(),
        }
    }
}

impl CompareConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("compare needs at least one method"));
        }
        if !self.methods.iter().any(|m| m.label == self.reference) {
            return Err(Error::config(format!("reference method {:?} is not listed", self.reference)));
        }
        let mut labels: Vec<&str> = self.methods.iter().map(|m| m.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("method labels must be unique"));
        }
        let first = self.methods[0].run.eval_points();
        if self.methods.iter().any(|m| m.run.eval_points() != first) {
            return Err(Error::config("all compared methods need the same budget and cadence"));
        }
        for m in &self.methods {
            m.run.validate()?;
        }
        Ok(())
    }
}

/// Reads a TOML file into any of the harness configs.
pub fn load_toml<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}
