use crate::autodiff::Init;
use crate::optim::{TimeInput, TIME_FREQS};
use crate::scene::PARAM_COUNT;
use crate::{Error, Result};

/// Which update rule the network implements.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Direction and magnitude head with state scaling.
    #[default]
    L2s,
    /// Plain linear head, time-conditioned input, cosine step schedule.
    LoBaseline,
}

/// Width of the head's hidden layer and raw output.
pub const HEAD_WIDTH: usize = PARAM_COUNT + 1;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L2SConfig {
    pub kind: ModelKind,
    pub d_state: usize,
    pub n_blocks: usize,
    /// Width of the fused query/key/value projection.
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    /// Neighbours per Gaussian.
    pub k: usize,
    /// Inner steps between neighbour-table rebuilds.
    pub knn_refresh: usize,
    /// Hidden width of the state-scale MLP; half the input width when unset.
    pub scale_hidden: Option<usize>,
    /// Let each Gaussian attend to itself as well as its neighbours.
    pub include_self: bool,
    /// Fixed factor on every predicted update.
    pub update_scale: f64,
    pub time_freqs: usize,
    pub time_input: TimeInput,
    /// Schedule length `T` of the baseline's cosine factor and time input.
    pub horizon: usize,
    /// Start from weights whose update follows the normalized gradient,
    /// weighted by the standard 3DGS learning rates (see [`init_model`]).
    ///
    /// [`init_model`]: super::init_model
    pub warm_start: bool,
}

impl Default for L2SConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl L2SConfig {
    pub fn paper() -> Self {
        L2SConfig {
            kind: ModelKind::L2s,
            d_state: 256,
            n_blocks: 4,
            attn_dim: 192,
            mlp_hidden: 1024,
            k: 4,
            knn_refresh: 100,
            scale_hidden: None,
            include_self: false,
            update_scale: 1.0,
            time_freqs: TIME_FREQS,
            time_input: TimeInput::Fraction,
            horizon: 2000,
            warm_start: false,
        }
    }

    pub fn desk() -> Self {
        L2SConfig {
            d_state: 32,
            n_blocks: 2,
            attn_dim: 24,
            mlp_hidden: 128,
            update_scale: 0.05,
            horizon: 30,
            warm_start: true,
            ..Self::paper()
        }
    }

    /// `"paper"`, `"desk"`, or either with a `lo-` prefix for the baseline.
    pub fn preset(name: &str) -> Result<Self> {
        let (lo, base) = match name.strip_prefix("lo-") {
            Some(rest) => (true, rest),
            None => (false, name),
        };
        let mut cfg = match base {
            "paper" => Self::paper(),
            "desk" => Self::desk(),
            other => return Err(Error::config(format!("unknown model preset {other:?}"))),
        };
        if lo {
            cfg.kind = ModelKind::LoBaseline;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_state == 0 || self.mlp_hidden == 0 || self.k == 0 || self.knn_refresh == 0 {
            return Err(Error::config("model widths, k and knn_refresh must be positive"));
        }
        if self.attn_dim == 0 || !self.attn_dim.is_multiple_of(3) {
            return Err(Error::config(format!("attn_dim {} must be a positive multiple of 3", self.attn_dim)));
        }
        if self.scale_hidden == Some(0) {
            return Err(Error::config("scale_hidden must be positive"));
        }
        if !(self.update_scale.is_finite() && self.update_scale > 0.0) {
            return Err(Error::config("update_scale must be positive"));
        }
        if self.kind == ModelKind::LoBaseline && self.horizon == 0 {
            return Err(Error::config("baseline horizon must be positive"));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.attn_dim / 3
    }

    /// Columns of the assembled model input.
    pub fn input_dim(&self) -> usize {
        let base = 2 * PARAM_COUNT + self.d_state;
        match self.kind {
            ModelKind::L2s => base,
            ModelKind::LoBaseline => base + 2 * self.time_freqs,
        }
    }

    pub fn scale_hidden_dim(&self) -> usize {
        self.scale_hidden.unwrap_or((self.input_dim() / 2).max(1))
    }

    /// `(name, rows, cols, init)` for every leaf, in registration order.
    pub fn layout(&self) -> Vec<(String, usize, usize, Init)> {
        let d = self.d_state;
        let mut l = Vec::new();
        push_linear(&mut l, "pt.in", self.input_dim(), d);
        for i in 0..self.n_blocks {
            push_norm(&mut l, &format!("pt.{i}.ln1"), d);
            push_linear(&mut l, &format!("pt.{i}.qkv"), d, self.attn_dim);
            push_linear(&mut l, &format!("pt.{i}.proj"), self.d_head(), d);
            push_norm(&mut l, &format!("pt.{i}.ln2"), d);
            push_linear(&mut l, &format!("pt.{i}.mlp1"), d, self.mlp_hidden);
            push_linear(&mut l, &format!("pt.{i}.mlp2"), self.mlp_hidden, d);
        }
        match self.kind {
            ModelKind::L2s => {
                let h = self.scale_hidden_dim();
                push_linear(&mut l, "scale.l1", self.input_dim(), h);
                push_linear(&mut l, "scale.l2", h, 1);
                push_linear(&mut l, "head.l1", d, HEAD_WIDTH);
                push_linear(&mut l, "head.l2", HEAD_WIDTH, HEAD_WIDTH);
            }
            ModelKind::LoBaseline => {
                push_linear(&mut l, "head.l1", d, HEAD_WIDTH);
                push_linear(&mut l, "head.l2", HEAD_WIDTH, PARAM_COUNT);
            }
        }
        l
    }
}

fn push_linear(l: &mut Vec<(String, usize, usize, Init)>, name: &str, rows: usize, cols: usize) {
    l.push((format!("{name}.w"), rows, cols, Init::Kaiming));
    l.push((format!("{name}.b"), 1, cols, Init::Zeros));
}

fn push_norm(l: &mut Vec<(String, usize, usize, Init)>, name: &str, d: usize) {
    l.push((format!("{name}.g"), 1, d, Init::Ones));
    l.push((format!("{name}.b"), 1, d, Init::Zeros));
}
