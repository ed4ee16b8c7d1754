use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{L2SConfig, ModelKind, HEAD_WIDTH};
use crate::autodiff::{ModelParameters, ParamVars, Tape, Tensor2, Var, UNIT_NORM_FLOOR};
use crate::knn::{build_knn_with, NeighborTable};
use crate::optim::{cosine_lr, time_encoding, ParamGroupConfig};
use crate::scene::{GaussianCloud, ParamGroup, PARAM_COUNT};
use crate::{Error, Real, Result};

/// Per-Gaussian recurrent state, `G × d_state`.
pub type LatentStates<T = f32> = Tensor2<T>;

/// Fresh model weights. The head and state-scale output layers start at a
/// tenth of their usual scale, and the magnitude and state-scale output
/// biases start at one, so neither ReLU begins dead.
///
/// With `warm_start`, the highest-rate columns of the normalized gradient
/// are carried through the first latent dimensions and the head untouched
/// by the blocks; the head reconstructs them exactly through pairs of
/// hidden units, since `gelu(x) − gelu(−x) = x`. The initial direction is
/// then the normalized gradient weighted by the 3DGS learning rates, and
/// the remaining weights stay random for training to use.
pub fn init_model<T: Real>(cfg: &L2SConfig, seed: u64) -> Result<ModelParameters<T>> {
    cfg.validate()?;
    let mut p = ModelParameters::init(&cfg.layout(), seed);
    p.get_mut("head.l2.w")?.data.iter_mut().for_each(|v| *v *= T::lit(0.1));
    if cfg.kind == ModelKind::L2s {
        p.get_mut("scale.l2.w")?.data.iter_mut().for_each(|v| *v *= T::lit(0.1));
        p.get_mut("head.l2.b")?.set(0, PARAM_COUNT, T::one());
        p.get_mut("scale.l2.b")?.set(0, 0, T::one());
    }
    if cfg.warm_start {
        warm_start(&mut p, cfg)?;
    }
    Ok(p)
}

/// Gradient columns carried by a warm start, highest rate first, with their
/// weights relative to the highest rate.
pub fn warm_start_columns(cfg: &L2SConfig) -> Vec<(usize, f64)> {
    let lrs = ParamGroupConfig::gs3d().column_lrs(0);
    let mut cols: Vec<usize> = (0..PARAM_COUNT).filter(|&c| ParamGroup::of_column(c) != ParamGroup::ShN).collect();
    cols.sort_by(|&a, &b| lrs[b].total_cmp(&lrs[a]).then(a.cmp(&b)));
    let top = lrs[cols[0]];
    cols.truncate(cfg.d_state.min(HEAD_WIDTH / 2));
    cols.into_iter().map(|c| (c, lrs[c] / top)).collect()
}

fn warm_start<T: Real>(p: &mut ModelParameters<T>, cfg: &L2SConfig) -> Result<()> {
    let cols = warm_start_columns(cfg);
    let n = cols.len();
    let w = p.get_mut("pt.in.w")?;
    for k in 0..n {
        for r in 0..w.rows {
            w.set(r, k, T::zero());
        }
    }
    for (k, &(c, weight)) in cols.iter().enumerate() {
        w.set(c, k, T::lit(weight));
    }
    let b = p.get_mut("pt.in.b")?;
    (0..n).for_each(|k| b.set(0, k, T::zero()));
    for i in 0..cfg.n_blocks {
        for name in [format!("pt.{i}.proj"), format!("pt.{i}.mlp2")] {
            let w = p.get_mut(&format!("{name}.w"))?;
            for r in 0..w.rows {
                (0..n).for_each(|k| w.set(r, k, T::zero()));
            }
            let b = p.get_mut(&format!("{name}.b"))?;
            (0..n).for_each(|k| b.set(0, k, T::zero()));
        }
    }
    let w = p.get_mut("head.l1.w")?;
    for k in 0..n {
        for r in 0..w.rows {
            w.set(r, 2 * k, T::zero());
            w.set(r, 2 * k + 1, T::zero());
        }
        w.set(k, 2 * k, T::one());
        w.set(k, 2 * k + 1, -T::one());
    }
    let b = p.get_mut("head.l1.b")?;
    (0..2 * n).for_each(|u| b.set(0, u, T::zero()));
    let w = p.get_mut("head.l2.w")?;
    for r in 0..w.rows {
        for c in 0..PARAM_COUNT {
            w.set(r, c, T::zero());
        }
        if r < 2 * n && w.cols > PARAM_COUNT {
            w.set(r, PARAM_COUNT, T::zero());
        }
    }
    for (k, &(c, _)) in cols.iter().enumerate() {
        w.set(2 * k, c, T::one());
        w.set(2 * k + 1, c, -T::one());
    }
    let b = p.get_mut("head.l2.b")?;
    (0..PARAM_COUNT).for_each(|c| b.set(0, c, T::zero()));
    Ok(())
}

/// `N(0, 1)` latents, reproducible per seed.
pub fn init_latents<T: Real>(g: usize, d_state: usize, seed: u64) -> LatentStates<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor2::from_fn(g, d_state, |_, _| {
        let v: f32 = StandardNormal.sample(&mut rng);
        T::widen(v)
    })
}

/// Latents from per-Gaussian feature rows through a linear map.
pub fn project_latents<T: Real>(features: &Tensor2<T>, weight: &Tensor2<T>) -> Result<LatentStates<T>> {
    if features.cols != weight.rows {
        return Err(Error::Shape { op: "project_latents", lhs: features.shape(), rhs: weight.shape() });
    }
    Ok(features.matmul(weight))
}

/// Neighbour table on the cloud's current means.
pub fn neighbors_for<T: Real>(cloud: &GaussianCloud<T>, cfg: &L2SConfig) -> Result<NeighborTable> {
    let pts: Vec<[f32; 3]> = cloud.means().iter().map(|m| m.map(|v| v.to_f32_lossy())).collect();
    build_knn_with(&pts, cfg.k, cfg.include_self)
}

fn linear<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let w = pv.get(&format!("{name}.w"))?;
    let b = pv.get(&format!("{name}.b"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

fn layer_norm<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let g = pv.get(&format!("{name}.g"))?;
    let b = pv.get(&format!("{name}.b"))?;
    tape.layer_norm(x, g, b)
}

/// `[adam_grads | params | states (| time encoding)]`. Gradients and
/// parameters pass through a stop-gradient; only the states stay
/// differentiable.
pub fn assemble_input<T: Real>(
    tape: &mut Tape<T>,
    adam_grads: Var,
    params: Var,
    states: Var,
    time: Option<&[f64]>,
) -> Result<Var> {
    let g = tape.value(states).rows;
    if g == 0 {
        return Err(Error::EmptyCloud("model input has no rows"));
    }
    for v in [adam_grads, params] {
        let shape = tape.value(v).shape();
        if shape != (g, PARAM_COUNT) {
            return Err(Error::Shape { op: "assemble_input", lhs: (g, PARAM_COUNT), rhs: shape });
        }
    }
    let a = tape.stop_gradient(adam_grads);
    let p = tape.stop_gradient(params);
    let mut parts = vec![a, p, states];
    if let Some(enc) = time {
        let row: Vec<T> = enc.iter().map(|v| T::lit(*v)).collect();
        let t = Tensor2::from_fn(g, enc.len(), |_, c| row[c]);
        parts.push(tape.constant(t));
    }
    tape.concat_cols(&parts)
}

/// Stack of pre-norm blocks with single-head attention over each Gaussian's
/// neighbours. Returns the next unscaled states.
pub fn point_transformer_forward<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &L2SConfig,
    x: Var,
    neighbors: &NeighborTable,
) -> Result<Var> {
    let g = tape.value(x).rows;
    let k = neighbors.k;
    if neighbors.len() != g {
        return Err(Error::Shape { op: "point_transformer_forward", lhs: (g, k), rhs: (neighbors.len(), neighbors.k) });
    }
    let dh = cfg.d_head();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut h = linear(tape, pv, "pt.in", x)?;
    for i in 0..cfg.n_blocks {
        let a = layer_norm(tape, pv, &format!("pt.{i}.ln1"), h)?;
        let qkv = linear(tape, pv, &format!("pt.{i}.qkv"), a)?;
        let q = tape.slice_cols(qkv, 0, dh)?;
        let kk = tape.slice_cols(qkv, dh, 2 * dh)?;
        let v = tape.slice_cols(qkv, 2 * dh, 3 * dh)?;
        let kn = tape.gather_rows(kk, &neighbors.indices)?;
        let vn = tape.gather_rows(v, &neighbors.indices)?;
        let qr = tape.repeat_rows(q, k)?;
        let prod = tape.mul(qr, kn)?;
        let logits = tape.row_sum(prod)?;
        let logits = tape.scale(logits, inv_sqrt)?;
        let logits = tape.reshape(logits, g, k)?;
        let w = tape.softmax_rows(logits)?;
        let w = tape.reshape(w, g * k, 1)?;
        let weighted = tape.scale_rows(vn, w)?;
        let att = tape.sum_row_groups(weighted, k)?;
        let proj = linear(tape, pv, &format!("pt.{i}.proj"), att)?;
        h = tape.add(h, proj)?;

        let b = layer_norm(tape, pv, &format!("pt.{i}.ln2"), h)?;
        let m = linear(tape, pv, &format!("pt.{i}.mlp1"), b)?;
        let m = tape.gelu(m)?;
        let m = linear(tape, pv, &format!("pt.{i}.mlp2"), m)?;
        h = tape.add(h, m)?;
    }
    Ok(h)
}

/// Non-negative per-Gaussian factor `ρ_s`, `G × 1`.
pub fn state_scale_forward<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var) -> Result<Var> {
    let h = linear(tape, pv, "scale.l1", x)?;
    let h = tape.relu(h)?;
    let o = linear(tape, pv, "scale.l2", h)?;
    tape.relu(o)
}

/// Head outputs on the tape.
#[derive(Clone, Copy, Debug)]
pub struct UpdateVars {
    pub direction: Var,
    pub magnitude: Var,
    pub delta: Var,
}

/// `[d→60] GeLU [60→60]`, split into a unit direction and a ReLU magnitude.
/// Rows whose raw direction vanishes get a zero direction and magnitude.
pub fn update_head_forward<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &L2SConfig,
    scaled_states: Var,
) -> Result<UpdateVars> {
    let h = linear(tape, pv, "head.l1", scaled_states)?;
    let h = tape.gelu(h)?;
    let o = linear(tape, pv, "head.l2", h)?;
    let raw = tape.slice_cols(o, 0, PARAM_COUNT)?;
    let direction = tape.unit_normalize_rows(raw)?;
    let mag = tape.slice_cols(o, PARAM_COUNT, HEAD_WIDTH)?;
    let mag = tape.relu(mag)?;
    let floor = T::lit(UNIT_NORM_FLOOR);
    let live = {
        let r = tape.value(raw);
        Tensor2::from_fn(r.rows, 1, |i, _| {
            let n2: T = r.row(i).iter().map(|v| *v * *v).sum();
            if n2.sqrt() < floor {
                T::zero()
            } else {
                T::one()
            }
        })
    };
    let live = tape.constant(live);
    let mag = tape.mul(mag, live)?;
    let magnitude = tape.scale(mag, cfg.update_scale)?;
    let delta = tape.scale_rows(direction, magnitude)?;
    Ok(UpdateVars { direction, magnitude, delta })
}

/// Detached per-step inputs of one model evaluation.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs<'a, T> {
    /// `G × 59` normalized gradients.
    pub adam_grads: &'a [T],
    /// `G × 59` current parameters.
    pub params: &'a [T],
    pub neighbors: &'a NeighborTable,
    /// Completed inner steps before this update.
    pub inner_step: u64,
}

/// Everything one step leaves on the tape.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    /// Unscaled next states.
    pub states: Var,
    pub delta: Var,
    pub direction: Option<Var>,
    pub magnitude: Option<Var>,
    pub state_scale: Option<Var>,
}

/// Baseline cosine factor at step `t`.
pub fn baseline_factor(cfg: &L2SConfig, t: u64) -> f64 {
    cosine_lr(t as f64, cfg.horizon as f64, crate::optim::COSINE_OFFSET)
}

/// One model evaluation recorded on `tape`, for either model kind.
pub fn forward_step<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &L2SConfig,
    inputs: StepInputs<'_, T>,
    states: Var,
) -> Result<StepVars> {
    let enc = match cfg.kind {
        ModelKind::L2s => None,
        ModelKind::LoBaseline => {
            let p = cfg.time_input.value(inputs.inner_step as f64, cfg.horizon as f64);
            Some(time_encoding(p, cfg.time_freqs))
        }
    };
    let g = tape.value(states).rows;
    let a = tape.constant(Tensor2::from_vec(g, PARAM_COUNT, inputs.adam_grads.to_vec())?);
    let p = tape.constant(Tensor2::from_vec(g, PARAM_COUNT, inputs.params.to_vec())?);
    let x = assemble_input(tape, a, p, states, enc.as_deref())?;
    let next = point_transformer_forward(tape, pv, cfg, x, inputs.neighbors)?;
    match cfg.kind {
        ModelKind::L2s => {
            let rho = state_scale_forward(tape, pv, x)?;
            let scaled = tape.scale_rows(next, rho)?;
            let u = update_head_forward(tape, pv, cfg, scaled)?;
            Ok(StepVars {
                states: next,
                delta: u.delta,
                direction: Some(u.direction),
                magnitude: Some(u.magnitude),
                state_scale: Some(rho),
            })
        }
        ModelKind::LoBaseline => {
            let h = linear(tape, pv, "head.l1", next)?;
            let h = tape.gelu(h)?;
            let o = linear(tape, pv, "head.l2", h)?;
            let delta = tape.scale(o, cfg.update_scale * baseline_factor(cfg, inputs.inner_step))?;
            Ok(StepVars { states: next, delta, direction: None, magnitude: None, state_scale: None })
        }
    }
}

/// Values of one step's prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdatePrediction<T = f32> {
    /// Unit rows (zero rows where the update vanishes).
    pub direction: Tensor2<T>,
    pub magnitude: Vec<T>,
    pub delta: Tensor2<T>,
    /// `ρ_s`; ones for the baseline, which has no state scaling.
    pub state_scale: Vec<T>,
}

impl<T: Real> UpdatePrediction<T> {
    fn read(tape: &Tape<T>, v: &StepVars) -> Self {
        let delta = tape.value(v.delta).clone();
        let g = delta.rows;
        let (direction, magnitude) = match (v.direction, v.magnitude) {
            (Some(d), Some(m)) => (tape.value(d).clone(), tape.value(m).data.clone()),
            _ => {
                let mut dir = delta.clone();
                let mut mag = Vec::with_capacity(g);
                for i in 0..g {
                    let row = dir.row_mut(i);
                    let n: T = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                    if n >= T::lit(UNIT_NORM_FLOOR) {
                        row.iter_mut().for_each(|x| *x /= n);
                    } else {
                        row.iter_mut().for_each(|x| *x = T::zero());
                    }
                    mag.push(n);
                }
                (dir, mag)
            }
        };
        let state_scale = match v.state_scale {
            Some(s) => tape.value(s).data.clone(),
            None => vec![T::one(); g],
        };
        UpdatePrediction { direction, magnitude, delta, state_scale }
    }
}

/// `cloud − delta`, rejecting non-finite results.
pub fn apply_update<T: Real>(cloud: &GaussianCloud<T>, delta: &Tensor2<T>) -> Result<GaussianCloud<T>> {
    if delta.shape() != (cloud.len(), PARAM_COUNT) {
        return Err(Error::Shape { op: "apply_update", lhs: (cloud.len(), PARAM_COUNT), rhs: delta.shape() });
    }
    let mut next = cloud.clone();
    for (p, d) in next.as_matrix_mut().iter_mut().zip(&delta.data) {
        *p -= *d;
    }
    if let Some(index) = next.first_non_finite() {
        return Err(Error::NonFiniteGaussian { index });
    }
    Ok(next)
}

/// One learned update without gradient tracking: the updated cloud, the
/// unscaled next states, and the prediction.
pub fn l2s_step<T: Real>(
    cloud: &GaussianCloud<T>,
    adam_grads: &[T],
    states: &LatentStates<T>,
    params: &ModelParameters<T>,
    cfg: &L2SConfig,
    neighbors: &NeighborTable,
    inner_step: u64,
) -> Result<(GaussianCloud<T>, LatentStates<T>, UpdatePrediction<T>)> {
    if states.rows != cloud.len() || states.cols != cfg.d_state {
        return Err(Error::Shape { op: "l2s_step", lhs: (cloud.len(), cfg.d_state), rhs: states.shape() });
    }
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let s = tape.constant(states.clone());
    let inputs = StepInputs { adam_grads, params: cloud.as_matrix(), neighbors, inner_step };
    let vars = forward_step(&mut tape, &pv, cfg, inputs, s)?;
    let pred = UpdatePrediction::read(&tape, &vars);
    let next = apply_update(cloud, &pred.delta)?;
    Ok((next, tape.value(vars.states).clone(), pred))
}

/// The baseline's update: same plumbing, time-conditioned input and cosine
/// schedule on the output.
pub fn lo_baseline_step<T: Real>(
    cloud: &GaussianCloud<T>,
    adam_grads: &[T],
    states: &LatentStates<T>,
    params: &ModelParameters<T>,
    cfg: &L2SConfig,
    neighbors: &NeighborTable,
    inner_step: u64,
) -> Result<(GaussianCloud<T>, LatentStates<T>, UpdatePrediction<T>)> {
    if cfg.kind != ModelKind::LoBaseline {
        return Err(Error::config("lo_baseline_step needs a baseline configuration"));
    }
    l2s_step(cloud, adam_grads, states, params, cfg, neighbors, inner_step)
}
