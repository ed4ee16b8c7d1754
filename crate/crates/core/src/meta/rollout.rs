use rand::Rng;

use super::{LvsReduction, MetaConfig, ViewPolicy};
use crate::autodiff::{ModelParameters, ParamVars, Tape, Tensor2, Var};
use crate::image::Image;
use crate::knn::NeighborTable;
use crate::loss::{self, DSsim, LossReport};
use crate::model::{apply_update, forward_step, neighbors_for, LatentStates, StepInputs};
use crate::optim::{adam_normalize, AdamState};
use crate::render::{render, render_backward, render_with_backward, GradientBatch, RenderOptions};
use crate::scene::{fps_indices, Camera, GaussianCloud, SceneDataset};
use crate::{Error, Real, Result};

/// Cameras and reference images of one scene in the working precision.
#[derive(Clone, Debug)]
pub struct SceneViews<T> {
    pub scene_id: String,
    pub context: Vec<(Camera<T>, Image<T>)>,
    pub target: Vec<(Camera<T>, Image<T>)>,
    pub initial_cloud: GaussianCloud<T>,
    context_centers: Vec<[f32; 3]>,
}

impl<T: Real> SceneViews<T> {
    /// All context views and at most `max_targets` target views.
    pub fn new(ds: &SceneDataset, max_targets: usize) -> Self {
        let conv = |v: &crate::scene::View| (v.camera::<T>(), v.image.cast::<T>());
        SceneViews {
            scene_id: ds.scene_id.clone(),
            context: ds.context_views.iter().map(conv).collect(),
            target: ds.target_views.iter().take(max_targets.max(1)).map(conv).collect(),
            initial_cloud: ds.initial_cloud.cast(),
            context_centers: ds.context_views.iter().map(|v| v.center()).collect(),
        }
    }

    /// Context views for one step under `policy`.
    pub fn pick_context(&self, policy: ViewPolicy, count: usize, rng: &mut impl Rng) -> Vec<usize> {
        let n = self.context.len();
        let count = count.min(n);
        match policy {
            ViewPolicy::Fixed => (0..count).collect(),
            ViewPolicy::Fps => {
                let first = rng.random_range(0..n);
                fps_indices(&self.context_centers, count, first)
            }
        }
    }
}

/// Mean inner loss over the chosen context views and its parameter gradient.
pub fn inner_gradient<T: Real>(
    cloud: &GaussianCloud<T>,
    views: &SceneViews<T>,
    ids: &[usize],
    opts: &RenderOptions,
) -> Result<(f64, GradientBatch<T>)> {
    let mut total = GradientBatch::zeros(cloud.len());
    let mut loss = 0.0;
    for &i in ids {
        let (cam, reference) = &views.context[i];
        let mut value = 0.0;
        let (_, g) = render_with_backward(cloud, cam, opts, |img| {
            let (report, grad) = loss::inner_loss_grad(reference, &img.rgb);
            value = report.value;
            grad
        })?;
        loss += value;
        total.add_assign(&g);
    }
    let inv = T::one() / T::lit(ids.len() as f64);
    total.scale(inv);
    Ok((loss / ids.len() as f64, total))
}

/// Mutable optimization state of one scene under the learned optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerState<T> {
    pub cloud: GaussianCloud<T>,
    pub latents: LatentStates<T>,
    pub shadow: AdamState<T>,
    /// Completed inner steps.
    pub inner_step: u64,
    /// Neighbour table and the step it was built at.
    pub neighbors: Option<(NeighborTable, u64)>,
}

impl<T: Real> InnerState<T> {
    pub fn new(cloud: GaussianCloud<T>, latents: LatentStates<T>, shadow: AdamState<T>, inner_step: u64) -> Self {
        InnerState { cloud, latents, shadow, inner_step, neighbors: None }
    }

    fn refresh_neighbors(&mut self, cfg: &MetaConfig) -> Result<NeighborTable> {
        let stale = match &self.neighbors {
            None => true,
            Some((_, built)) => self.inner_step - built >= cfg.model.knn_refresh as u64,
        };
        if stale {
            self.neighbors = Some((neighbors_for(&self.cloud, &cfg.model)?, self.inner_step));
        }
        Ok(self.neighbors.as_ref().expect("just built").0.clone())
    }
}

/// Detached inputs and the resulting update of one inner step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    /// Inner step count after this update (1-based).
    pub inner_step: u64,
    pub context: Vec<usize>,
    pub cloud_before: GaussianCloud<T>,
    pub raw_grads: Vec<T>,
    pub adam_grads: Vec<T>,
    pub neighbors: NeighborTable,
    pub delta: Tensor2<T>,
    pub inner_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutMode {
    /// One tape spans every step through the latent states.
    Train,
    /// No gradient tracking.
    Frozen,
}

/// The tape of a train-mode rollout.
pub struct TrainTrace<T> {
    pub tape: Tape<T>,
    pub params: ParamVars,
    pub deltas: Vec<Var>,
}

pub struct Rollout<T> {
    pub records: Vec<StepRecord<T>>,
    /// Latents the rollout started from.
    pub initial_latents: LatentStates<T>,
    pub trace: Option<TrainTrace<T>>,
}

/// Runs `tau` learned steps on `state`.
pub fn inner_rollout<T: Real>(
    views: &SceneViews<T>,
    state: &mut InnerState<T>,
    params: &ModelParameters<T>,
    cfg: &MetaConfig,
    tau: usize,
    mode: RolloutMode,
    rng: &mut impl Rng,
) -> Result<Rollout<T>> {
    if tau == 0 {
        return Err(Error::config("rollout length must be at least 1"));
    }
    let initial_latents = state.latents.clone();
    let mut records = Vec::with_capacity(tau);
    let mut trace = match mode {
        RolloutMode::Train => {
            let mut tape = Tape::new();
            let pv = params.register(&mut tape);
            Some((tape, pv, Vec::with_capacity(tau), None::<Var>))
        }
        RolloutMode::Frozen => None,
    };
    for _ in 0..tau {
        let ids = views.pick_context(cfg.view_policy, cfg.context_batch, rng);
        let (inner_loss, raw) = inner_gradient(&state.cloud, views, &ids, &cfg.render)?;
        if !inner_loss.is_finite() || !raw.all_finite() {
            return Err(Error::Numerical {
                scene_id: views.scene_id.clone(),
                step: state.inner_step as usize,
                msg: "non-finite inner loss".into(),
            });
        }
        let adam = adam_normalize(&raw, &mut state.shadow, cfg.shadow_adam)?;
        let neighbors = state.refresh_neighbors(cfg)?;
        let inputs = StepInputs {
            adam_grads: &adam,
            params: state.cloud.as_matrix(),
            neighbors: &neighbors,
            inner_step: state.inner_step,
        };
        let (delta, next_states) = match &mut trace {
            Some((tape, pv, deltas, prev)) => {
                let s = match prev {
                    Some(v) => *v,
                    None => tape.constant(state.latents.clone()),
                };
                let vars = forward_step(tape, pv, &cfg.model, inputs, s)?;
                deltas.push(vars.delta);
                *prev = Some(vars.states);
                (tape.value(vars.delta).clone(), tape.value(vars.states).clone())
            }
            None => {
                let mut tape = Tape::new();
                let pv = params.register(&mut tape);
                let s = tape.constant(state.latents.clone());
                let vars = forward_step(&mut tape, &pv, &cfg.model, inputs, s)?;
                (tape.value(vars.delta).clone(), tape.value(vars.states).clone())
            }
        };
        let next = apply_update(&state.cloud, &delta).map_err(|e| Error::Numerical {
            scene_id: views.scene_id.clone(),
            step: state.inner_step as usize + 1,
            msg: e.to_string(),
        })?;
        let before = std::mem::replace(&mut state.cloud, next);
        state.latents = next_states;
        state.inner_step += 1;
        records.push(StepRecord {
            inner_step: state.inner_step,
            context: ids,
            cloud_before: before,
            raw_grads: raw.grads,
            adam_grads: adam,
            neighbors,
            delta,
            inner_loss,
        });
    }
    Ok(Rollout {
        records,
        initial_latents,
        trace: trace.map(|(tape, params, deltas, _)| TrainTrace { tape, params, deltas }),
    })
}

/// Meta loss of a trajectory given each step's update, and the adjoint of the
/// loss with respect to each update. The scene parameters before every step
/// are taken from the records, detached.
pub fn meta_loss_and_seeds<T: Real>(
    views: &SceneViews<T>,
    records: &[StepRecord<T>],
    deltas: &[&Tensor2<T>],
    cfg: &MetaConfig,
) -> Result<(LossReport, Vec<Tensor2<T>>)> {
    meta_loss_core(views, records, deltas, cfg, None).map(|(r, s, _)| (r, s))
}

/// Mean target L1 after every step, the quantity the stability term watches.
pub type TargetErrors<T> = Vec<T>;

fn meta_loss_core<T: Real>(
    views: &SceneViews<T>,
    records: &[StepRecord<T>],
    deltas: &[&Tensor2<T>],
    cfg: &MetaConfig,
    detached: Option<&[T]>,
) -> Result<(LossReport, Vec<Tensor2<T>>, TargetErrors<T>)> {
    assert_eq!(records.len(), deltas.len());
    let opts = &cfg.render;
    let mut clouds = Vec::with_capacity(records.len());
    let mut renders: Vec<Vec<Image<T>>> = Vec::with_capacity(records.len());
    for (rec, delta) in records.iter().zip(deltas) {
        let next = apply_update(&rec.cloud_before, delta)?;
        let mut imgs = Vec::new();
        for &i in &rec.context {
            imgs.push(render(&next, &views.context[i].0, opts)?.rgb);
        }
        for (cam, _) in &views.target {
            imgs.push(render(&next, cam, opts)?.rgb);
        }
        clouds.push(next);
        renders.push(imgs);
    }
    let refs = |rec: &StepRecord<T>| -> Vec<&Image<T>> {
        rec.context.iter().map(|&i| &views.context[i].1).chain(views.target.iter().map(|(_, r)| r)).collect()
    };
    let trajectory: Vec<Vec<(&Image<T>, &Image<T>)>> =
        records.iter().zip(&renders).map(|(rec, imgs)| refs(rec).into_iter().zip(imgs.iter()).collect()).collect();
    let (render_value, mut upstream) = loss::render_loss(&trajectory, cfg.gamma, &DSsim);

    let nt = views.target.len();
    let inv_nt = T::one() / T::lit(nt as f64);
    let mut stab_value = T::zero();
    let mut errors = Vec::with_capacity(records.len());
    let mut l1_grads = Vec::with_capacity(records.len());
    for (rec, imgs) in records.iter().zip(&renders) {
        let nc = rec.context.len();
        let mut e = T::zero();
        let mut gs = Vec::with_capacity(nt);
        for (j, (_, reference)) in views.target.iter().enumerate() {
            let (v, g) = loss::l1_grad(reference, &imgs[nc + j]);
            e += v * inv_nt;
            gs.push(g);
        }
        errors.push(e);
        l1_grads.push(gs);
    }
    if cfg.use_stability {
        let (value, de) = loss::stability_loss_against(&errors, detached.unwrap_or(&errors));
        stab_value = value;
        for (t, rec) in records.iter().enumerate() {
            if de[t] == T::zero() {
                continue;
            }
            let nc = rec.context.len();
            for (j, g) in l1_grads[t].iter().enumerate() {
                let up = &mut upstream[t][nc + j];
                for (u, x) in up.data.iter_mut().zip(&g.data) {
                    *u += de[t] * inv_nt * *x;
                }
            }
        }
    }

    let mut lvs_value = T::zero();
    let mut seeds = Vec::with_capacity(records.len());
    for (t, rec) in records.iter().enumerate() {
        let g = rec.cloud_before.len();
        let mut d_next = GradientBatch::zeros(g);
        let cams = rec.context.iter().map(|&i| &views.context[i].0).chain(views.target.iter().map(|(c, _)| c));
        for (cam, up) in cams.zip(&upstream[t]) {
            d_next.add_assign(&render_backward(&clouds[t], cam, up, opts)?);
        }
        // G_{t+1} = G_t − Δ_t
        let mut seed = Tensor2::from_vec(g, crate::scene::PARAM_COUNT, d_next.grads.iter().map(|v| -*v).collect())?;
        if cfg.use_lvs {
            let (v, sg) =
                loss::low_visibility_loss(&deltas[t].data, &rec.raw_grads, &rec.adam_grads, T::lit(cfg.lvs_epsilon));
            let w = match cfg.lvs_reduction {
                LvsReduction::Sum => T::one(),
                LvsReduction::GaussianMean => T::one() / T::lit(g as f64),
            };
            lvs_value += w * v;
            for (s, x) in seed.data.iter_mut().zip(sg) {
                *s += w * x;
            }
        }
        seeds.push(seed);
    }
    let report = loss::meta_loss(render_value.to_f64_lossy(), lvs_value.to_f64_lossy(), stab_value.to_f64_lossy());
    if !report.value.is_finite() {
        return Err(Error::Numerical {
            scene_id: views.scene_id.clone(),
            step: records.last().map_or(0, |r| r.inner_step as usize),
            msg: "non-finite meta loss".into(),
        });
    }
    Ok((report, seeds, errors))
}

/// Meta loss and its gradient with respect to every model leaf for a
/// train-mode rollout.
pub fn meta_gradient<T: Real>(
    rollout: &Rollout<T>,
    views: &SceneViews<T>,
    params: &ModelParameters<T>,
    cfg: &MetaConfig,
) -> Result<(LossReport, ModelParameters<T>)> {
    let trace = rollout.trace.as_ref().ok_or_else(|| Error::config("meta gradient needs a train-mode rollout"))?;
    let deltas: Vec<&Tensor2<T>> = trace.deltas.iter().map(|v| trace.tape.value(*v)).collect();
    let (report, seeds) = meta_loss_and_seeds(views, &rollout.records, &deltas, cfg)?;
    let seeded: Vec<(Var, Tensor2<T>)> = trace.deltas.iter().copied().zip(seeds).collect();
    let grads = trace.tape.backward(&seeded)?;
    Ok((report, trace.params.gradients(params, &grads)))
}

/// Re-evaluates the meta loss of recorded steps under `params`, holding
/// every detached input (scene parameters, gradients, neighbours) at its
/// recorded value and chaining only the latent states. `detached` fixes the
/// stopped-gradient predecessors of the stability term; without it they
/// follow `params` like everything else.
pub fn replay_meta_loss<T: Real>(
    views: &SceneViews<T>,
    records: &[StepRecord<T>],
    initial_latents: &LatentStates<T>,
    params: &ModelParameters<T>,
    cfg: &MetaConfig,
    detached: Option<&[T]>,
) -> Result<(LossReport, TargetErrors<T>)> {
    let mut states = initial_latents.clone();
    let mut deltas = Vec::with_capacity(records.len());
    for rec in records {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let s = tape.constant(states);
        let inputs = StepInputs {
            adam_grads: &rec.adam_grads,
            params: rec.cloud_before.as_matrix(),
            neighbors: &rec.neighbors,
            inner_step: rec.inner_step - 1,
        };
        let vars = forward_step(&mut tape, &pv, &cfg.model, inputs, s)?;
        deltas.push(tape.value(vars.delta).clone());
        states = tape.value(vars.states).clone();
    }
    let refs: Vec<&Tensor2<T>> = deltas.iter().collect();
    let (report, _, errors) = meta_loss_core(views, records, &refs, cfg, detached)?;
    Ok((report, errors))
}
