use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::buffer::{draw_push, draw_rollout, draw_start, draw_tau, Checkpoint, CheckpointBuffer, Start};
use super::rollout::{inner_rollout, meta_gradient, InnerState, RolloutMode, SceneViews};
use super::MetaConfig;
use crate::autodiff::{adam_step_params, ModelCheckpoint, ModelParameters, ParamAdamState};
use crate::model::{init_latents, init_model, L2SConfig};
use crate::optim::AdamState;
use crate::scene::SceneDataset;
use crate::{Error, Result};

/// One line of the meta-training log.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRow {
    pub meta_iter: u64,
    pub scene_id: String,
    pub start_inner_step: u64,
    pub tau: usize,
    pub rollout_len: usize,
    pub l_render: f64,
    pub l_lvs: f64,
    pub l_stab: f64,
    pub l_meta: f64,
    pub wall_ms: f64,
}

/// Append-only CSV of [`MetricsRow`]s.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    /// Opens `path` for appending, writing the header when the file is new.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(MetricsLog { writer })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(csv_err)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// One meta-iteration: pick a start, unroll `τ` learned steps with gradient
/// tracking, update the model, then advance the scene with the frozen model
/// and maybe store it for later.
pub fn meta_iteration(
    buffer: &mut CheckpointBuffer,
    pool: &[SceneViews<f32>],
    params: &mut ModelParameters<f32>,
    meta_adam: &mut ParamAdamState<f32>,
    cfg: &MetaConfig,
    t_meta: u64,
    rng: &mut impl Rng,
) -> Result<MetricsRow> {
    if pool.is_empty() {
        return Err(Error::config("meta-training needs at least one scene"));
    }
    let clock = Instant::now();
    let (views, mut state, fresh) = match draw_start(buffer, cfg.p_buffer, rng) {
        Start::Fresh => {
            let views = &pool[rng.random_range(0..pool.len())];
            let g = views.initial_cloud.len();
            let latents = init_latents(g, cfg.model.d_state, rng.random());
            let state = InnerState::new(views.initial_cloud.clone(), latents, AdamState::zeros(g), 0);
            (views, state, true)
        }
        Start::Resumed(c) => {
            let views = pool
                .iter()
                .find(|v| v.scene_id == c.scene_id)
                .ok_or_else(|| Error::config(format!("checkpoint of unknown scene {}", c.scene_id)))?;
            (views, InnerState::new(c.cloud, c.latents, c.shadow_adam, c.inner_step_count), false)
        }
    };
    let start_inner_step = state.inner_step;
    let tau = draw_tau(cfg, rng);

    let (chunks, chunk) = if cfg.update_every_step { (tau, 1) } else { (1, tau) };
    let mut sums = [0.0; 4];
    for _ in 0..chunks {
        let rollout = inner_rollout(views, &mut state, params, cfg, chunk, RolloutMode::Train, rng)?;
        let (report, grads) = meta_gradient(&rollout, views, params, cfg)?;
        if !grads.all_finite() {
            return Err(Error::Numerical {
                scene_id: views.scene_id.clone(),
                step: state.inner_step as usize,
                msg: "non-finite meta-gradient".into(),
            });
        }
        adam_step_params(params, &grads, meta_adam, cfg.meta_lr, cfg.meta_adam)?;
        for (s, v) in
            sums.iter_mut().zip([report.term("render"), report.term("lvs"), report.term("stab"), report.value])
        {
            *s += v;
        }
    }

    let rollout_len = draw_rollout(cfg, t_meta, rng);
    inner_rollout(views, &mut state, params, cfg, rollout_len, RolloutMode::Frozen, rng)?;
    if draw_push(cfg, fresh, rng) {
        buffer.push(Checkpoint {
            scene_id: views.scene_id.clone(),
            cloud: state.cloud,
            latents: state.latents,
            shadow_adam: state.shadow,
            inner_step_count: state.inner_step,
        });
    }
    Ok(MetricsRow {
        meta_iter: t_meta,
        scene_id: views.scene_id.clone(),
        start_inner_step,
        tau,
        rollout_len,
        l_render: sums[0],
        l_lvs: sums[1],
        l_stab: sums[2],
        l_meta: sums[3],
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
    })
}

/// Random stream of meta-iteration `t_meta`; resuming at `t_meta` replays
/// the same draws.
pub fn iteration_rng(seed: u64, t_meta: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t_meta);
    rng
}

/// Meta-training state over a fixed scene pool.
pub struct Trainer {
    pub cfg: MetaConfig,
    pub params: ModelParameters<f32>,
    pub meta_adam: ParamAdamState<f32>,
    pub buffer: CheckpointBuffer,
    pub t_meta: u64,
    pub seed: u64,
    pool: Vec<SceneViews<f32>>,
}

impl Trainer {
    pub fn new(cfg: MetaConfig, pool: &[SceneDataset], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = init_model(&cfg.model, seed)?;
        Self::assemble(cfg, pool, seed, params, None, 0)
    }

    /// Continues from a saved model. The checkpoint buffer starts empty.
    pub fn resume(cfg: MetaConfig, pool: &[SceneDataset], seed: u64, ckpt: ModelCheckpoint) -> Result<Self> {
        cfg.validate()?;
        let saved: L2SConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::config(format!("model checkpoint config: {e}")))?;
        if saved != cfg.model {
            return Err(Error::config("model checkpoint was trained with a different architecture"));
        }
        Self::assemble(cfg, pool, seed, ckpt.params, ckpt.meta_adam, ckpt.meta_step)
    }

    fn assemble(
        cfg: MetaConfig,
        pool: &[SceneDataset],
        seed: u64,
        params: ModelParameters<f32>,
        meta_adam: Option<ParamAdamState<f32>>,
        t_meta: u64,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::config("meta-training needs at least one scene"));
        }
        for ds in pool {
            ds.validate()?;
        }
        let meta_adam = meta_adam.unwrap_or_else(|| ParamAdamState::new(&params));
        Ok(Trainer {
            buffer: CheckpointBuffer::new(cfg.buffer_capacity),
            pool: pool.iter().map(|ds| SceneViews::new(ds, cfg.target_views)).collect(),
            cfg,
            params,
            meta_adam,
            t_meta,
            seed,
        })
    }

    pub fn step(&mut self) -> Result<MetricsRow> {
        let mut rng = iteration_rng(self.seed, self.t_meta);
        let row = meta_iteration(
            &mut self.buffer,
            &self.pool,
            &mut self.params,
            &mut self.meta_adam,
            &self.cfg,
            self.t_meta,
            &mut rng,
        )?;
        self.t_meta += 1;
        Ok(row)
    }

    pub fn checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            config_json: serde_json::to_string(&self.cfg.model).expect("config serializes"),
            params: self.params.clone(),
            meta_adam: Some(self.meta_adam.clone()),
            meta_step: self.t_meta,
            tau_a_position: self.t_meta,
        }
    }

    /// Runs until `t_meta` reaches `until`, logging every row and saving the
    /// model every `checkpoint_every` iterations and at the end.
    pub fn train(
        &mut self,
        until: u64,
        mut log: Option<&mut MetricsLog>,
        out_dir: Option<&Path>,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while self.t_meta < until {
            let row = self.step()?;
            if let Some(l) = log.as_deref_mut() {
                l.append(&row)?;
            }
            rows.push(row);
            let every = self.cfg.checkpoint_every as u64;
            if let Some(dir) = out_dir {
                if every > 0 && self.t_meta.is_multiple_of(every) {
                    self.checkpoint().save(&checkpoint_path(dir, Some(self.t_meta)))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&checkpoint_path(dir, None))?;
        }
        Ok(rows)
    }
}

/// `model_{t:06}.l2sm`, or `model_final.l2sm`.
pub fn checkpoint_path(dir: &Path, t_meta: Option<u64>) -> PathBuf {
    match t_meta {
        Some(t) => dir.join(format!("model_{t:06}.l2sm")),
        None => dir.join("model_final.l2sm"),
    }
}
