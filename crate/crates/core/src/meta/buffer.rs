use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::MetaConfig;
use crate::autodiff::Tensor2;
use crate::optim::AdamState;
use crate::scene::GaussianCloud;
use crate::{Error, Result};

/// A partially optimized scene, resumable by any later meta-iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub scene_id: String,
    pub cloud: GaussianCloud<f32>,
    pub latents: Tensor2<f32>,
    pub shadow_adam: AdamState<f32>,
    pub inner_step_count: u64,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.inner_step_count == 0 {
            return Err(Error::config("a stored checkpoint has at least one inner step"));
        }
        let g = self.cloud.len();
        if self.latents.rows != g || self.shadow_adam.len() != g {
            return Err(Error::Shape {
                op: "checkpoint",
                lhs: (g, 0),
                rhs: (self.latents.rows, self.shadow_adam.len()),
            });
        }
        if self.cloud.first_non_finite().is_some() || !self.latents.all_finite() || !self.shadow_adam.all_finite() {
            return Err(Error::Numerical {
                scene_id: self.scene_id.clone(),
                step: self.inner_step_count as usize,
                msg: "non-finite checkpoint".into(),
            });
        }
        Ok(())
    }
}

/// Bounded FIFO store of checkpoints.
#[derive(Clone, Debug)]
pub struct CheckpointBuffer<C = Checkpoint> {
    capacity: usize,
    entries: VecDeque<C>,
}

impl<C> CheckpointBuffer<C> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        CheckpointBuffer { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `c`, returning the evicted oldest entry when full.
    pub fn push(&mut self, c: C) -> Option<C> {
        let evicted = if self.entries.len() == self.capacity { self.entries.pop_front() } else { None };
        self.entries.push_back(c);
        evicted
    }

    /// Removes and returns entry `i` (0 is the oldest).
    pub fn take(&mut self, i: usize) -> Option<C> {
        self.entries.remove(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &C> {
        self.entries.iter()
    }
}

/// Where a meta-iteration starts from.
#[derive(Clone, Debug, PartialEq)]
pub enum Start<C> {
    Fresh,
    Resumed(C),
}

/// Draws the starting point: with probability `p_buffer` (and a non-empty
/// buffer) a uniformly chosen entry is taken out of the buffer.
pub fn draw_start<C>(buffer: &mut CheckpointBuffer<C>, p_buffer: f64, rng: &mut impl Rng) -> Start<C> {
    let coin: f64 = rng.random();
    if buffer.is_empty() || coin >= p_buffer {
        return Start::Fresh;
    }
    let i = rng.random_range(0..buffer.len());
    Start::Resumed(buffer.take(i).expect("index in range"))
}

/// Inner unroll length `τ ~ U{1..τ_max}`.
pub fn draw_tau(cfg: &MetaConfig, rng: &mut impl Rng) -> usize {
    rng.random_range(1..=cfg.tau_max)
}

/// Rollout length `~ U{1..τ_a(t_meta)}`.
pub fn draw_rollout(cfg: &MetaConfig, t_meta: u64, rng: &mut impl Rng) -> usize {
    rng.random_range(1..=cfg.tau_a(t_meta))
}

/// Push coin with the probability for fresh or resumed lineages.
pub fn draw_push(cfg: &MetaConfig, fresh: bool, rng: &mut impl Rng) -> bool {
    let p = if fresh { cfg.p_push } else { cfg.p_push_back };
    rng.random::<f64>() < p
}

/// Visit statistics of a buffer simulation without any learning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BufferSimulation {
    /// Trained inner step (1-based) → number of meta-iterations that trained it.
    pub visits: BTreeMap<u64, u64>,
    /// Largest inner step count any lineage reached.
    pub max_inner_step: u64,
    pub fresh_starts: u64,
}

impl BufferSimulation {
    pub fn visits_at(&self, step: u64) -> u64 {
        self.visits.get(&step).copied().unwrap_or(0)
    }
}

/// Runs the sampling schedule of meta-training with stub rollouts that only
/// advance step counters. Draws happen in the same order as in training.
pub fn simulate_buffer(cfg: &MetaConfig, iterations: u64, rng: &mut impl Rng) -> BufferSimulation {
    let mut buffer: CheckpointBuffer<u64> = CheckpointBuffer::new(cfg.buffer_capacity);
    let mut sim = BufferSimulation::default();
    for t in 0..iterations {
        let (start, fresh) = match draw_start(&mut buffer, cfg.p_buffer, rng) {
            Start::Fresh => (0, true),
            Start::Resumed(c) => (c, false),
        };
        sim.fresh_starts += fresh as u64;
        let tau = draw_tau(cfg, rng) as u64;
        for s in start + 1..=start + tau {
            *sim.visits.entry(s).or_default() += 1;
        }
        let end = start + tau + draw_rollout(cfg, t, rng) as u64;
        sim.max_inner_step = sim.max_inner_step.max(end);
        if draw_push(cfg, fresh, rng) {
            buffer.push(end);
        }
    }
    sim
}
