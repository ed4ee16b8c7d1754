//! The time-conditioned baseline scales its updates by a cosine schedule
//! over a fixed horizon, so past the horizon it stops moving. This prints
//! the schedule and the mean update norm of an untrained baseline and an
//! untrained learned model when run for ten times the horizon.

use splatopt::harness::{optimize_scene, LoadedModel, OptimizerChoice, RunConfig};
use splatopt::model::{baseline_factor, init_model, L2SConfig, ModelKind};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let horizon = 30;
    let lo_cfg = L2SConfig { kind: ModelKind::LoBaseline, horizon, ..L2SConfig::desk() };
    for t in [0, 10, 20, 29, 30, 100] {
        println!("cosine factor at step {t:>3}: {:.4}", baseline_factor(&lo_cfg, t));
    }
    let ds = generate_synthetic_scene(2, &SceneSpec::default())?;
    let l2s_cfg = L2SConfig::desk();
    for (opt, cfg) in [(OptimizerChoice::LoBaseline, lo_cfg), (OptimizerChoice::L2s, l2s_cfg)] {
        let model = LoadedModel { params: init_model(&cfg, 0)?, cfg };
        let out = optimize_scene(&ds, &RunConfig::new(opt, 10 * horizon as u64), Some(&model), None)?;
        let mean = |r: std::ops::Range<usize>| out.update_norms[r.clone()].iter().sum::<f64>() / r.len() as f64;
        println!(
            "{:>12}: mean update norm, steps < T {:.5}, steps > T {:.5}",
            opt.name(),
            mean(0..horizon),
            mean(horizon..10 * horizon)
        );
    }
    Ok(())
}
