//! Run a learned optimizer on held-out scenes next to 3DGS Adam. Pass a
//! model checkpoint (for instance from the `meta_train` example); without
//! one, the untrained desk model is used.
//!
//! ```text
//! cargo run --release --example learned_optimizer -- [model.l2sm]
//! ```

use splatopt::autodiff::ModelCheckpoint;
use splatopt::harness::{optimize_scene, LoadedModel, OptimizerChoice, RunConfig};
use splatopt::model::{init_model, L2SConfig};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => LoadedModel::from_checkpoint(&ModelCheckpoint::load(p.as_ref())?)?,
        None => {
            let cfg = L2SConfig::desk();
            LoadedModel { params: init_model(&cfg, 0)?, cfg }
        }
    };
    let scenes: Vec<_> =
        (10_000..10_005).map(|s| generate_synthetic_scene(s, &SceneSpec::default())).collect::<Result<_, _>>()?;
    let cadence = vec![1, 2, 5, 10, 20, 50, 100];
    for opt in [OptimizerChoice::Adam3dgs, OptimizerChoice::L2s] {
        let cfg = RunConfig { cadence: cadence.clone(), ..RunConfig::new(opt, 100) };
        let mut mean = vec![0.0; cadence.len() + 1];
        let mut norms = [0.0; 10];
        for ds in &scenes {
            let out = optimize_scene(ds, &cfg, Some(&model), None)?;
            for (m, r) in mean.iter_mut().zip(&out.rows) {
                *m += r.psnr_target / scenes.len() as f64;
            }
            for (n, u) in norms.iter_mut().zip(&out.update_norms) {
                *n += u / scenes.len() as f64;
            }
        }
        let row: String = mean.iter().map(|v| format!("{v:7.2}")).collect();
        println!("{:>10} psnr at 0,{cadence:?}: {row}", opt.name());
        let row: String = norms.iter().map(|v| format!("{v:7.4}")).collect();
        println!("{:>10} mean update norm, first steps: {row}", "");
    }
    Ok(())
}
