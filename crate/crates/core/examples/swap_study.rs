//! Swap one parameter group's updates between optimizers: each row takes
//! that group from SGD and the rest from 3DGS Adam, and vice versa.

use splatopt::harness::{optimize_scene, swap_study, OptimizerChoice, RunConfig};
use splatopt::scene::{generate_synthetic_scene, ParamGroup, SceneSpec};

fn main() -> anyhow::Result<()> {
    let ds = generate_synthetic_scene(21, &SceneSpec::default())?;
    let iterations = 100;
    let adam = RunConfig::new(OptimizerChoice::Adam3dgs, iterations);
    let sgd = RunConfig::new(OptimizerChoice::Sgd, iterations);
    let last = |rows: &[splatopt::harness::EvalRow]| rows.last().map_or(f64::NAN, |r| r.psnr_target);
    println!("adam alone: {:.2} dB", last(&optimize_scene(&ds, &adam, None, None)?.rows));
    println!("sgd alone:  {:.2} dB", last(&optimize_scene(&ds, &sgd, None, None)?.rows));
    for group in ParamGroup::ALL {
        let into_adam = swap_study(&ds, group, &sgd, &adam, None)?;
        let into_sgd = swap_study(&ds, group, &adam, &sgd, None)?;
        println!(
            "{:>10}: sgd into adam {:6.2} dB   adam into sgd {:6.2} dB",
            group.name(),
            last(&into_adam.rows),
            last(&into_sgd.rows)
        );
    }
    Ok(())
}
