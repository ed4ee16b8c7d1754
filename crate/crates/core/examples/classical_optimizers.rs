//! SGD against the two Adam presets on one synthetic scene, reporting target
//! PSNR at each evaluation point.

use splatopt::harness::{optimize_scene, OptimizerChoice, RunConfig};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let ds = generate_synthetic_scene(11, &SceneSpec::default())?;
    let iterations = 200;
    println!(
        "{:>16} {}",
        "iter",
        RunConfig::new(OptimizerChoice::Sgd, iterations)
            .eval_points()
            .iter()
            .map(|i| format!("{i:>7}"))
            .collect::<String>()
    );
    for opt in [OptimizerChoice::Sgd, OptimizerChoice::Adam3dgs, OptimizerChoice::Adam3dgsStar] {
        let out = optimize_scene(&ds, &RunConfig::new(opt, iterations), None, None)?;
        let row: String = out.rows.iter().map(|r| format!("{:>7.2}", r.psnr_target)).collect();
        println!("{:>16} {row}", opt.name());
    }
    Ok(())
}
