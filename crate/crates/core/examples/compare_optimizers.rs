//! A multi-scene comparison with a time-to-threshold table, written as CSV
//! files and a PSNR curve plot.
//!
//! ```text
//! cargo run --release --example compare_optimizers -- /tmp/compare_out
//! ```

use std::path::PathBuf;

use splatopt::harness::{compare, write_report, CompareConfig, MethodSpec, OptimizerChoice, RunConfig};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "compare_out".into()));
    let scenes: Vec<_> =
        (0..4).map(|s| generate_synthetic_scene(100 + s, &SceneSpec::default())).collect::<Result<_, _>>()?;
    let method = |label: &str, opt| MethodSpec { label: label.into(), run: RunConfig::new(opt, 200) };
    let cfg = CompareConfig {
        methods: vec![
            method("adam-3dgs", OptimizerChoice::Adam3dgs),
            method("adam-3dgs-star", OptimizerChoice::Adam3dgsStar),
            method("sgd", OptimizerChoice::Sgd),
        ],
        ..CompareConfig::default()
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = compare(&scenes, &cfg, threads)?;
    write_report(&report, &out)?;
    println!("{:>16} {:>7} {:>10} {:>10}", "method", "percent", "iteration", "ms");
    for t in &report.thresholds {
        let fmt = |v: Option<f64>| v.map_or("never".into(), |x| format!("{x:.1}"));
        println!("{:>16} {:>7.0} {:>10} {:>10}", t.method, 100.0 * t.fraction, fmt(t.iteration), fmt(t.wall_ms));
    }
    println!("curves and plot in {}", out.display());
    Ok(())
}
