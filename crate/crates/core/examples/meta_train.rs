//! Meta-train the desk-scale learned optimizer on synthetic scenes, logging
//! every meta-iteration and saving model checkpoints.
//!
//! ```text
//! cargo run --release --example meta_train -- <iterations> <scenes> <out_dir>
//! ```

use std::path::PathBuf;

use splatopt::meta::{read_metrics, MetaConfig, MetricsLog, Trainer};
use splatopt::scene::{generate_synthetic_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations: u64 = args.next().map_or(Ok(200), |s| s.parse())?;
    let n_scenes: u64 = args.next().map_or(Ok(20), |s| s.parse())?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "meta_train_out".into()));

    let pool: Vec<_> =
        (0..n_scenes).map(|s| generate_synthetic_scene(s, &SceneSpec::default())).collect::<Result<_, _>>()?;
    let cfg = MetaConfig { checkpoint_every: 100, ..MetaConfig::desk() };
    std::fs::create_dir_all(&out)?;
    let metrics = out.join("metrics.csv");
    let mut log = MetricsLog::open(&metrics)?;
    let mut trainer = Trainer::new(cfg, &pool, 0)?;
    trainer.train(iterations, Some(&mut log), Some(&out))?;

    let rows = read_metrics(&metrics)?;
    for chunk in rows.chunks(50.max(rows.len() / 10)) {
        let n = chunk.len() as f64;
        let mean = |f: fn(&splatopt::meta::MetricsRow) -> f64| chunk.iter().map(f).sum::<f64>() / n;
        println!(
            "iters {:>5}-{:<5} render {:.4}  lvs {:.4}  stab {:.4}",
            chunk[0].meta_iter,
            chunk[chunk.len() - 1].meta_iter,
            mean(|r| r.l_render),
            mean(|r| r.l_lvs),
            mean(|r| r.l_stab)
        );
    }
    println!("model written to {}", out.join("model_final.l2sm").display());
    Ok(())
}
