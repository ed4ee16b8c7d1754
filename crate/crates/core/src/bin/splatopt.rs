use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use splatopt::autodiff::ModelCheckpoint;
use splatopt::harness::{
    compare, load_toml, optimize_scene, swap_study, write_report, write_rows, CompareConfig, LoadedModel, MethodSpec,
    OptimizerChoice, RunConfig, ViewsPolicy,
};
use splatopt::image::ImageFormat;
use splatopt::meta::{checkpoint_path, MetaConfig, MetricsLog, Trainer};
use splatopt::scene::{
    generate_synthetic_scene, load_scene, load_scene_set, save_scene, ParamGroup, SceneDataset, SceneSpec,
};
use splatopt::Error;

#[derive(Parser)]
#[command(name = "splatopt", version, about = "Classical and learned optimizers for Gaussian splatting")]
struct Cli {
    /// Base seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML config for the verb: scene spec, trainer, run or comparison.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single worker thread. Metrics are reproducible either way; this also
    /// pins the scheduling.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate synthetic scenes.
    Gen(GenArgs),
    /// Meta-train a learned optimizer.
    MetaTrain(MetaTrainArgs),
    /// Optimize one scene and write per-iteration metrics.
    Optimize(OptimizeArgs),
    /// Run several optimizers over a scene set.
    Compare(CompareArgs),
    /// Take one parameter group's updates from another optimizer.
    SwapStudy(SwapArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    targets: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct SceneSource {
    /// A scene directory or a directory of scene directories.
    #[arg(long, conflicts_with = "generate")]
    scenes: Option<PathBuf>,
    /// Use this many synthetic scenes instead.
    #[arg(long)]
    generate: Option<usize>,
}

#[derive(Args)]
struct MetaTrainArgs {
    #[command(flatten)]
    source: SceneSource,
    /// Output directory for checkpoints and `metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Trainer preset when no config is given: desk, paper, lo-desk, lo-paper.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from a model checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct RunOverrides {
    #[arg(long)]
    optimizer: Option<OptimizerChoice>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// fixed-all or fps-N.
    #[arg(long)]
    views: Option<ViewsPolicy>,
    /// Comma-separated parameter groups to hold fixed.
    #[arg(long, value_delimiter = ',')]
    freeze: Vec<String>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    run: RunOverrides,
    /// Save target renders at every cadence point.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    source: SceneSource,
    #[arg(long)]
    out: PathBuf,
    /// Budget for every method, overriding the config.
    #[arg(long)]
    iterations: Option<u64>,
    /// Adds an `l2s` method with this model when no config is given.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct SwapArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    group: String,
    #[arg(long)]
    source: OptimizerChoice,
    #[arg(long)]
    target: OptimizerChoice,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iterations: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Parse { .. }) => 2,
        Some(Error::Numerical { .. }) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = if cli.deterministic {
        1
    } else {
        cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    };
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("thread pool")?;
    let config = cli.config.as_deref();
    match cli.verb {
        Verb::Gen(a) => gen(a, config, cli.seed.unwrap_or(0)),
        Verb::MetaTrain(a) => meta_train(a, config, cli.seed.unwrap_or(0)),
        Verb::Optimize(a) => optimize(a, config, cli.seed),
        Verb::Compare(a) => run_compare(a, config, cli.seed, threads),
        Verb::SwapStudy(a) => swap(a, config, cli.seed),
    }
}

fn gen(a: GenArgs, config: Option<&Path>, seed: u64) -> anyhow::Result<()> {
    let mut spec: SceneSpec = config.map(load_toml).transpose()?.unwrap_or_default();
    if let Some(n) = a.gaussians {
        spec.n_gaussians = n;
    }
    if let Some(n) = a.context {
        spec.n_context = n;
    }
    if let Some(n) = a.targets {
        spec.n_target = n;
    }
    if let Some(s) = a.size {
        spec.image_size = (s, s);
    }
    for i in 0..a.count {
        let ds = generate_synthetic_scene(seed + i as u64, &spec)?;
        let dir = a.out.join(format!("scene_{i:04}"));
        save_scene(&ds, &dir, ImageFormat::Png)?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn scenes(src: &SceneSource, seed: u64) -> anyhow::Result<Vec<SceneDataset>> {
    match (&src.scenes, src.generate) {
        (Some(dir), _) => Ok(load_scene_set(dir)?),
        (None, Some(n)) => Ok((0..n as u64)
            .map(|i| generate_synthetic_scene(seed + i, &SceneSpec::default()))
            .collect::<Result<_, _>>()?),
        (None, None) => Err(Error::Config("give --scenes or --generate".into()).into()),
    }
}

fn meta_train(a: MetaTrainArgs, config: Option<&Path>, seed: u64) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => MetaConfig::load(p)?,
        None => MetaConfig::preset(&a.preset)?,
    };
    if let Some(n) = a.iterations {
        cfg.meta_iterations = n;
    }
    cfg.validate()?;
    let pool = scenes(&a.source, seed)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(cfg.clone(), &pool, seed, ModelCheckpoint::load(p)?)?,
        None => Trainer::new(cfg.clone(), &pool, seed)?,
    };
    std::fs::create_dir_all(&a.out)?;
    let mut log = MetricsLog::open(&a.out.join("metrics.csv"))?;
    trainer.train(cfg.meta_iterations as u64, Some(&mut log), Some(&a.out))?;
    println!("{}", checkpoint_path(&a.out, None).display());
    Ok(())
}

fn parse_groups(names: &[String]) -> anyhow::Result<Vec<ParamGroup>> {
    names
        .iter()
        .map(|n| ParamGroup::parse(n).ok_or_else(|| Error::Config(format!("unknown parameter group {n:?}")).into()))
        .collect()
}

fn run_config(config: Option<&Path>, o: &RunOverrides, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut rc: RunConfig = config.map(load_toml).transpose()?.unwrap_or_default();
    if let Some(v) = o.optimizer {
        rc.optimizer = v;
    }
    if let Some(v) = o.iterations {
        rc.iterations = v;
    }
    if let Some(v) = &o.model {
        rc.model = Some(v.clone());
    }
    if let Some(v) = o.views {
        rc.views = v;
    }
    if !o.freeze.is_empty() {
        rc.freeze = parse_groups(&o.freeze)?;
    }
    if let Some(s) = seed {
        rc.seed = s;
    }
    rc.validate()?;
    Ok(rc)
}

fn load_model(rc: &RunConfig) -> anyhow::Result<Option<LoadedModel>> {
    Ok(match (&rc.model, rc.optimizer.is_learned()) {
        (Some(p), true) => Some(LoadedModel::load(p)?),
        (None, true) => return Err(Error::Config(format!("optimizer {} needs --model", rc.optimizer)).into()),
        _ => None,
    })
}

fn optimize(a: OptimizeArgs, config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let mut rc = run_config(config, &a.run, seed)?;
    rc.snapshots |= a.snapshots;
    let ds = load_scene(&a.scene)?;
    let model = load_model(&rc)?;
    std::fs::create_dir_all(&a.out)?;
    let snaps = a.out.join("snapshots");
    let out = optimize_scene(&ds, &rc, model.as_ref(), rc.snapshots.then_some(snaps.as_path()))?;
    write_rows(&a.out.join("metrics.csv"), &out.rows)?;
    if let Some(last) = out.rows.last() {
        println!("iter {} psnr_target {:.3}", last.iter, last.psnr_target);
    }
    Ok(())
}

fn run_compare(a: CompareArgs, config: Option<&Path>, seed: Option<u64>, threads: usize) -> anyhow::Result<()> {
    let mut cfg: CompareConfig = match config {
        Some(p) => load_toml(p)?,
        None => {
            let mut methods = vec![OptimizerChoice::Adam3dgs, OptimizerChoice::Adam3dgsStar];
            if a.model.is_some() {
                methods.push(OptimizerChoice::L2s);
            }
            CompareConfig {
                methods: methods
                    .into_iter()
                    .map(|m| MethodSpec {
                        label: m.name().into(),
                        run: RunConfig {
                            model: m.is_learned().then(|| a.model.clone()).flatten(),
                            ..RunConfig::new(m, 100)
                        },
                    })
                    .collect(),
                ..CompareConfig::default()
            }
        }
    };
    for m in &mut cfg.methods {
        if let Some(n) = a.iterations {
            m.run.iterations = n;
        }
        if let Some(s) = seed {
            m.run.seed = s;
        }
    }
    let scenes = scenes(&a.source, seed.unwrap_or(0))?;
    let report = compare(&scenes, &cfg, threads)?;
    write_report(&report, &a.out)?;
    for t in report.thresholds.iter().filter(|t| t.fraction == 1.0) {
        let at = t.iteration.map_or("never".to_string(), |i| format!("{i:.1}"));
        println!("{}: full reference gain at {at}", t.method);
    }
    Ok(())
}

fn swap(a: SwapArgs, config: Option<&Path>, seed: Option<u64>) -> anyhow::Result<()> {
    let group = parse_groups(std::slice::from_ref(&a.group))?[0];
    let base: RunConfig = config.map(load_toml).transpose()?.unwrap_or_default();
    let make = |opt| RunConfig {
        optimizer: opt,
        iterations: a.iterations,
        model: a.model.clone(),
        seed: seed.unwrap_or(base.seed),
        ..base.clone()
    };
    let (source, target) = (make(a.source), make(a.target));
    let model = match &a.model {
        Some(p) => Some(LoadedModel::load(p)?),
        None if a.source.is_learned() || a.target.is_learned() => {
            return Err(Error::Config("learned optimizers need --model".into()).into())
        }
        None => None,
    };
    let ds = load_scene(&a.scene)?;
    let out = swap_study(&ds, group, &source, &target, model.as_ref())?;
    std::fs::create_dir_all(&a.out)?;
    write_rows(&a.out.join("metrics.csv"), &out.rows)?;
    Ok(())
}
