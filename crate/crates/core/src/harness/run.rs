use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rules::{build_rule, LoadedModel, Swap, UpdateRule};
use super::{RunConfig, ViewsPolicy};
use crate::image::{psnr, ImageFormat};
use crate::loss::ssim;
use crate::meta::{inner_gradient, SceneViews, ViewPolicy};
use crate::render::{render, RenderOptions};
use crate::scene::{GaussianCloud, ParamGroup, SceneDataset, PARAM_COUNT};
use crate::{Error, Result};

/// One metrics row of a per-scene run.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalRow {
    pub iter: u64,
    /// Optimization time so far, evaluation excluded.
    pub wall_ms: f64,
    pub psnr_context: f64,
    pub psnr_target: f64,
    pub ssim_context: f64,
    pub ssim_target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub scene_id: String,
    pub rows: Vec<EvalRow>,
    /// Mean per-Gaussian norm of the applied update, one entry per iteration.
    pub update_norms: Vec<f64>,
    pub final_cloud: GaussianCloud,
}

/// Mean PSNR and SSIM over the context and target views.
pub fn evaluate(cloud: &GaussianCloud, views: &SceneViews<f32>, opts: &RenderOptions, cap: f64) -> Result<EvalRow> {
    let score = |set: &[(crate::scene::Camera<f32>, crate::image::Image<f32>)]| -> Result<(f64, f64)> {
        let mut p = 0.0;
        let mut s = 0.0;
        for (cam, reference) in set {
            let img = render(cloud, cam, opts)?.rgb;
            p += psnr(reference, &img, cap);
            s += ssim(reference, &img) as f64;
        }
        let n = set.len() as f64;
        Ok((p / n, s / n))
    };
    let (psnr_context, ssim_context) = score(&views.context)?;
    let (psnr_target, ssim_target) = score(&views.target)?;
    Ok(EvalRow { iter: 0, wall_ms: 0.0, psnr_context, psnr_target, ssim_context, ssim_target })
}

/// Optimizes one scene with the rule `cfg` selects.
pub fn optimize_scene(
    ds: &SceneDataset,
    cfg: &RunConfig,
    model: Option<&LoadedModel>,
    snapshot_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut rule = build_rule(cfg, model, ds.initial_cloud.len())?;
    optimize_with_rule(ds, cfg, rule.as_mut(), snapshot_dir)
}

/// Runs `source` for `group` and `target` for every other group.
pub fn swap_study(
    ds: &SceneDataset,
    group: ParamGroup,
    source: &RunConfig,
    target: &RunConfig,
    model: Option<&LoadedModel>,
) -> Result<RunOutcome> {
    source.validate()?;
    target.validate()?;
    let g = ds.initial_cloud.len();
    let mut rule = Swap { group, source: build_rule(source, model, g)?, target: build_rule(target, model, g)? };
    optimize_with_rule(ds, target, &mut rule, None)
}

/// The run loop: gradient of the inner loss over the iteration's context
/// views, one rule step, metrics at every evaluation point.
pub fn optimize_with_rule(
    ds: &SceneDataset,
    cfg: &RunConfig,
    rule: &mut dyn UpdateRule,
    snapshot_dir: Option<&Path>,
) -> Result<RunOutcome> {
    ds.validate()?;
    let views = SceneViews::<f32>::new(ds, usize::MAX);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (policy, count) = match cfg.views {
        ViewsPolicy::FixedAll => (ViewPolicy::Fixed, views.context.len()),
        ViewsPolicy::Fps(n) => (ViewPolicy::Fps, n),
    };
    let points = cfg.eval_points();
    let mut next_point = 0;
    let mut cloud = ds.initial_cloud.clone();
    let mut rows = Vec::with_capacity(points.len());
    let mut update_norms = Vec::with_capacity(cfg.iterations as usize);
    let mut wall_ms = 0.0;
    let abort = |step: u64, msg: String| Error::Numerical { scene_id: ds.scene_id.clone(), step: step as usize, msg };
    for iter in 0..=cfg.iterations {
        if points.get(next_point) == Some(&iter) {
            next_point += 1;
            let mut row = evaluate(&cloud, &views, &cfg.render, cfg.psnr_cap)?;
            row.iter = iter;
            row.wall_ms = wall_ms;
            rows.push(row);
            if let Some(dir) = snapshot_dir.filter(|_| cfg.snapshots) {
                save_snapshots(&cloud, ds, &views, cfg, iter, dir)?;
            }
        }
        if iter == cfg.iterations {
            break;
        }
        let clock = Instant::now();
        let ids = views.pick_context(policy, count, &mut rng);
        let (loss, grads) = inner_gradient(&cloud, &views, &ids, &cfg.render)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(abort(iter, "non-finite inner loss".into()));
        }
        let before = cloud.clone();
        rule.step(&mut cloud, &grads).map_err(|e| match e {
            Error::NonFiniteGaussian { index } => abort(iter + 1, format!("gaussian {index} became non-finite")),
            other => other,
        })?;
        if let Some(index) = cloud.first_non_finite() {
            return Err(abort(iter + 1, format!("gaussian {index} became non-finite")));
        }
        wall_ms += clock.elapsed().as_secs_f64() * 1e3;
        update_norms.push(mean_row_norm(&before, &cloud));
    }
    Ok(RunOutcome { scene_id: ds.scene_id.clone(), rows, update_norms, final_cloud: cloud })
}

fn mean_row_norm(a: &GaussianCloud, b: &GaussianCloud) -> f64 {
    let rows = a.as_matrix().chunks_exact(PARAM_COUNT).zip(b.as_matrix().chunks_exact(PARAM_COUNT));
    let total: f64 = rows
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(p, q)| {
                    let d = (*p - *q) as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / a.len().max(1) as f64
}

fn save_snapshots(
    cloud: &GaussianCloud,
    ds: &SceneDataset,
    views: &SceneViews<f32>,
    cfg: &RunConfig,
    iter: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (view, (cam, _)) in ds.target_views.iter().zip(&views.target).take(cfg.snapshot_views) {
        let img = render(cloud, cam, &cfg.render)?.rgb;
        img.save(&dir.join(format!("{}_{iter:06}.png", view.name)), ImageFormat::Png)?;
    }
    Ok(())
}

pub fn write_rows(path: &Path, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::OptimizerChoice;
    use crate::scene::{generate_synthetic_scene, SceneSpec};

    fn scene(seed: u64) -> SceneDataset {
        let spec =
            SceneSpec { n_gaussians: 10, n_context: 5, n_target: 2, image_size: (16, 16), ..SceneSpec::default() };
        generate_synthetic_scene(seed, &spec).unwrap()
    }

    #[test]
    fn zero_iterations_emit_only_the_initial_row() {
        let ds = scene(1);
        let out = optimize_scene(&ds, &RunConfig::new(OptimizerChoice::Sgd, 0), None, None).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].iter, 0);
        assert_eq!(out.rows[0].wall_ms, 0.0);
        assert!(out.update_norms.is_empty());
        assert_eq!(out.final_cloud, ds.initial_cloud);
    }

    #[test]
    fn adam_improves_context_psnr_and_reruns_bit_for_bit() {
        let ds = scene(2);
        let mut cfg = RunConfig::new(OptimizerChoice::Adam3dgsStar, 20);
        cfg.views = ViewsPolicy::Fps(3);
        let a = optimize_scene(&ds, &cfg, None, None).unwrap();
        let b = optimize_scene(&ds, &cfg, None, None).unwrap();
        let iters: Vec<u64> = a.rows.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 1, 2, 4, 10, 20]);
        assert!(a.rows.last().unwrap().psnr_context > a.rows[0].psnr_context);
        assert_eq!(a.final_cloud, b.final_cloud);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.psnr_context, x.psnr_target, x.ssim_target), (y.psnr_context, y.psnr_target, y.ssim_target));
        }
        assert_eq!(a.update_norms.len(), 20);
    }

    #[test]
    fn identical_scene_hits_the_cap() {
        let spec = SceneSpec {
            n_gaussians: 4,
            n_context: 2,
            n_target: 1,
            image_size: (8, 8),
            perturbation: 0.0,
            quantize_images: false,
            ..SceneSpec::default()
        };
        let ds = generate_synthetic_scene(3, &spec).unwrap();
        let views = SceneViews::new(&ds, 1);
        let row = evaluate(&ds.initial_cloud, &views, &RenderOptions::default(), 99.0).unwrap();
        assert_eq!(row.psnr_target, 99.0);
        assert!((row.ssim_context - 1.0).abs() < 1e-6);
    }

    #[test]
    fn snapshots_and_csv() {
        let ds = scene(4);
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::new(OptimizerChoice::Sgd, 2);
        cfg.snapshots = true;
        let out = optimize_scene(&ds, &cfg, None, Some(dir.path())).unwrap();
        let name = &ds.target_views[0].name;
        for it in [0, 1, 2] {
            assert!(dir.path().join(format!("{name}_{it:06}.png")).exists());
        }
        let csv = dir.path().join("m.csv");
        write_rows(&csv, &out.rows).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("iter,wall_ms,psnr_context,psnr_target,ssim_context,ssim_target\n"));
        assert_eq!(read_rows(&csv).unwrap(), out.rows);
    }

    #[test]
    fn swap_with_itself_is_the_plain_run() {
        let ds = scene(5);
        let cfg = RunConfig::new(OptimizerChoice::Adam3dgs, 4);
        let plain = optimize_scene(&ds, &cfg, None, None).unwrap();
        let swapped = swap_study(&ds, ParamGroup::Sh0, &cfg, &cfg, None).unwrap();
        assert_eq!(plain.final_cloud, swapped.final_cloud);
    }

    #[test]
    fn non_finite_update_aborts_with_scene_and_step() {
        struct Poison;
        impl UpdateRule for Poison {
            fn step(&mut self, cloud: &mut GaussianCloud, _: &crate::render::GradientBatch) -> Result<()> {
                cloud.as_matrix_mut()[3] = f32::NAN;
                Ok(())
            }
        }
        let ds = scene(6);
        let cfg = RunConfig::new(OptimizerChoice::Sgd, 5);
        match optimize_with_rule(&ds, &cfg, &mut Poison, None) {
            Err(Error::Numerical { scene_id, step, .. }) => {
                assert_eq!(scene_id, ds.scene_id);
                assert_eq!(step, 1);
            }
            other => panic!("expected a numerical abort, got {:?}", other.map(|o| o.rows.len())),
        }
    }
}
