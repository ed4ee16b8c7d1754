use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::plot::{line_chart, Series};
use super::rules::LoadedModel;
use super::run::{csv_err, optimize_scene, EvalRow};
use super::CompareConfig;
use crate::scene::SceneDataset;
use crate::{Error, Result};

/// Mean metrics of one method over a scene set.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodCurve {
    pub label: String,
    pub points: Vec<EvalRow>,
}

/// Pointwise mean of per-scene curves that share evaluation iterations.
pub fn mean_curve(runs: &[Vec<EvalRow>]) -> Result<Vec<EvalRow>> {
    let first = runs.first().ok_or_else(|| Error::config("no runs to average"))?;
    if runs.iter().any(|r| r.len() != first.len()) {
        return Err(Error::config("runs disagree on evaluation points"));
    }
    let n = runs.len() as f64;
    Ok((0..first.len())
        .map(|i| {
            let mut m = EvalRow { iter: first[i].iter, ..EvalRow::default() };
            for r in runs {
                m.wall_ms += r[i].wall_ms / n;
                m.psnr_context += r[i].psnr_context / n;
                m.psnr_target += r[i].psnr_target / n;
                m.ssim_context += r[i].ssim_context / n;
                m.ssim_target += r[i].ssim_target / n;
            }
            m
        })
        .collect())
}

/// First `x` at which the piecewise-linear curve through `(xs, ys)` reaches
/// `level`, or `None` if it never does.
pub fn crossing(xs: &[f64], ys: &[f64], level: f64) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let i = ys.iter().position(|&y| y >= level)?;
    if i == 0 {
        return Some(xs[0]);
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    Some(x0 + (level - y0) / (y1 - y0) * (x1 - x0))
}

/// Iterations and time a method needs to reach a fraction of the reference's
/// target-PSNR gain; `None` marks "never reached".
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdRow {
    pub method: String,
    pub fraction: f64,
    pub psnr_level: f64,
    pub iteration: Option<f64>,
    pub wall_ms: Option<f64>,
}

/// The gain is the reference's best mean target PSNR minus its initial one.
pub fn threshold_table(curves: &[MethodCurve], reference: &str, fractions: &[f64]) -> Result<Vec<ThresholdRow>> {
    let r = curves
        .iter()
        .find(|c| c.label == reference)
        .ok_or_else(|| Error::config(format!("reference method {reference:?} has no curve")))?;
    let init = r.points[0].psnr_target;
    let best = r.points.iter().map(|p| p.psnr_target).fold(f64::NEG_INFINITY, f64::max);
    let gain = best - init;
    let mut rows = Vec::new();
    for c in curves {
        let iters: Vec<f64> = c.points.iter().map(|p| p.iter as f64).collect();
        let times: Vec<f64> = c.points.iter().map(|p| p.wall_ms).collect();
        let ys: Vec<f64> = c.points.iter().map(|p| p.psnr_target).collect();
        for &f in fractions {
            let level = init + f * gain;
            rows.push(ThresholdRow {
                method: c.label.clone(),
                fraction: f,
                psnr_level: level,
                iteration: crossing(&iters, &ys, level),
                wall_ms: crossing(&times, &ys, level),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub curves: Vec<MethodCurve>,
    pub thresholds: Vec<ThresholdRow>,
    /// `per_scene[s][m]`: rows of method `m` on scene `s`.
    pub per_scene: Vec<Vec<Vec<EvalRow>>>,
}

/// Runs every method on every scene, scenes in parallel on `threads` workers.
pub fn compare(scenes: &[SceneDataset], cfg: &CompareConfig, threads: usize) -> Result<CompareReport> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::config("compare needs at least one scene"));
    }
    let models: Vec<Option<Arc<LoadedModel>>> = cfg
        .methods
        .iter()
        .map(|m| m.run.model.as_deref().map(LoadedModel::load).transpose().map(|o| o.map(Arc::new)))
        .collect::<Result<_>>()?;
    let run_scene = |ds: &SceneDataset| -> Result<Vec<Vec<EvalRow>>> {
        cfg.methods
            .iter()
            .zip(&models)
            .map(|(m, model)| optimize_scene(ds, &m.run, model.as_deref(), None).map(|o| o.rows))
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let per_scene: Vec<Vec<Vec<EvalRow>>> = pool.install(|| scenes.par_iter().map(run_scene).collect::<Result<_>>())?;
    let curves = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(m, spec)| {
            let runs: Vec<Vec<EvalRow>> = per_scene.iter().map(|s| s[m].clone()).collect();
            Ok(MethodCurve { label: spec.label.clone(), points: mean_curve(&runs)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let thresholds = threshold_table(&curves, &cfg.reference, &cfg.thresholds)?;
    Ok(CompareReport { curves, thresholds, per_scene })
}

/// Marker written for thresholds a method never reaches.
pub const NEVER: &str = "never";

/// Writes `curves.csv`, `thresholds.csv` and `psnr_target.png` into `dir`.
pub fn write_report(report: &CompareReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("curves.csv")).map_err(csv_err)?;
    w.write_record(["method", "iter", "wall_ms", "psnr_context", "psnr_target", "ssim_context", "ssim_target"])
        .map_err(csv_err)?;
    for c in &report.curves {
        for p in &c.points {
            w.write_record([
                c.label.clone(),
                p.iter.to_string(),
                p.wall_ms.to_string(),
                p.psnr_context.to_string(),
                p.psnr_target.to_string(),
                p.ssim_context.to_string(),
                p.ssim_target.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let opt = |v: Option<f64>| v.map_or_else(|| NEVER.to_string(), |x| format!("{x:.3}"));
    let mut w = csv::Writer::from_path(dir.join("thresholds.csv")).map_err(csv_err)?;
    w.write_record(["method", "percent", "psnr_level", "iteration", "wall_ms"]).map_err(csv_err)?;
    for t in &report.thresholds {
        w.write_record([
            t.method.clone(),
            format!("{:.0}", 100.0 * t.fraction),
            format!("{:.4}", t.psnr_level),
            opt(t.iteration),
            opt(t.wall_ms),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let series: Vec<Series> = report
        .curves
        .iter()
        .map(|c| Series {
            label: c.label.clone(),
            points: c.points.iter().map(|p| ((1.0 + p.iter as f64).log10(), p.psnr_target)).collect(),
        })
        .collect();
    line_chart(&series, 800, 500)?.save(dir.join("psnr_target.png")).map_err(|e| Error::Image(e.to_string()))
}
