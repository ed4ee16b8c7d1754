//! Acceptance checks, one per criterion, each printing a PASS/FAIL line.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! console and a failing criterion does not hide the ones after it. Pass a
//! criterion number to run only that one.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splatopt::autodiff::{Tape, Tensor2};
use splatopt::harness::{optimize_scene, LoadedModel, OptimizerChoice, RunConfig};
use splatopt::image::Image;
use splatopt::knn::build_knn;
use splatopt::knn::NeighborTable;
use splatopt::loss::{
    d_ssim, d_ssim_grad, inner_loss, l1, l1_grad, low_visibility_loss, meta_loss, render_loss, ssim, stability_loss,
    stability_loss_against, DSsim, LossReport, Perceptual, C1, INNER_DSSIM_WEIGHT, INNER_L1_WEIGHT,
};
use splatopt::meta::{
    inner_rollout, meta_gradient, replay_meta_loss, simulate_buffer, InnerState, MetaConfig, RolloutMode, SceneViews,
    Trainer,
};
use splatopt::model::{
    assemble_input, init_latents, init_model, l2s_step, neighbors_for, point_transformer_forward, state_scale_forward,
    update_head_forward, L2SConfig,
};
use splatopt::optim::{
    adam_normalize, adam_step, cosine_lr, time_encoding, AdamState, ParamGroupConfig, COSINE_OFFSET,
};
use splatopt::render::sh::SH_C0;
use splatopt::render::{render, render_backward, render_naive, GradientBatch, RenderOptions};
use splatopt::scene::{
    generate_synthetic_scene, logit, Camera, Gaussian, GaussianCloud, SceneDataset, SceneSpec, PARAM_COUNT,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "renderer gradients vs central differences", renderer_gradients),
        (2, "tiled renderer equals naive loop", tiled_equals_naive),
        (3, "adam against hand recurrence", adam_oracle),
        (4, "loss examples and gradients", loss_suite),
        (5, "checkpoint buffer visit distribution", buffer_distribution),
        (6, "kd-tree knn equals brute force", knn_oracle),
        (7, "model output structure", model_structure),
        (8, "end-to-end meta-gradient", meta_gradient_fd),
        (9, "desk-scale training trend", desk_trend),
        (10, "lo-baseline contrast", lo_baseline_contrast),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = Vec::new();
    for (n, name, check) in criteria {
        if only.is_some_and(|k| k != n) {
            continue;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {n:>2} {name} ({:.1}s): {}", t.elapsed().as_secs_f64(), v.detail);
        if !v.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- rendering

fn quat_to_rot(q: [f64; 4]) -> [[f64; 3]; 3] {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    q.map(|v| v / n)
}

/// Broad, semi-transparent Gaussians in front of a random 16×16 camera, far
/// from every cutoff in the compositor.
fn micro_scene(seed: u64, g: usize) -> (GaussianCloud<f64>, Camera<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = 20.0;
    let rot = quat_to_rot(random_quat(&mut rng));
    let center: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let cam = Camera { fx: f, fy: f, skew: 0.0, cx: 8.0, cy: 8.0, rotation: rot, center, width: 16, height: 16 };
    let gaussians: Vec<Gaussian<f64>> = (0..g)
        .map(|_| {
            let depth = rng.random_range(3.0..5.0);
            let (u, v) = (rng.random_range(5.0..11.0), rng.random_range(5.0..11.0));
            let xc = [(u - 8.0) * depth / f, (v - 8.0) * depth / f, depth];
            let mean = std::array::from_fn(|i| (0..3).map(|k| rot[k][i] * xc[k]).sum::<f64>() + center[i]);
            let s = rng.random_range(7.0..10.0) * depth / f;
            let mut sh = [[0.0; 3]; 16];
            for (k, row) in sh.iter_mut().enumerate() {
                for c in row.iter_mut() {
                    *c = if k == 0 {
                        (rng.random_range(0.25..0.75) - 0.5) / SH_C0
                    } else {
                        rng.random_range(-0.03..0.03)
                    };
                }
            }
            Gaussian {
                mean,
                quaternion: random_quat(&mut rng).map(|q| q * rng.random_range(0.7..1.4)),
                log_scale: std::array::from_fn(|_| (s * rng.random_range(0.8..1.25)).ln()),
                opacity_logit: logit(rng.random_range(0.2..0.75)),
                sh,
            }
        })
        .collect();
    (GaussianCloud::from_gaussians(&gaussians).unwrap(), cam)
}

fn dot(a: &Image<f64>, b: &Image<f64>) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

fn renderer_gradients() -> Verdict {
    let start = Instant::now();
    let opts = RenderOptions::default();
    let h = 1e-4;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..24u64 {
        let g = 1 + seed as usize % 5;
        let (cloud, cam) = micro_scene(1000 + seed, g);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let up = Image::from_fn(16, 16, |_, _, _| rng.random_range(-1.0..1.0));
        let analytic = render_backward(&cloud, &cam, &up, &opts).unwrap();
        for j in 0..g * PARAM_COUNT {
            let eval = |d: f64| {
                let mut c = cloud.clone();
                c.as_matrix_mut()[j] += d;
                dot(&up, &render(&c, &cam, &opts).unwrap().rgb)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let a = analytic.grads[j];
            let err = (a - fd).abs();
            if a.abs() >= 1e-4 {
                worst = worst.max(err / a.abs());
            }
            if err > (1e-3 * a.abs()).max(1e-7) {
                failures.push(format!("scene {seed} entry {j}: {a} vs {fd}"));
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("24 scenes, {checked} entries, worst rel {worst:.2e}, {secs:.1}s");
    match failures.first() {
        Some(f) => verdict(false, format!("{detail}; {} mismatches, first {f}", failures.len())),
        None => verdict(secs < 120.0, detail),
    }
}

fn tiled_equals_naive() -> Verdict {
    let mut renders = 0;
    for s in 0..50u64 {
        let spec = SceneSpec {
            n_gaussians: 10 + (37 * s as usize) % 190,
            n_context: 2,
            n_target: 1,
            image_size: (16 + (s as usize % 5) * 9, 12 + (s as usize % 7) * 6),
            ..SceneSpec::default()
        };
        let ds = generate_synthetic_scene(500 + s, &spec).unwrap();
        let opts = RenderOptions {
            tile_size: [16, 8, 5, 32, 1][s as usize % 5],
            background: [0.1 * (s % 3) as f32, 0.0, 0.2],
            ..RenderOptions::default()
        };
        for v in ds.context_views.iter().chain(&ds.target_views) {
            let cam = v.camera::<f32>();
            let a = render(&ds.initial_cloud, &cam, &opts).unwrap();
            let b = render_naive(&ds.initial_cloud, &cam, &opts).unwrap();
            let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            if bits(&a.rgb.data) != bits(&b.rgb.data) || bits(&a.alpha) != bits(&b.alpha) {
                return verdict(false, format!("scene {s} view {} differs", v.name));
            }
            renders += 1;
        }
    }
    verdict(true, format!("50 scenes, {renders} views bit-identical"))
}

// ---------------------------------------------------------------- adam

/// Learning rate of column `c` at 0-based step `t`, written out by hand.
fn hand_lr(c: usize, t: u64, star: bool) -> f64 {
    let k = if star { 5.0 } else { 1.0 };
    match c {
        0..=2 if star => 5.0 * 1.6e-4,
        0..=2 => (1.6e-4f64.ln() * (1.0 - t as f64 / 30_000.0) + 1e-5f64.ln() * (t as f64 / 30_000.0)).exp(),
        3..=6 => k * 1e-3,
        7..=9 => k * 5e-3,
        10 => k * 5e-2,
        11..=13 => k * 2.5e-3,
        _ => k * 1.25e-4,
    }
}

fn adam_oracle() -> Verdict {
    let g = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base: Vec<f64> = (0..g * PARAM_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
    let init: Vec<f64> = (0..g * PARAM_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut worst = 0.0f64;
    for star in [false, true] {
        let cfg = if star { ParamGroupConfig::gs3d_star() } else { ParamGroupConfig::gs3d() };
        let b1 = if star { 0.99 } else { 0.9 };
        let (b2, eps) = (0.999f64, 1e-8);
        for alternating in [false, true] {
            let grad_at = |t: u64| -> Vec<f64> {
                let s = if alternating && t % 2 == 1 { -1.0 } else { 1.0 };
                base.iter().map(|v| s * v).collect()
            };
            let mut cloud = GaussianCloud::from_matrix(init.clone()).unwrap();
            let mut state = AdamState::zeros(g);
            let mut theta = init.clone();
            let (mut m, mut v) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
            for t in 0..3u64 {
                let gr = grad_at(t);
                adam_step(&mut cloud, &GradientBatch { grads: gr.clone() }, &mut state, &cfg).unwrap();
                let n = (t + 1) as i32;
                for i in 0..theta.len() {
                    m[i] = b1 * m[i] + (1.0 - b1) * gr[i];
                    v[i] = b2 * v[i] + (1.0 - b2) * gr[i] * gr[i];
                    let mh = m[i] / (1.0 - b1.powi(n));
                    let vh = v[i] / (1.0 - b2.powi(n));
                    theta[i] -= hand_lr(i % PARAM_COUNT, t, star) * mh / (vh.sqrt() + eps);
                }
                for (a, b) in cloud.as_matrix().iter().zip(&theta) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    if worst > 1e-7 {
        return verdict(false, format!("max deviation from hand recurrence {worst:.2e}"));
    }

    // lr · normalized gradient is the displacement, bit for bit
    fn exact<T: splatopt::Real>(seed: u64) -> bool {
        let g = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ParamGroupConfig::gs3d();
        let mut cloud = GaussianCloud::<T>::from_matrix(
            (0..g * PARAM_COUNT).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect(),
        )
        .unwrap();
        let (mut a, mut b) = (AdamState::<T>::zeros(g), AdamState::<T>::zeros(g));
        (0..5).all(|_| {
            let grads =
                GradientBatch { grads: (0..g * PARAM_COUNT).map(|_| T::lit(rng.random_range(-2.0..2.0))).collect() };
            let lrs = cfg.column_lrs(a.step);
            let disp = adam_step(&mut cloud, &grads, &mut a, &cfg).unwrap();
            let n = adam_normalize(&grads, &mut b, cfg.hyper).unwrap();
            disp.iter().zip(&n).enumerate().all(|(i, (d, n))| {
                (T::lit(lrs[i % PARAM_COUNT]) * *n).to_f64_lossy().to_bits() == d.to_f64_lossy().to_bits()
            })
        })
    }
    let ok = (0..4).all(|s| exact::<f32>(s) && exact::<f64>(s));
    verdict(
        ok,
        format!("max deviation {worst:.2e} over 3dgs and 3dgs* with constant and alternating gradients; lr·normalize exact: {ok}"),
    )
}

// ---------------------------------------------------------------- losses

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f64, hi: f64) -> Image<f64> {
    Image::from_fn(w, h, |_, _, _| rng.random_range(lo..hi))
}

/// Largest relative error of `grad` against central differences of `f`.
fn fd_check(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut p = x.to_vec();
        p[i] = x[i] + h;
        let up = f(&p);
        p[i] = x[i] - h;
        let fd = (up - f(&p)) / (2.0 * h);
        let err = (fd - grad[i]).abs();
        worst = worst.max(if err <= 1e-9 { 0.0 } else { err / grad[i].abs().max(fd.abs()) });
    }
    worst
}

fn with_data(img: &Image<f64>, data: &[f64]) -> Image<f64> {
    Image { width: img.width, height: img.height, data: data.to_vec() }
}

struct Fixed(f64);

impl Perceptual<f64> for Fixed {
    fn name(&self) -> &'static str {
        "fixed"
    }
    fn eval(&self, _: &Image<f64>, rendered: &Image<f64>) -> (f64, Image<f64>) {
        (self.0, Image::zeros(rendered.width, rendered.height))
    }
}

fn loss_suite() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut fails: Vec<String> = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            fails.push(what.to_string());
        }
    };
    let a = random_image(&mut rng, 12, 12, 0.0, 1.0);
    let b = random_image(&mut rng, 12, 12, 0.0, 1.0);
    let mut fd_worst = 0.0f64;

    // l1
    expect(l1(&a, &a) == 0.0, "l1 identical");
    expect(l1(&Image::<f64>::zeros(8, 8), &Image::filled(8, 8, [1.0; 3])) == 1.0, "l1 zeros vs ones");
    let a8 = random_image(&mut rng, 8, 8, 0.0, 1.0);
    let b8 = random_image(&mut rng, 8, 8, 0.0, 1.0);
    let (_, g) = l1_grad(&a8, &b8);
    fd_worst = fd_worst.max(fd_check(|x| l1(&a8, &with_data(&b8, x)), &b8.data, &g.data));

    // d-ssim
    expect(d_ssim(&a, &a).abs() < 1e-12, "d-ssim identical");
    let low = random_image(&mut rng, 12, 12, 0.1, 0.12);
    let neg = Image { data: low.data.iter().map(|v| 1.0 - v).collect(), ..low.clone() };
    let dn = d_ssim(&low, &neg);
    expect(dn > 0.0 && dn <= 0.5, "d-ssim vs negative in (0, 0.5]");
    let (_, g) = d_ssim_grad(&low, &neg);
    fd_worst = fd_worst.max(fd_check(|x| d_ssim(&low, &with_data(&neg, x)), &neg.data, &g.data));
    let (_, g) = d_ssim_grad(&a, &b);
    fd_worst = fd_worst.max(fd_check(|x| d_ssim(&a, &with_data(&b, x)), &b.data, &g.data));
    for (ca, cb) in [(0.2, 0.7), (0.5, 0.5), (0.0, 1.0), (0.9, 0.1)] {
        let s = ssim(&Image::filled(11, 11, [ca; 3]), &Image::filled(11, 11, [cb; 3]));
        // zero variance: the contrast-structure factor is C2/C2
        let hand = (2.0 * ca * cb + C1) / (ca * ca + cb * cb + C1);
        expect((s - hand).abs() < 1e-12, "ssim of constants");
    }

    // inner loss
    expect(inner_loss(&a, &a).value.abs() < 1e-12, "inner identical");
    let weighted = LossReport::from_terms([("l1", INNER_L1_WEIGHT, 1.0), ("d_ssim", INNER_DSSIM_WEIGHT, 0.5)]);
    expect((weighted.value - 0.9).abs() < 1e-12, "inner weights");
    let r = inner_loss(&a, &b);
    expect((r.value - (0.8 * l1(&a, &b) + 0.2 * d_ssim(&a, &b))).abs() < 1e-12, "inner hand sum");
    let (_, g) = splatopt::loss::inner_loss_grad(&a, &b);
    fd_worst = fd_worst.max(fd_check(|x| inner_loss(&a, &with_data(&b, x)).value, &b.data, &g.data));

    // render loss
    let zero = Image::<f64>::zeros(6, 6);
    let (fa, fb) = (Image::filled(6, 6, [0.3; 3]), Image::filled(6, 6, [0.8; 3]));
    let (v1, _) = render_loss(&[vec![(&a, &b)]], 0.9, &DSsim);
    expect((v1 - (l1(&a, &b) + 0.5 * d_ssim(&a, &b))).abs() < 1e-12, "render tau=1");
    let (v2, _) = render_loss(&[vec![(&zero, &fa)], vec![(&zero, &fb)]], 0.9, &Fixed(0.0));
    expect((v2 - (0.9 * 0.3 + 0.8)).abs() < 1e-12, "render tau=2 weights");
    let (v3, _) = render_loss(&[vec![(&zero, &fa)], vec![(&zero, &fb)]], 0.9, &Fixed(0.4));
    expect((v3 - (0.9 * (0.3 + 0.2) + (0.8 + 0.2))).abs() < 1e-12, "render perceptual path");
    let (v4, _) = render_loss(&[vec![(&zero, &fa)], vec![(&zero, &fb)]], 1.0, &Fixed(0.0));
    expect((v4 - 1.1).abs() < 1e-12, "render gamma=1");
    let c = random_image(&mut rng, 12, 12, 0.0, 1.0);
    let d = random_image(&mut rng, 12, 12, 0.0, 1.0);
    let (_, g) = render_loss(&[vec![(&a, &b), (&c, &d)], vec![(&a, &d)]], 0.9, &DSsim);
    fd_worst = fd_worst.max(fd_check(
        |x| render_loss(&[vec![(&a, &b), (&c, &d)], vec![(&a, &with_data(&d, x))]], 0.9, &DSsim).0,
        &d.data,
        &g[1][0].data,
    ));
    fd_worst = fd_worst.max(fd_check(
        |x| render_loss(&[vec![(&a, &b), (&c, &with_data(&d, x))], vec![(&a, &d)]], 0.9, &DSsim).0,
        &d.data,
        &g[0][1].data,
    ));

    // low visibility
    let eps = 1e-8f64;
    expect(low_visibility_loss(&[0.5, -0.2], &[1.0, -1.0], &[2.0, -3.0], eps).0 == 0.0, "lvs agreeing");
    expect((low_visibility_loss(&[0.3], &[0.0], &[0.0], eps).0 - 0.3).abs() < 1e-15, "lvs vanishing");
    expect((low_visibility_loss(&[-0.4], &[1.0], &[2.0], eps).0 - 0.4).abs() < 1e-15, "lvs sign disagreement");
    let n = 59 * 3;
    let u: Vec<f64> =
        (0..n).map(|_| rng.random_range(0.01..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
    let raw: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-1.0..1.0) }).collect();
    let adam: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (lv, g) = low_visibility_loss(&u, &raw, &adam, eps);
    expect(lv >= 0.0, "lvs non-negative");
    fd_worst = fd_worst.max(fd_check(|x| low_visibility_loss(x, &raw, &adam, eps).0, &u, &g));

    // stability
    expect(stability_loss(&[0.9f64, 0.7, 0.4]).0 == 0.0, "stab decreasing");
    expect((stability_loss(&[0.5f64, 0.7, 0.6]).0 - 0.2).abs() < 1e-12, "stab example");
    expect(stability_loss(&[0.5f64]).0 == 0.0, "stab tau=1");
    let e: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..0.9)).collect();
    let (_, g) = stability_loss(&e);
    fd_worst = fd_worst.max(fd_check(|x| stability_loss_against(x, &e).0, &e, &g));

    // meta loss
    expect(meta_loss(0.0, 0.0, 0.0).value == 0.0, "meta zero");
    expect(meta_loss(0.25, 0.5, 0.125).value == 0.875, "meta sum");
    let mut cfg = MetaConfig::desk();
    cfg.model.warm_start = false;
    cfg.target_views = 2;
    cfg.context_batch = 3;
    let ds = small_scene(77, 6);
    let views = SceneViews::<f64>::new(&ds, cfg.target_views);
    let params = init_model::<f64>(&cfg.model, 78).unwrap();
    let mut state = fresh(&views, &cfg, 79);
    let roll =
        inner_rollout(&views, &mut state, &params, &cfg, 3, RolloutMode::Train, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
    let (report, _) = meta_gradient(&roll, &views, &params, &cfg).unwrap();
    let (_, errors) = replay_meta_loss(&views, &roll.records, &roll.initial_latents, &params, &cfg, None).unwrap();
    let parts = report.term("render") + report.term("lvs") + report.term("stab");
    expect((report.value - parts).abs() < 1e-12, "meta pipeline sum");
    expect((report.term("stab") - stability_loss(&errors).0).abs() < 1e-12, "meta stability component");

    expect(fd_worst < 1e-3, "finite differences");
    if fails.is_empty() {
        verdict(true, format!("all example rows hold; worst gradient rel error {fd_worst:.2e}"))
    } else {
        verdict(false, format!("failed: {}; worst gradient rel error {fd_worst:.2e}", fails.join(", ")))
    }
}

// ---------------------------------------------------------------- buffer

fn buffer_distribution() -> Verdict {
    let sim = simulate_buffer(&MetaConfig::paper(), 10_000, &mut ChaCha8Rng::seed_from_u64(0));
    let visits: Vec<u64> = (1..=6).map(|s| sim.visits_at(s)).collect();
    let in_band = visits.iter().all(|&v| (800..=1200).contains(&v));
    let detail = format!("visits at inner steps 1-6 {visits:?} (band 800-1200), max inner step {}", sim.max_inner_step);
    verdict(in_band && sim.max_inner_step > 100, detail)
}

// ---------------------------------------------------------------- knn

fn knn_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rows = 0;
    for set in 0..100 {
        let k = [1, 4, 16][set % 3];
        let g = rng.random_range(k + 1..=500);
        // every fourth set sits on a coarse lattice, full of distance ties
        let lattice = set % 4 == 0;
        let points: Vec<[f32; 3]> = (0..g)
            .map(|_| {
                std::array::from_fn(|_| {
                    if lattice {
                        rng.random_range(0..6) as f32 * 0.5
                    } else {
                        rng.random_range(-2.0f32..2.0)
                    }
                })
            })
            .collect();
        let table = build_knn(&points, k).unwrap();
        for (i, p) in points.iter().enumerate() {
            let mut cands: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, q)| ((0..3).map(|a| (p[a] as f64 - q[a] as f64).powi(2)).sum(), j))
                .collect();
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let want: Vec<usize> = cands[..k].iter().map(|c| c.1).collect();
            if table.row(i) != want.as_slice() {
                return verdict(false, format!("set {set} (G={g}, k={k}) row {i}: {:?} vs {want:?}", table.row(i)));
            }
            rows += 1;
        }
    }
    verdict(true, format!("100 point sets, {rows} rows identical"))
}

// ---------------------------------------------------------------- model

fn random_case(cfg: &L2SConfig, g: usize, seed: u64) -> (GaussianCloud<f64>, Vec<f64>, Tensor2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud =
        GaussianCloud::from_matrix((0..g * PARAM_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let grads = (0..g * PARAM_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect();
    (cloud, grads, init_latents(g, cfg.d_state, seed))
}

fn model_structure() -> Verdict {
    let cfg = L2SConfig::desk();
    let mut worst_norm = 0.0f64;
    for trial in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
        let g = rng.random_range(1..40);
        let gain = 10f64.powf(rng.random_range(-2.0..1.3));
        let (cloud, grads, states) = random_case(&cfg, g, trial);
        let mut params = init_model::<f64>(&cfg, trial).unwrap();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        for n in names {
            for v in &mut params.get_mut(&n).unwrap().data {
                *v = gain * rng.random_range(-1.0..1.0);
            }
        }
        let nb = neighbors_for(&cloud, &cfg).unwrap();
        let (_, _, pred) = l2s_step(&cloud, &grads, &states, &params, &cfg, &nb, trial).unwrap();
        for i in 0..g {
            let n: f64 = pred.direction.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            worst_norm = worst_norm.max((n - 1.0).abs());
            if pred.magnitude[i] < 0.0 || pred.state_scale[i] < 0.0 {
                return verdict(false, format!("trial {trial}: negative magnitude or state scale"));
            }
        }
    }
    if worst_norm > 1e-5 {
        return verdict(false, format!("direction norm off by {worst_norm:.2e}"));
    }

    // permutation equivariance
    let g = 16;
    let (cloud, grads, states) = random_case(&cfg, g, 7);
    let params = init_model::<f64>(&cfg, 7).unwrap();
    let nb = neighbors_for(&cloud, &cfg).unwrap();
    let mut perm: Vec<usize> = (0..g).collect();
    perm.sort_by_key(|&i| (i * 7 + 3) % g);
    let mut inv = vec![0; g];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let p_cloud = cloud.select(&perm).unwrap();
    let p_grads: Vec<f64> = perm.iter().flat_map(|&i| grads[i * PARAM_COUNT..(i + 1) * PARAM_COUNT].to_vec()).collect();
    let p_states = Tensor2::from_fn(g, cfg.d_state, |r, c| states.get(perm[r], c));
    let p_nb = NeighborTable {
        k: nb.k,
        indices: perm.iter().flat_map(|&old| nb.row(old).iter().map(|&j| inv[j]).collect::<Vec<_>>()).collect(),
    };
    if p_nb != neighbors_for(&p_cloud, &cfg).unwrap() {
        return verdict(false, "neighbour table is not permutation equivariant");
    }
    let (a_cloud, a_states, a_pred) = l2s_step(&cloud, &grads, &states, &params, &cfg, &nb, 0).unwrap();
    let (b_cloud, b_states, b_pred) = l2s_step(&p_cloud, &p_grads, &p_states, &params, &cfg, &p_nb, 0).unwrap();
    let equivariant = perm.iter().enumerate().all(|(new, &old)| {
        b_cloud.row(new) == a_cloud.row(old)
            && b_states.row(new) == a_states.row(old)
            && b_pred.delta.row(new) == a_pred.delta.row(old)
    });
    if !equivariant {
        return verdict(false, "permuted inputs do not give permuted outputs exactly");
    }

    // detachment
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let s = tape.leaf(states.clone());
    let a = tape.leaf(Tensor2::from_vec(g, PARAM_COUNT, grads.clone()).unwrap());
    let p = tape.leaf(Tensor2::from_vec(g, PARAM_COUNT, cloud.as_matrix().to_vec()).unwrap());
    let x = assemble_input(&mut tape, a, p, s, None).unwrap();
    let next = point_transformer_forward(&mut tape, &pv, &cfg, x, &nb).unwrap();
    let rho = state_scale_forward(&mut tape, &pv, x).unwrap();
    let scaled = tape.scale_rows(next, rho).unwrap();
    let u = update_head_forward(&mut tape, &pv, &cfg, scaled).unwrap();
    let back = tape
        .backward(&[(u.delta, Tensor2::filled(g, PARAM_COUNT, 1.0)), (next, Tensor2::filled(g, cfg.d_state, 1.0))])
        .unwrap();
    let zero = |v| back.get(v).is_none_or(|t: &Tensor2<f64>| t.data.iter().all(|x| *x == 0.0));
    let weights_live = pv.gradients(&params, &back).iter().any(|(_, t)| t.data.iter().any(|v| *v != 0.0));
    let detached = zero(a) && zero(p) && !zero(s) && weights_live;
    verdict(
        detached,
        format!("30 fuzzed models, worst |‖d‖−1| {worst_norm:.1e}; equivariance exact; inputs detached: {detached}"),
    )
}

// ---------------------------------------------------------------- meta-gradient

fn small_scene(seed: u64, g: usize) -> SceneDataset {
    let spec = SceneSpec { n_gaussians: g, n_context: 4, n_target: 2, image_size: (16, 16), ..SceneSpec::default() };
    generate_synthetic_scene(seed, &spec).unwrap()
}

fn fresh(views: &SceneViews<f64>, cfg: &MetaConfig, seed: u64) -> InnerState<f64> {
    let g = views.initial_cloud.len();
    InnerState::new(views.initial_cloud.clone(), init_latents(g, cfg.model.d_state, seed), AdamState::zeros(g), 0)
}

fn meta_gradient_fd() -> Verdict {
    let mut cfg = MetaConfig::desk();
    cfg.model.warm_start = false;
    cfg.context_batch = 3;
    cfg.target_views = 2;
    let views = SceneViews::<f64>::new(&small_scene(31, 3), cfg.target_views);
    let params = init_model::<f64>(&cfg.model, 32).unwrap();
    let mut state = fresh(&views, &cfg, 33);
    let roll =
        inner_rollout(&views, &mut state, &params, &cfg, 2, RolloutMode::Train, &mut ChaCha8Rng::seed_from_u64(34))
            .unwrap();
    let (_, grads) = meta_gradient(&roll, &views, &params, &cfg).unwrap();
    let (_, errors) = replay_meta_loss(&views, &roll.records, &roll.initial_latents, &params, &cfg, None).unwrap();
    let flat = params.flatten();
    let analytic = grads.flatten();
    let live: Vec<usize> = (0..flat.len()).filter(|&i| analytic[i].abs() > 1e-6).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut lines = Vec::new();
    for _ in 0..5 {
        let i = live[rng.random_range(0..live.len())];
        let eval = |x: f64| {
            let mut f = flat.clone();
            f[i] = x;
            let p = params.unflatten(&f).unwrap();
            replay_meta_loss(&views, &roll.records, &roll.initial_latents, &p, &cfg, Some(&errors)).unwrap().0.value
        };
        let fd = (eval(flat[i] + h) - eval(flat[i] - h)) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / analytic[i].abs().max(fd.abs());
        worst = worst.max(rel);
        lines.push(format!("w{i}: {:.3e}/{fd:.3e}", analytic[i]));
    }
    verdict(worst <= 1e-2, format!("worst rel {worst:.2e} ({})", lines.join(", ")))
}

// ---------------------------------------------------------------- desk training

struct Trained {
    _dir: tempfile::TempDir,
    path: PathBuf,
    model: LoadedModel,
    summary: String,
}

static TRAINED: OnceLock<Trained> = OnceLock::new();

fn train_desk() -> Trained {
    let spec = SceneSpec::default();
    let pool: Vec<SceneDataset> = (0..200).map(|s| generate_synthetic_scene(s, &spec).unwrap()).collect();
    let cfg = MetaConfig::desk();
    let t = Instant::now();
    let mut trainer = Trainer::new(cfg.clone(), &pool, 1).unwrap();
    let rows = trainer.train(cfg.meta_iterations as u64, None, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let tail = &rows[rows.len() - 100..];
    let render_tail = tail.iter().map(|r| r.l_render / r.tau as f64).sum::<f64>() / tail.len() as f64;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("desk.l2sm");
    trainer.checkpoint().save(&path).unwrap();
    Trained {
        model: LoadedModel::load(&path).unwrap(),
        path,
        _dir: dir,
        summary: format!("{} meta-iterations in {secs:.0}s, final per-step render loss {render_tail:.4}", rows.len()),
    }
}

fn held_out(n: u64) -> Vec<SceneDataset> {
    (10_000..10_000 + n).map(|s| generate_synthetic_scene(s, &SceneSpec::default()).unwrap()).collect()
}

/// Mean target PSNR at each evaluation point, and mean update norm per step.
fn mean_run(scenes: &[SceneDataset], rc: &RunConfig, model: Option<&LoadedModel>) -> (Vec<(u64, f64)>, Vec<f64>) {
    let mut psnr: Vec<(u64, f64)> = rc.eval_points().into_iter().map(|i| (i, 0.0)).collect();
    let mut norms = vec![0.0; rc.iterations as usize];
    let n = scenes.len() as f64;
    for ds in scenes {
        let out = optimize_scene(ds, rc, model, None).unwrap();
        for (acc, row) in psnr.iter_mut().zip(&out.rows) {
            assert_eq!(acc.0, row.iter);
            acc.1 += row.psnr_target / n;
        }
        for (acc, v) in norms.iter_mut().zip(&out.update_norms) {
            *acc += v / n;
        }
    }
    (psnr, norms)
}

fn at(curve: &[(u64, f64)], iter: u64) -> f64 {
    curve.iter().find(|p| p.0 == iter).unwrap().1
}

fn desk_trend() -> Verdict {
    let trained = TRAINED.get_or_init(train_desk);
    let scenes = held_out(20);
    let mut adam = RunConfig::new(OptimizerChoice::Adam3dgs, 10);
    adam.cadence = (1..=10).collect();
    let (adam_curve, _) = mean_run(&scenes, &adam, None);

    let mut l2s = RunConfig::new(OptimizerChoice::L2s, 500);
    l2s.model = Some(trained.path.clone());
    l2s.cadence = (1..=10).chain((15..=500).step_by(5)).collect();
    let (curve, _) = mean_run(&scenes, &l2s, Some(&trained.model));

    let init = at(&curve, 0);
    let (l2s10, adam10) = (at(&curve, 10), at(&adam_curve, 10));
    let mut running = f64::NEG_INFINITY;
    let mut drop = 0.0f64;
    for &(_, p) in &curve {
        running = running.max(p);
        drop = drop.max(running - p);
    }
    let gain_ok = l2s10 - init >= 1.0;
    let adam_ok = l2s10 >= adam10;
    let stable_ok = drop <= 0.5;
    verdict(
        gain_ok && adam_ok && stable_ok,
        format!(
            "{}; init {init:.2} dB, l2s@10 {l2s10:.2} dB (gain {:.2}, need 1.00), adam@10 {adam10:.2} dB, \
             l2s@500 {:.2} dB, largest drop below running max {drop:.3} dB (limit 0.5)",
            trained.summary,
            l2s10 - init,
            at(&curve, 500),
        ),
    )
}

fn lo_baseline_contrast() -> Verdict {
    // schedule and encoding formulas
    let s = COSINE_OFFSET;
    let t0 = ((s / (1.0 + s)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    let mut formulas = (cosine_lr(0.0, 100.0, s) - t0).abs() < 1e-12 && (t0 - 0.99985).abs() < 1e-5;
    formulas &= cosine_lr(100.0, 100.0, s).abs() < 1e-15;
    let dense: Vec<f64> = (0..=10_000).map(|i| cosine_lr(i as f64 / 100.0, 100.0, s)).collect();
    formulas &= dense.windows(2).all(|w| w[1] <= w[0]);
    let e0 = time_encoding(0.0, 6);
    formulas &= e0.len() == 12 && (0..6).all(|k| e0[2 * k] == 0.0 && e0[2 * k + 1] == 1.0);
    formulas &= (time_encoding(0.5, 6)[0] - 1.0).abs() < 1e-15;
    let p = 0.3;
    let e = time_encoding(p, 6);
    formulas &= (0..6).all(|k| {
        let w = 2f64.powi(k as i32) * std::f64::consts::PI * p;
        (e[2 * k] - w.sin()).abs() < 1e-12 && (e[2 * k + 1] - w.cos()).abs() < 1e-12
    });

    // briefly trained baseline, run with its schedule stretched tenfold
    let trained = TRAINED.get_or_init(train_desk);
    let mut cfg = MetaConfig::preset("lo-desk").unwrap();
    let t_train = cfg.model.horizon;
    cfg.checkpoint_every = 0;
    let spec = SceneSpec::default();
    let pool: Vec<SceneDataset> = (0..50).map(|s| generate_synthetic_scene(s, &spec).unwrap()).collect();
    let mut trainer = Trainer::new(cfg, &pool, 2).unwrap();
    trainer.train(300, None, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let lo_path = dir.path().join("lo.l2sm");
    trainer.checkpoint().save(&lo_path).unwrap();
    let lo_model = LoadedModel::load(&lo_path).unwrap();

    let iters = 10 * t_train as u64;
    let scenes = held_out(5);
    let mut lo = RunConfig::new(OptimizerChoice::LoBaseline, iters);
    lo.model = Some(lo_path);
    lo.horizon = Some(iters as usize);
    let (_, lo_norms) = mean_run(&scenes, &lo, Some(&lo_model));
    let mut l2s = RunConfig::new(OptimizerChoice::L2s, iters);
    l2s.model = Some(trained.path.clone());
    let (_, l2s_norms) = mean_run(&scenes, &l2s, Some(&trained.model));
    let late = |v: &[f64]| v[t_train..].iter().sum::<f64>() / (v.len() - t_train) as f64;
    let (lo_late, l2s_late) = (late(&lo_norms), late(&l2s_norms));
    verdict(
        formulas && lo_late.is_finite() && l2s_late.is_finite(),
        format!(
            "formulas hold: {formulas}; mean update norm for t > {t_train}: lo-baseline {lo_late:.3e}, l2s {l2s_late:.3e}, \
             ratio {:.2}",
            lo_late / l2s_late
        ),
    )
}
