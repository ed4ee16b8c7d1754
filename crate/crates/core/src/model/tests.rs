use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{ModelParameters, Tape, Tensor2};
use crate::knn::NeighborTable;
use crate::scene::{GaussianCloud, PARAM_COUNT};

fn tiny() -> L2SConfig {
    L2SConfig { d_state: 8, n_blocks: 2, attn_dim: 12, mlp_hidden: 16, k: 3, ..L2SConfig::desk() }
}

fn random_cloud(rng: &mut ChaCha8Rng, g: usize) -> GaussianCloud<f64> {
    GaussianCloud::from_matrix((0..g * PARAM_COUNT).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

struct Case {
    cloud: GaussianCloud<f64>,
    grads: Vec<f64>,
    states: Tensor2<f64>,
    params: ModelParameters<f64>,
    neighbors: NeighborTable,
}

fn case(cfg: &L2SConfig, g: usize, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, g);
    let grads = random_vec(&mut rng, g * PARAM_COUNT);
    let states = init_latents(g, cfg.d_state, seed);
    let params = init_model(cfg, seed).unwrap();
    let neighbors = neighbors_for(&cloud, cfg).unwrap();
    Case { cloud, grads, states, params, neighbors }
}

#[test]
fn assembled_columns_keep_their_order() {
    let mut tape = Tape::<f64>::new();
    let g = 2;
    let a = tape.constant(Tensor2::from_fn(g, PARAM_COUNT, |r, c| 1000.0 + (r * 100 + c) as f64));
    let p = tape.constant(Tensor2::from_fn(g, PARAM_COUNT, |r, c| 2000.0 + (r * 100 + c) as f64));
    let s = tape.leaf(Tensor2::from_fn(g, 5, |r, c| 3000.0 + (r * 100 + c) as f64));
    let x = assemble_input(&mut tape, a, p, s, None).unwrap();
    let v = tape.value(x);
    assert_eq!(v.shape(), (2, 123));
    assert_eq!(v.get(1, 0), 1100.0);
    assert_eq!(v.get(1, 58), 1158.0);
    assert_eq!(v.get(1, 59), 2100.0);
    assert_eq!(v.get(0, 118), 3000.0);
    assert_eq!(v.get(1, 122), 3104.0);

    let paper = L2SConfig::paper();
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor2::zeros(3, PARAM_COUNT));
    let p = tape.constant(Tensor2::zeros(3, PARAM_COUNT));
    let s = tape.leaf(Tensor2::zeros(3, paper.d_state));
    let x = assemble_input(&mut tape, a, p, s, None).unwrap();
    assert_eq!(tape.value(x).shape(), (3, 374));
}

#[test]
fn assemble_rejects_empty_and_mismatched() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor2::zeros(0, PARAM_COUNT));
    let s = tape.leaf(Tensor2::zeros(0, 4));
    assert!(matches!(assemble_input(&mut tape, a, a, s, None), Err(crate::Error::EmptyCloud(_))));
    let a = tape.constant(Tensor2::zeros(2, PARAM_COUNT));
    let p = tape.constant(Tensor2::zeros(3, PARAM_COUNT));
    let s = tape.leaf(Tensor2::zeros(2, 4));
    assert!(assemble_input(&mut tape, a, p, s, None).is_err());
}

#[test]
fn single_gaussian_attends_uniformly_to_itself() {
    let cfg = tiny();
    let c = case(&cfg, 1, 3);
    assert_eq!(c.neighbors.row(0), &[0, 0, 0]);
    let (next, states, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    assert!(next.as_matrix().iter().all(|v| v.is_finite()));
    assert!(states.all_finite());
    assert!(pred.delta.all_finite());
}

#[test]
fn step_is_permutation_equivariant() {
    let cfg = tiny();
    let g = 9;
    let c = case(&cfg, g, 5);
    let perm = [4, 7, 0, 8, 2, 1, 6, 3, 5];
    let cloud = c.cloud.select(&perm).unwrap();
    let grads: Vec<f64> = perm.iter().flat_map(|&i| c.grads[i * PARAM_COUNT..(i + 1) * PARAM_COUNT].to_vec()).collect();
    let states = Tensor2::from_fn(g, cfg.d_state, |r, col| c.states.get(perm[r], col));
    let mut inv = [0; 9];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let remapped = NeighborTable {
        k: cfg.k,
        indices: perm
            .iter()
            .flat_map(|&old| c.neighbors.row(old).iter().map(|&j| inv[j]).collect::<Vec<_>>())
            .collect(),
    };
    assert_eq!(remapped, neighbors_for(&cloud, &cfg).unwrap());

    let (a_cloud, a_states, a_pred) =
        l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    let (b_cloud, b_states, b_pred) = l2s_step(&cloud, &grads, &states, &c.params, &cfg, &remapped, 0).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(b_cloud.row(new), a_cloud.row(old));
        assert_eq!(b_states.row(new), a_states.row(old));
        assert_eq!(b_pred.delta.row(new), a_pred.delta.row(old));
        assert_eq!(b_pred.state_scale[new], a_pred.state_scale[old]);
    }
}

#[test]
fn zero_magnitude_column_leaves_cloud_unchanged() {
    let cfg = tiny();
    let mut c = case(&cfg, 6, 8);
    let w = c.params.get_mut("head.l2.w").unwrap();
    for r in 0..w.rows {
        w.set(r, PARAM_COUNT, 0.0);
    }
    c.params.get_mut("head.l2.b").unwrap().set(0, PARAM_COUNT, 0.0);
    let (next, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    assert!(pred.magnitude.iter().all(|m| *m == 0.0));
    assert_eq!(next, c.cloud);
}

#[test]
fn delta_norm_equals_magnitude() {
    let cfg = tiny();
    let c = case(&cfg, 7, 9);
    let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    for i in 0..7 {
        let n: f64 = pred.delta.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - pred.magnitude[i]).abs() < 1e-12 * (1.0 + n));
    }
}

#[test]
fn fresh_model_moves_every_gaussian() {
    let cfg = L2SConfig::desk();
    for seed in 0..5 {
        let c = case(&cfg, 40, seed);
        let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
        assert!(pred.magnitude.iter().all(|m| *m > 0.0), "seed {seed}");
        assert!(pred.state_scale.iter().all(|s| *s > 0.0), "seed {seed}");
    }
}

#[test]
fn unit_raw_direction_is_kept() {
    // a head that outputs a fixed unit vector in the first 59 columns
    let cfg = tiny();
    let mut c = case(&cfg, 4, 10);
    let w = c.params.get_mut("head.l2.w").unwrap();
    w.data.iter_mut().for_each(|v| *v = 0.0);
    let b = c.params.get_mut("head.l2.b").unwrap();
    for col in 0..PARAM_COUNT {
        b.set(0, col, 0.0);
    }
    b.set(0, 3, 0.6);
    b.set(0, 20, -0.8);
    let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    for i in 0..4 {
        assert_eq!(pred.direction.get(i, 3), 0.6);
        assert_eq!(pred.direction.get(i, 20), -0.8);
    }
}

#[test]
fn zero_raw_direction_gives_no_update() {
    let cfg = tiny();
    let mut c = case(&cfg, 3, 12);
    let w = c.params.get_mut("head.l2.w").unwrap();
    for r in 0..w.rows {
        for col in 0..PARAM_COUNT {
            w.set(r, col, 0.0);
        }
    }
    let b = c.params.get_mut("head.l2.b").unwrap();
    for col in 0..PARAM_COUNT {
        b.set(0, col, 0.0);
    }
    let (next, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    assert!(pred.direction.data.iter().all(|v| *v == 0.0));
    assert!(pred.magnitude.iter().all(|v| *v == 0.0));
    assert_eq!(next, c.cloud);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn outputs_respect_their_constraints(seed in any::<u64>(), gain in 0.01f64..20.0, g in 1usize..12) {
        let cfg = tiny();
        let mut c = case(&cfg, g, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let names: Vec<String> = c.params.names().map(str::to_string).collect();
        for n in names {
            for v in &mut c.params.get_mut(&n).unwrap().data {
                *v = gain * rng.random_range(-1.0..1.0);
            }
        }
        let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
        for i in 0..g {
            let n: f64 = pred.direction.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-5 || n == 0.0);
            prop_assert!(pred.magnitude[i] >= 0.0);
            prop_assert!(pred.state_scale[i] >= 0.0);
        }
    }
}

#[test]
fn zero_scale_weights_give_relu_of_bias() {
    let cfg = tiny();
    let mut c = case(&cfg, 3, 2);
    c.params.get_mut("scale.l2.w").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    c.params.get_mut("scale.l2.b").unwrap().set(0, 0, 0.7);
    let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    assert_eq!(pred.state_scale, vec![0.7; 3]);
    c.params.get_mut("scale.l2.b").unwrap().set(0, 0, -0.7);
    let (next, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    assert_eq!(pred.state_scale, vec![0.0; 3]);
    // zero scaled states still give the head's bias path
    assert!(next.as_matrix().iter().all(|v| v.is_finite()));
}

#[test]
fn unit_state_scale_is_identity() {
    let mut tape = Tape::<f64>::new();
    let s = tape.leaf(Tensor2::from_fn(4, 3, |r, c| (r * 3 + c) as f64 - 5.0));
    let one = tape.constant(Tensor2::filled(4, 1, 1.0));
    let scaled = tape.scale_rows(s, one).unwrap();
    assert_eq!(tape.value(scaled), tape.value(s));
}

/// Central differences of `⟨R, f(θ)⟩` for a few leaves of the transformer
/// branch and for the input states.
#[test]
fn transformer_branch_matches_finite_differences() {
    let cfg = tiny();
    let c = case(&cfg, 3, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let readout = Tensor2::from_fn(3, cfg.d_state, |_, _| rng.random_range(-1.0..1.0));
    let eval = |params: &ModelParameters<f64>, states: &Tensor2<f64>| -> f64 {
        let mut tape = Tape::new();
        let pv = params.register(&mut tape);
        let s = tape.leaf(states.clone());
        let a = tape.constant(Tensor2::from_vec(3, PARAM_COUNT, c.grads.clone()).unwrap());
        let p = tape.constant(Tensor2::from_vec(3, PARAM_COUNT, c.cloud.as_matrix().to_vec()).unwrap());
        let x = assemble_input(&mut tape, a, p, s, None).unwrap();
        let out = point_transformer_forward(&mut tape, &pv, &cfg, x, &c.neighbors).unwrap();
        tape.value(out).data.iter().zip(&readout.data).map(|(a, b)| a * b).sum()
    };

    let mut tape = Tape::new();
    let pv = c.params.register(&mut tape);
    let s = tape.leaf(c.states.clone());
    let a = tape.constant(Tensor2::from_vec(3, PARAM_COUNT, c.grads.clone()).unwrap());
    let p = tape.constant(Tensor2::from_vec(3, PARAM_COUNT, c.cloud.as_matrix().to_vec()).unwrap());
    let x = assemble_input(&mut tape, a, p, s, None).unwrap();
    let out = point_transformer_forward(&mut tape, &pv, &cfg, x, &c.neighbors).unwrap();
    let grads = tape.backward(&[(out, readout.clone())]).unwrap();
    let pg = pv.gradients(&c.params, &grads);
    let sg = grads.get(s).unwrap().clone();

    let h = 1e-6;
    let check = |analytic: f64, fd: f64, what: &str| {
        assert!((analytic - fd).abs() <= 1e-5 * analytic.abs().max(1e-3), "{what}: analytic {analytic} fd {fd}");
    };
    for name in
        ["pt.in.w", "pt.0.qkv.w", "pt.1.qkv.b", "pt.0.proj.w", "pt.1.ln1.g", "pt.0.ln2.b", "pt.1.mlp1.w", "pt.1.mlp2.b"]
    {
        let t = c.params.get(name).unwrap();
        for idx in [0, t.data.len() / 2, t.data.len() - 1] {
            let mut plus = c.params.clone();
            plus.get_mut(name).unwrap().data[idx] += h;
            let mut minus = c.params.clone();
            minus.get_mut(name).unwrap().data[idx] -= h;
            let fd = (eval(&plus, &c.states) - eval(&minus, &c.states)) / (2.0 * h);
            check(pg.get(name).unwrap().data[idx], fd, name);
        }
    }
    for idx in [0, 5, 13, 23] {
        let mut plus = c.states.clone();
        plus.data[idx] += h;
        let mut minus = c.states.clone();
        minus.data[idx] -= h;
        let fd = (eval(&c.params, &plus) - eval(&c.params, &minus)) / (2.0 * h);
        check(sg.data[idx], fd, "states");
    }
}

#[test]
fn no_gradient_reaches_detached_inputs() {
    let cfg = tiny();
    let c = case(&cfg, 5, 31);
    let mut tape = Tape::new();
    let pv = c.params.register(&mut tape);
    let s = tape.leaf(c.states.clone());
    let a = tape.leaf(Tensor2::from_vec(5, PARAM_COUNT, c.grads.clone()).unwrap());
    let p = tape.leaf(Tensor2::from_vec(5, PARAM_COUNT, c.cloud.as_matrix().to_vec()).unwrap());
    let x = assemble_input(&mut tape, a, p, s, None).unwrap();
    let next = point_transformer_forward(&mut tape, &pv, &cfg, x, &c.neighbors).unwrap();
    let rho = state_scale_forward(&mut tape, &pv, x).unwrap();
    let scaled = tape.scale_rows(next, rho).unwrap();
    let u = update_head_forward(&mut tape, &pv, &cfg, scaled).unwrap();
    let seed_d = Tensor2::filled(5, PARAM_COUNT, 1.0);
    let seed_s = Tensor2::filled(5, cfg.d_state, 1.0);
    let grads = tape.backward(&[(u.delta, seed_d), (next, seed_s)]).unwrap();
    let zero = |v| grads.get(v).is_none_or(|t: &Tensor2<f64>| t.data.iter().all(|x| *x == 0.0));
    assert!(zero(a));
    assert!(zero(p));
    assert!(!zero(s));
    let pg = pv.gradients(&c.params, &grads);
    assert!(pg.iter().any(|(_, t)| t.data.iter().any(|v| *v != 0.0)));
}

#[test]
fn latents_are_standard_normal_and_reproducible() {
    let a: Tensor2<f32> = init_latents(100, 100, 4);
    assert_eq!(a, init_latents(100, 100, 4));
    assert_ne!(a, init_latents(100, 100, 5));
    let n = a.data.len() as f64;
    let mean = a.data.iter().map(|v| *v as f64).sum::<f64>() / n;
    let var = a.data.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "{mean}");
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn projected_latents_are_checked() {
    let f = Tensor2::<f64>::from_fn(4, 3, |r, c| (r + c) as f64);
    let w = Tensor2::from_fn(3, 8, |r, c| (r * c) as f64);
    let s = project_latents(&f, &w).unwrap();
    assert_eq!(s.shape(), (4, 8));
    assert_eq!(s.get(2, 3), 2.0 * 0.0 + 3.0 * 3.0 + 4.0 * 6.0);
    assert!(project_latents(&f, &Tensor2::zeros(4, 8)).is_err());
}

#[test]
fn baseline_has_wider_input_and_follows_the_schedule() {
    let mut cfg = tiny();
    cfg.kind = ModelKind::LoBaseline;
    cfg.horizon = 20;
    assert_eq!(cfg.input_dim(), 59 + 59 + 8 + 12);
    let c = case(&cfg, 4, 40);
    assert!(c.params.get("scale.l1.w").is_err());
    let run = |t| lo_baseline_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, t).unwrap();
    let (at_end, _, pred) = run(20);
    assert_eq!(at_end, c.cloud);
    assert!(pred.delta.data.iter().all(|v| *v == 0.0));
    let (_, _, p0) = run(0);
    let (_, _, p1) = run(1);
    assert!(p0.magnitude.iter().all(|m| *m > 0.0));
    assert!((baseline_factor(&cfg, 0) - 0.999_848).abs() < 1e-5);
    assert_ne!(p0.delta, p1.delta);
    assert!(lo_baseline_step(&c.cloud, &c.grads, &c.states, &c.params, &tiny(), &c.neighbors, 0).is_err());
}

#[test]
fn warm_start_follows_the_weighted_gradient() {
    let cfg = L2SConfig::desk();
    let cols = warm_start_columns(&cfg);
    assert_eq!(cols.len(), 14);
    assert_eq!(cols[0], (10, 1.0));
    let c = case(&cfg, 12, 4);
    let (_, _, pred) = l2s_step(&c.cloud, &c.grads, &c.states, &c.params, &cfg, &c.neighbors, 0).unwrap();
    for i in 0..12 {
        let mut want = vec![0.0; PARAM_COUNT];
        for &(col, w) in &cols {
            want[col] = w * c.grads[i * PARAM_COUNT + col];
        }
        let n: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (d, w) in pred.direction.row(i).iter().zip(&want) {
            assert!((d - w / n).abs() < 1e-9);
        }
        assert!(pred.magnitude[i] > 0.0);
    }
    let plain = init_model::<f64>(&L2SConfig { warm_start: false, ..cfg.clone() }, 4).unwrap();
    assert_ne!(plain.get("pt.in.w").unwrap(), c.params.get("pt.in.w").unwrap());
}
