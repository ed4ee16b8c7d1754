//! Neighbour tables from the k-d tree against brute force, and the time each
//! takes as the cloud grows.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatopt::knn::{brute_force_knn, build_knn};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [100, 1_000, 4_000] {
        let pts: Vec<[f32; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let t = Instant::now();
        let tree = build_knn(&pts, 8)?;
        let tree_ms = t.elapsed().as_secs_f64() * 1e3;
        let t = Instant::now();
        let brute = brute_force_knn(&pts, 8, false)?;
        let brute_ms = t.elapsed().as_secs_f64() * 1e3;
        println!("n {n:>6}: tree {tree_ms:8.2} ms  brute {brute_ms:8.2} ms  identical {}", tree == brute);
    }
    let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 3.0]];
    let table = build_knn(&pts, 2)?;
    for i in 0..pts.len() {
        println!("point {i}: neighbours {:?}", table.row(i));
    }
    Ok(())
}
