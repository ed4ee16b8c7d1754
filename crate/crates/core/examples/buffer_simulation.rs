//! How often each inner step gets trained when meta-training draws starts
//! from the checkpoint buffer, without running any model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splatopt::meta::{simulate_buffer, MetaConfig};

fn main() {
    let cfg = MetaConfig::paper();
    let iterations = 10_000;
    let sim = simulate_buffer(&cfg, iterations, &mut ChaCha8Rng::seed_from_u64(0));
    println!("{iterations} meta-iterations, {} fresh starts", sim.fresh_starts);
    for step in [1, 2, 3, 4, 5, 6, 10, 20, 50, 100, 200] {
        println!("inner step {step:>4}: trained {:>5} times", sim.visits_at(step));
    }
    println!("furthest inner step reached: {}", sim.max_inner_step);
}
