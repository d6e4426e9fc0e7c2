//! Times expected-curve computation for a batch of synthetic users.
//!
//! `cargo run --release -p perk-core --example curve_throughput -- [users] [n] [K] [M]`

use std::time::Instant;

use perk_core::utility::{ApproxEstimator, Measure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let arg = |i: usize, d: usize| args.get(i).copied().unwrap_or(d);
    let (users, n, k, m) = (arg(0, 1000), arg(1, 5000), arg(2, 50), arg(3, 2000));
    let probs: Vec<Vec<f64>> = (0..users)
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(u as u64);
            let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 0.05).collect();
            p.sort_by(|a, b| b.total_cmp(a));
            p
        })
        .collect();
    let start = Instant::now();
    let checksum: f64 = probs
        .par_iter()
        .map(|p| {
            let est = ApproxEstimator::new(p, k, m).expect("valid probabilities");
            Measure::ALL.iter().map(|&ms| est.curve(ms).values[k - 1]).sum::<f64>()
        })
        .sum();
    let secs = start.elapsed().as_secs_f64();
    println!(
        "{users} users, n={n}, K={k}, M={m}, {} threads: {secs:.3} s ({:.3} ms/user, checksum {checksum:.6})",
        rayon::current_num_threads(),
        1e3 * secs / users as f64
    );
}
