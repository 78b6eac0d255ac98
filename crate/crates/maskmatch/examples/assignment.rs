//! Minimum-cost bipartite assignment of ground truths to proposals,
//! checked against exhaustive permutation search.
//!
//!     cargo run --release --example assignment

use maskmatch::pos::hungarian;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn rec(cost: &[Vec<f64>], g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if g == cost[0].len() {
            *best = best.min(acc);
            return;
        }
        for p in 0..cost.len() {
            if !used[p] {
                used[p] = true;
                rec(cost, g + 1, used, acc + cost[p][g], best);
                used[p] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
    best
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cost = vec![
        vec![0.90, 0.15, 0.70],
        vec![0.20, 0.80, 0.65],
        vec![0.50, 0.60, 0.10],
        vec![0.30, 0.95, 0.40],
    ];
    let a = hungarian(&cost)?;
    println!("4 proposals x 3 ground truths:");
    for (p, t) in &a.pairs {
        println!("  gt {t} -> proposal {p} (cost {:.2})", cost[*p][*t]);
    }
    println!("total {:.2}, brute force {:.2}", a.total_cost, brute_force(&cost));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=6usize);
        let g = rng.gen_range(1..=n);
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..g).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let got = hungarian(&cost)?.total_cost;
        worst = worst.max((got - brute_force(&cost)).abs());
    }
    println!("500 random matrices vs brute force: max |difference| = {worst:.2e}");
    Ok(())
}
