//! Multi-head attention and the transformer decoder layer: row-stochastic
//! attention weights, permutation invariance of the memory (positional
//! encoding off), and a full-layer gradient check.
//!
//!     cargo run --release --example attention

use maskmatch::gradcheck;
use maskmatch::nn::{DecoderLayer, MultiHeadAttention, ParamStore};
use maskmatch::tensor::Graph;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 8;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mha = MultiHeadAttention::new(&mut store, "demo.attn", d, 4, &mut rng)?;

    let mut g = Graph::new();
    let bind = store.bind(&mut g)?;
    let q = g.constant((0..3 * d).map(|i| (i as f64 * 0.37).sin()).collect(), &[3, d])?;
    let k = g.constant((0..5 * d).map(|i| (i as f64 * 0.21).cos()).collect(), &[5, d])?;
    let (out, weights) = mha.forward_with_weights(&mut g, &bind, q, k, k)?;
    println!("attention output shape: {:?}", g.shape(out));
    for (h, w) in weights.iter().enumerate() {
        let row0: f64 = g.data(*w)[..5].iter().sum();
        println!("head {h}: first query row sums to {row0:.15}");
    }

    // Permuting memory rows changes nothing (no positional encoding).
    let perm: Vec<f64> = [4, 2, 0, 1, 3]
        .iter()
        .flat_map(|&i| g.data(k)[i * d..(i + 1) * d].to_vec())
        .collect();
    let kp = g.constant(perm, &[5, d])?;
    let out_p = mha.forward(&mut g, &bind, q, kp, kp)?;
    let max_diff = g
        .data(out)
        .iter()
        .zip(g.data(out_p))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max |out - out_permuted| = {max_diff:.3e}");

    // Full decoder layer gradient check.
    let layer = DecoderLayer::new(&mut store, "demo.layer", d, 2, 16, &mut rng)?;
    let inputs = gradcheck::random_inputs(&[&[4, d], &[6, d]], 7);
    let report = gradcheck::check(&inputs, |g, v| {
        let bind = store.bind(g)?;
        let y = layer.forward(g, &bind, v[0], v[1], None)?;
        let sq = g.mul(y, y)?;
        g.sum_all(sq)
    })?;
    println!(
        "decoder layer gradient check: {} elements, max rel err {:.3e}",
        report.checked, report.max_rel_err
    );
    Ok(())
}
