//! Central finite-difference gradient verification.
//!
//! `check` rebuilds a scalar-valued computation from scratch for every
//! perturbed input element, so the numeric estimate is independent of the
//! backward rules it validates. Error is measured as
//! `|analytic - numeric| / max(1, |analytic|, |numeric|)`.

use crate::tensor::{Graph, Result, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

/// Worst observed relative error over all input elements.
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Compares analytic gradients of `build` (a function from leaves to a
/// scalar loss) against central finite differences at the given inputs.
///
/// `build` must be a pure function of the leaf values.
pub fn check<F>(inputs: &[(Vec<f64>, Vec<usize>)], build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let forward = |values: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values
            .iter()
            .zip(inputs)
            .map(|(v, (_, shape))| g.leaf(v.clone(), shape, true))
            .collect::<Result<_>>()?;
        let loss = build(&mut g, &vars)?;
        Ok(g.item(loss))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(data, shape)| g.leaf(data.clone(), shape, true))
        .collect::<Result<_>>()?;
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; g.tensor(v).numel()]))
        .collect();

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(d, _)| d.clone()).collect();
    let mut max_rel = 0.0f64;
    let mut checked = 0;
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i][j];
            values[i][j] = orig + STEP;
            let up = forward(&values)?;
            values[i][j] = orig - STEP;
            let down = forward(&values)?;
            values[i][j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[i][j];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradReport { max_rel_err: max_rel, checked })
}

/// Random inputs in [-2, 2] for the given shapes, reproducible from `seed`.
pub fn random_inputs(shapes: &[&[usize]], seed: u64) -> Vec<(Vec<f64>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            (data, shape.to_vec())
        })
        .collect()
}

/// Convenience wrapper: random inputs, assert the report beats `tol`.
pub fn assert_grads<F>(shapes: &[&[usize]], seed: u64, tol: f64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let inputs = random_inputs(shapes, seed);
    let report = check(&inputs, build).expect("gradient check forward failed");
    assert!(
        report.max_rel_err < tol,
        "gradient mismatch: max rel err {:.3e} over {} elements (tol {:.1e})",
        report.max_rel_err,
        report.checked,
        tol
    );
}
