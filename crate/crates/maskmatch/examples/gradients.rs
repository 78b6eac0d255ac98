//! Reverse-mode autodiff basics: build a small computation, run backward,
//! and verify the analytic gradients against central finite differences.
//!
//!     cargo run --release --example gradients

use maskmatch::gradcheck;
use maskmatch::tensor::Graph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // y = softmax(x W); loss = sum(y * y)
    let mut g = Graph::new();
    let x = g.leaf(vec![0.5, -1.0, 2.0, 0.3, 0.1, -0.7], &[2, 3], true)?;
    let w = g.leaf(vec![0.2, -0.4, 0.9, 0.5, -0.3, 0.8, 0.1, 0.0, -0.2], &[3, 3], true)?;
    let h = g.matmul(x, w)?;
    let y = g.softmax(h, 1)?;
    let sq = g.mul(y, y)?;
    let loss = g.sum_all(sq)?;
    println!("loss = {:.6}", g.item(loss));

    g.backward(loss)?;
    println!("dL/dx = {:?}", g.grad(x).unwrap());
    println!("dL/dW = {:?}", g.grad(w).unwrap());

    // Backward accumulates: calling it again doubles the stored gradients.
    g.backward(loss)?;
    println!("after second backward, dL/dx doubles: {:?}", g.grad(x).unwrap());

    // The same computation, checked element-by-element against central
    // finite differences (step 1e-5).
    let inputs = gradcheck::random_inputs(&[&[2, 3], &[3, 3]], 42);
    let report = gradcheck::check(&inputs, |g, v| {
        let h = g.matmul(v[0], v[1])?;
        let y = g.softmax(h, 1)?;
        let sq = g.mul(y, y)?;
        g.sum_all(sq)
    })?;
    println!(
        "finite-difference check: {} elements, max relative error {:.3e}",
        report.checked, report.max_rel_err
    );
    assert!(report.max_rel_err < 1e-5);
    Ok(())
}
