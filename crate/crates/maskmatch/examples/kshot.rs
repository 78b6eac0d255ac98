//! K-shot prototype averaging: k = 1 is bit-identical to a plain match,
//! identical supports collapse to one shot, and distinct supports average.
//!
//!     cargo run --release --example kshot

use maskmatch::checkpoint::Stage;
use maskmatch::config::Config;
use maskmatch::data::{self, Split};
use maskmatch::tensor::Graph;
use maskmatch::train::Pipeline;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    cfg.proposals = 8;
    cfg.seed = 9;
    let pipeline = Pipeline::build(&cfg, Stage::Mm)?;
    let dcfg = cfg.data_config()?;
    let matcher = pipeline.matcher.as_ref().unwrap();

    let ep = data::sample_episode(4, Split::Test, 3, &dcfg)?;
    let run = |k: usize, duplicate_first: bool| -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::inference();
        let bind = pipeline.store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(&pipeline.store, &ep.query, 64, 64).unwrap();
        let pyrs: Vec<_> = (0..k)
            .map(|i| {
                let idx = if duplicate_first { 0 } else { i };
                pipeline.encoder.encode(&pipeline.store, &ep.supports[idx].0, 64, 64).unwrap()
            })
            .collect();
        let supports: Vec<(&maskmatch::encoder::FeaturePyramid, &[f64])> = pyrs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let idx = if duplicate_first { 0 } else { i };
                (p, ep.supports[idx].1.as_slice())
            })
            .collect();
        let proposals = pipeline.seg.propose(&mut g, &bind, &qp).unwrap();
        let out = maskmatch::mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        (g.data(out.p_support).to_vec(), g.data(out.result.blended).to_vec())
    };

    let (p1, b1) = run(1, false);
    let (p_dup, b_dup) = run(3, true);
    println!("3 identical supports equal 1-shot:   prototypes {} / blended {}",
        p1 == p_dup, b1 == b_dup);

    let (p3, _) = run(3, false);
    let diff: f64 = p1.iter().zip(&p3).map(|(a, b)| (a - b).abs()).sum();
    println!("3 distinct supports shift the prototype (L1 difference {diff:.4})");

    let (p_b, _) = run(2, false);
    println!("support prototype length: {} (three concatenated pyramid levels)", p_b.len());
    Ok(())
}
