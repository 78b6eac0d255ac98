//! Stage 1 in miniature: train the proposal segmenter on multi-object
//! scenes with Hungarian-matched dice, then inspect the proposals and the
//! oracle score they admit.
//!
//!     cargo run --release --example proposals

use maskmatch::checkpoint::Stage;
use maskmatch::config::Config;
use maskmatch::data::{self, Split};
use maskmatch::eval::{self, EvalOptions};
use maskmatch::pos::downsample_mask;
use maskmatch::tensor::Graph;
use maskmatch::train::{self, OptimizerState, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    cfg.image_size = 64;
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    cfg.proposals = 8;
    cfg.iterations = Some(300);
    cfg.seed = 5;

    let mut pipeline = Pipeline::build(&cfg, Stage::Pos)?;
    let encoder_hash = pipeline.store.subtree_hash("encoder.");
    let mut opt = OptimizerState::new(&pipeline.store);
    let outcome = train::train_stage1(&mut pipeline, &mut opt)?;
    println!(
        "trained {} iterations; loss {:.4} -> {:.4}",
        outcome.losses.len(),
        outcome.losses.first().unwrap(),
        outcome.losses.last().unwrap()
    );
    assert_eq!(encoder_hash, pipeline.store.subtree_hash("encoder."), "encoder stays frozen");

    // Inspect proposals on one held-out episode.
    let dcfg = cfg.data_config()?;
    let ep = data::sample_episode(0, Split::Test, 1, &dcfg)?;
    let mut g = Graph::inference();
    let bind = pipeline.store.bind(&mut g)?;
    let pyr = pipeline.encoder.encode(&pipeline.store, &ep.query, 64, 64)?;
    let set = pipeline.seg.propose(&mut g, &bind, &pyr)?;
    let gt4 = downsample_mask(&ep.query_gt, 64, 4);
    let hw = set.h * set.w;
    let data = g.data(set.masks);
    for p in 0..set.n {
        let m = &data[p * hw..(p + 1) * hw];
        let confident = m.iter().filter(|&&v| v >= 0.5).count();
        let overlap = m.iter().zip(&gt4).filter(|(&a, &b)| a >= 0.5 && b >= 0.5).count();
        println!("proposal {p}: {confident:>3} px >= 0.5, {overlap:>3} on the target class");
    }

    // Oracle: how good is the best proposal per episode?
    let report = eval::evaluate(
        &pipeline,
        &EvalOptions {
            episodes: 50,
            shots: 1,
            split: Split::Test,
            seed: 1,
            with_oracle: true,
            with_baseline: false,
        },
    )?;
    println!("oracle mIoU over 50 test episodes: {:.4}", report.oracle_miou.unwrap());
    Ok(())
}
