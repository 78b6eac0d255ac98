//! Stage 2 in miniature: freeze a trained proposal stack, train the
//! matching module (alignment + learnable matching) on episodes, and
//! compare the blended prediction against the heuristic argmax choice.
//!
//!     cargo run --release --example matching

use maskmatch::checkpoint::Stage;
use maskmatch::config::Config;
use maskmatch::data::{self, Split};
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    cfg.proposals = 8;
    cfg.seed = 5;

    // Stage 1.
    cfg.iterations = Some(400);
    let mut p1 = Pipeline::build(&cfg, Stage::Pos)?;
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1)?;
    let ckpt = p1.checkpoint(None);
    println!("stage 1 done");

    // Stage 2: encoder + segmenter frozen, matcher trains.
    cfg.iterations = Some(300);
    let mut p2 = Pipeline::build(&cfg, Stage::Mm)?;
    p2.load_values(&ckpt.params, &["encoder.", "pos."])?;
    let pos_hash = p2.store.subtree_hash("pos.");
    let mut o2 = OptimizerState::new(&p2.store);
    let outcome = train::train_stage2(&mut p2, &mut o2)?;
    assert_eq!(pos_hash, p2.store.subtree_hash("pos."), "segmenter stays frozen");
    println!(
        "stage 2 done; loss {:.4} -> {:.4}",
        outcome.losses.first().unwrap(),
        outcome.losses.last().unwrap()
    );

    // Learned matching vs the argmax-cosine baseline on the same episodes.
    let report = eval::evaluate(
        &p2,
        &EvalOptions {
            episodes: 100,
            shots: 1,
            split: Split::Test,
            seed: 3,
            with_oracle: true,
            with_baseline: true,
        },
    )?;
    println!("matcher  mIoU: {:.4}", report.miou.unwrap());
    println!("baseline mIoU: {:.4}", report.baseline_miou.unwrap());
    println!("oracle   mIoU: {:.4}", report.oracle_miou.unwrap());

    // One episode end to end, with the weights the matcher assigned.
    let dcfg = cfg.data_config()?;
    let ep = data::sample_episode(0, Split::Test, 1, &dcfg)?;
    let mut g = maskmatch::tensor::Graph::inference();
    let bind = p2.store.bind(&mut g)?;
    let qp = p2.encoder.encode(&p2.store, &ep.query, 64, 64)?;
    let sp = p2.encoder.encode(&p2.store, &ep.supports[0].0, 64, 64)?;
    let proposals = p2.seg.propose(&mut g, &bind, &qp)?;
    let matcher = p2.matcher.as_ref().unwrap();
    let supports = vec![(&sp, ep.supports[0].1.as_slice())];
    let out = maskmatch::mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals)?;
    let w = out.result.weights.unwrap();
    println!("similarities: {:?}", g.data(out.result.s).iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("blend weights: {:?}", g.data(w).iter().map(|v| (v * 1e3).round() / 1e3).collect::<Vec<_>>());
    println!("heuristic pick would be proposal {}", out.result.selected);
    Ok(())
}
