use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn eval_pipe(p: &Pipeline, seed: u64) -> f64 {
    eval::evaluate(p, &EvalOptions {
        episodes: 200, shots: 1, split: data::Split::Test, seed,
        with_oracle: false, with_baseline: false,
    }).unwrap().miou.unwrap()
}

fn main() {
    let mut base = config::Config::default();
    base.seed = 11;
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let ckpt1 = p1.checkpoint(None);

    // (c) comparison with pure-replacement nonparam, over 2 seeds.
    for seed in [21u64, 22] {
        let mut c = base.clone();
        c.iterations = Some(1000);
        c.seed = seed;
        let (pl, _) = eval::run_grid_cell(&c, &ckpt1, "on", "on", "off").unwrap();
        let learned = eval_pipe(&pl, 77);
        let (pn, _) = eval::run_grid_cell(&c, &ckpt1, "on", "nonparam", "off").unwrap();
        let nonparam = eval_pipe(&pn, 77);
        println!("seed {seed}: learned(lm-off) {learned:.4} vs nonparam {nonparam:.4} => learned wins: {}", nonparam < learned);
    }

    // Two-stage vs joint budget splits.
    for (s1_it, s2_it) in [(1000u64, 500u64), (1200, 600)] {
        let total = s1_it + s2_it;
        for seed in [31u64, 32] {
            let mut ca = base.clone();
            ca.seed = seed;
            ca.iterations = Some(s1_it);
            let mut pa = Pipeline::build(&ca, Stage::Pos).unwrap();
            let mut oa = OptimizerState::new(&pa.store);
            train::train_stage1(&mut pa, &mut oa).unwrap();
            let cka = pa.checkpoint(None);
            let mut cb = ca.clone();
            cb.iterations = Some(s2_it);
            let mut pb = Pipeline::build(&cb, Stage::Mm).unwrap();
            pb.load_values(&cka.params, &["encoder.", "pos."]).unwrap();
            let mut ob = OptimizerState::new(&pb.store);
            train::train_stage2(&mut pb, &mut ob).unwrap();
            let two = eval_pipe(&pb, 77);

            let mut cj = ca.clone();
            cj.iterations = Some(total);
            let mut pj = Pipeline::build(&cj, Stage::Joint).unwrap();
            let mut oj = OptimizerState::new(&pj.store);
            train::train_joint(&mut pj, &mut oj).unwrap();
            let joint = eval_pipe(&pj, 77);
            println!("split {s1_it}+{s2_it} vs {total}, seed {seed}: two {two:.6} joint {joint:.6} => two>=joint: {}", two >= joint);
        }
    }
}
