use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn eval_full(p: &Pipeline, seed: u64) -> (f64, f64) {
    let r = eval::evaluate(p, &EvalOptions {
        episodes: 200, shots: 1, split: data::Split::Test, seed,
        with_oracle: true, with_baseline: false,
    }).unwrap();
    (r.miou.unwrap(), r.oracle_miou.unwrap())
}

fn main() {
    let mut base = config::Config::default();
    for seed in [31u64, 32] {
        let mut ca = base.clone();
        ca.seed = seed;
        ca.iterations = Some(2000);
        let mut pa = Pipeline::build(&ca, Stage::Pos).unwrap();
        let mut oa = OptimizerState::new(&pa.store);
        train::train_stage1(&mut pa, &mut oa).unwrap();
        let cka = pa.checkpoint(None);
        let mut cb = ca.clone();
        cb.iterations = Some(1000);
        let mut pb = Pipeline::build(&cb, Stage::Mm).unwrap();
        pb.load_values(&cka.params, &["encoder.", "pos."]).unwrap();
        let mut ob = OptimizerState::new(&pb.store);
        train::train_stage2(&mut pb, &mut ob).unwrap();
        let (two, two_oracle) = eval_full(&pb, 77);

        let mut cj = ca.clone();
        cj.iterations = Some(3000);
        let mut pj = Pipeline::build(&cj, Stage::Joint).unwrap();
        let mut oj = OptimizerState::new(&pj.store);
        train::train_joint(&mut pj, &mut oj).unwrap();
        let (joint, joint_oracle) = eval_full(&pj, 77);
        println!("seed {seed}: two {two:.4} (oracle {two_oracle:.4}) vs joint {joint:.4} (oracle {joint_oracle:.4}) => two>=joint: {}",
            two >= joint);
        println!("  joint param hash: {:?}", &pj.store.subtree_hash("")[..4]);
    }
    let _ = &mut base;
}
