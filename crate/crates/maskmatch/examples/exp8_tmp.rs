use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn eval_pipe(p: &Pipeline) -> f64 {
    eval::evaluate(p, &EvalOptions {
        episodes: 200, shots: 1, split: data::Split::Test, seed: 900,
        with_oracle: false, with_baseline: false,
    }).unwrap().miou.unwrap()
}

fn main() {
    let mut base = config::Config::default();
    base.seed = 100;
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let ckpt1 = p1.checkpoint(None);
    println!("all_off reference: eval on fixed episodes");
    let all_off = {
        let (p, _) = eval::run_grid_cell(&base, &ckpt1, "off", "off", "off").unwrap();
        eval_pipe(&p)
    };
    println!("all_off {all_off:.4}");

    for blend in ["linear", "softmax"] {
        for seed in [201u64, 202] {
            let mut c = base.clone();
            c.seed = seed;
            c.blend = blend.to_string();
            let lm_only = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "off", "off", "on").unwrap(); eval_pipe(&p) };
            let full = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "on", "on", "on").unwrap(); eval_pipe(&p) };
            println!("blend={blend} seed={seed}: lm_only {lm_only:.4} (a: {}), full {full:.4} (b: {})",
                lm_only > all_off, full >= lm_only);
        }
    }
}
