use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;
use std::time::Instant;

fn eval_pipe(p: &Pipeline, episodes: usize, seed: u64, oracle: bool, baseline: bool) -> eval::EvalReport {
    eval::evaluate(p, &EvalOptions {
        episodes, shots: 1, split: data::Split::Test, seed,
        with_oracle: oracle, with_baseline: baseline,
    }).unwrap()
}

fn main() {
    let t_all = Instant::now();
    let mut base = config::Config::default();
    base.seed = 11;
    base.episodes = 200;

    // Stage 1 at defaults.
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let t = Instant::now();
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    let out1 = train::train_stage1(&mut p1, &mut o1).unwrap();
    println!("stage1 2000it: {:.0?}; loss {:.4} -> {:.4}", t.elapsed(),
        out1.losses[..20].iter().sum::<f64>()/20.0,
        out1.losses[out1.losses.len()-20..].iter().sum::<f64>()/20.0);
    let ckpt1 = p1.checkpoint(None);

    // Oracle with stage-1 proposals.
    let rep = {
        let mut pe = Pipeline::build(&c1, Stage::Mm).unwrap();
        pe.load_values(&ckpt1.params, &["encoder.", "pos."]).unwrap();
        eval_pipe(&pe, 200, 77, true, true)
    };
    println!("stage1 N=16: oracle {:.4}  baseline(untrained-mm raw) {:.4}", rep.oracle_miou.unwrap(), rep.baseline_miou.unwrap());

    // Grid cells for one seed.
    let run_cell = |sa: &str, ca: &str, lm: &str, seed: u64| -> f64 {
        let mut c = base.clone();
        c.iterations = Some(1000);
        c.seed = seed;
        c.sa = sa.into(); c.ca = ca.into(); c.lm = lm.into();
        let t = Instant::now();
        let (pipe, trained) = eval::run_grid_cell(&c, &ckpt1, sa, ca, lm).unwrap();
        let rep = eval_pipe(&pipe, 200, 77, false, false);
        let m = rep.miou.unwrap();
        println!("cell sa={sa} ca={ca} lm={lm} seed={seed}: miou {m:.4} (trained={trained}, {:.0?})", t.elapsed());
        m
    };

    let s = 21u64;
    let all_off = run_cell("off", "off", "off", s);
    let lm_only = run_cell("off", "off", "on", s);
    let full = run_cell("on", "on", "on", s);
    let ca_learned_heur = run_cell("on", "on", "off", s);
    let ca_nonparam_heur = run_cell("on", "nonparam", "off", s);
    println!("TRENDS: lm_only>all_off: {} | full>=lm_only: {} | nonparam<learned: {}",
        lm_only > all_off, full >= lm_only, ca_nonparam_heur < ca_learned_heur);

    // N sweep (oracle) with reduced stage-1 budget.
    for n in [4usize, 8, 16] {
        let mut c = base.clone();
        c.proposals = n;
        c.iterations = Some(800);
        let t = Instant::now();
        let mut p = Pipeline::build(&c, Stage::Pos).unwrap();
        let mut o = OptimizerState::new(&p.store);
        train::train_stage1(&mut p, &mut o).unwrap();
        let ck = p.checkpoint(None);
        let mut pe = Pipeline::build(&c, Stage::Mm).unwrap();
        pe.load_values(&ck.params, &["encoder.", "pos."]).unwrap();
        let rep = eval_pipe(&pe, 200, 77, true, false);
        println!("N={n}: oracle {:.4} ({:.0?})", rep.oracle_miou.unwrap(), t.elapsed());
    }

    // Two-stage vs joint at equal budget (800+400 vs 1200).
    let seed = 31u64;
    {
        let mut ca = base.clone();
        ca.seed = seed;
        ca.iterations = Some(800);
        let mut pa = Pipeline::build(&ca, Stage::Pos).unwrap();
        let mut oa = OptimizerState::new(&pa.store);
        train::train_stage1(&mut pa, &mut oa).unwrap();
        let cka = pa.checkpoint(None);
        let mut cb = ca.clone();
        cb.iterations = Some(400);
        let mut pb = Pipeline::build(&cb, Stage::Mm).unwrap();
        pb.load_values(&cka.params, &["encoder.", "pos."]).unwrap();
        let mut ob = OptimizerState::new(&pb.store);
        train::train_stage2(&mut pb, &mut ob).unwrap();
        let two = eval_pipe(&pb, 200, 77, false, false).miou.unwrap();

        let mut cj = ca.clone();
        cj.iterations = Some(1200);
        let mut pj = Pipeline::build(&cj, Stage::Joint).unwrap();
        let mut oj = OptimizerState::new(&pj.store);
        train::train_joint(&mut pj, &mut oj).unwrap();
        let joint = eval_pipe(&pj, 200, 77, false, false).miou.unwrap();
        println!("two-stage {:.4} vs joint {:.4} => two>=joint: {}", two, joint, two >= joint);
    }
    println!("pilot total: {:.0?}", t_all.elapsed());
}
