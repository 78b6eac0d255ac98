use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn eval_full(p: &Pipeline, oracle: bool) -> (f64, f64) {
    let r = eval::evaluate(p, &EvalOptions {
        episodes: 200, shots: 1, split: data::Split::Test, seed: 900,
        with_oracle: oracle, with_baseline: false,
    }).unwrap();
    (r.miou.unwrap_or(0.0), r.oracle_miou.unwrap_or(0.0))
}

// Mean max-value of blended predictions over a few episodes, to see
// whether predictions binarize to something.
fn blend_stats(p: &Pipeline) -> (f64, f64) {
    let dcfg = p.config.data_config().unwrap();
    let matcher = p.matcher.as_ref().unwrap();
    let mut mean_max = 0.0;
    let mut mean_wmax = 0.0;
    for seed in 0..10u64 {
        let ep = data::sample_episode(seed, data::Split::Test, 1, &dcfg).unwrap();
        let mut g = tensor::Graph::inference();
        let bind = p.store.bind(&mut g).unwrap();
        let qp = p.encoder.encode(&p.store, &ep.query, 64, 64).unwrap();
        let sp = p.encoder.encode(&p.store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = p.seg.propose(&mut g, &bind, &qp).unwrap();
        let supports: Vec<(&encoder::FeaturePyramid, &[f64])> = vec![(&sp, ep.supports[0].1.as_slice())];
        let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        mean_max += g.data(out.result.blended).iter().cloned().fold(0.0f64, f64::max);
        if let Some(w) = out.result.weights {
            mean_wmax += g.data(w).iter().cloned().fold(0.0f64, f64::max);
        }
    }
    (mean_max / 10.0, mean_wmax / 10.0)
}

fn main() {
    // Shared stage-1 for ablation cells.
    let mut base = config::Config::default();
    base.seed = 100;
    base.episodes = 200;
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let ckpt1 = p1.checkpoint(None);
    {
        let mut pe = Pipeline::build(&base, Stage::Mm).unwrap();
        pe.load_values(&ckpt1.params, &["encoder.", "pos."]).unwrap();
        let (_, oracle) = eval_full(&pe, true);
        println!("shared stage-1 oracle: {oracle:.4}");
    }

    for seed in [201u64, 202, 203] {
        let mut c = base.clone();
        c.seed = seed;
        let all_off = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "off", "off", "off").unwrap(); eval_full(&p, false).0 };
        let lm_only = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "off", "off", "on").unwrap();
            let (m, _) = eval_full(&p, false); let (bm, wm) = blend_stats(&p);
            println!("  lm_only seed {seed}: blended max {bm:.3}, weight max {wm:.3}"); m };
        let full = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "on", "on", "on").unwrap();
            let (m, _) = eval_full(&p, false); let (bm, wm) = blend_stats(&p);
            println!("  full seed {seed}: blended max {bm:.3}, weight max {wm:.3}"); m };
        let learned = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "on", "on", "off").unwrap(); eval_full(&p, false).0 };
        let nonparam = { let (p, _) = eval::run_grid_cell(&c, &ckpt1, "on", "nonparam", "off").unwrap(); eval_full(&p, false).0 };
        println!("seed {seed}: all_off {all_off:.4} lm_only {lm_only:.4} full {full:.4} learned {learned:.4} nonparam {nonparam:.4}");
        println!("  (a) lm>off: {} (b) full>=lm: {} (c) np<learned: {}", lm_only > all_off, full >= lm_only, nonparam < learned);
    }

    for seed in [401u64, 402, 403] {
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
        let (two, two_or) = eval_full(&pb, true);
        let (bm, wm) = blend_stats(&pb);

        let mut cj = ca.clone();
        cj.iterations = Some(3000);
        let mut pj = Pipeline::build(&cj, Stage::Joint).unwrap();
        let mut oj = OptimizerState::new(&pj.store);
        train::train_joint(&mut pj, &mut oj).unwrap();
        let (joint, joint_or) = eval_full(&pj, true);
        println!("seed {seed}: two {two:.4} (oracle {two_or:.4}, bmax {bm:.2}, wmax {wm:.2}) vs joint {joint:.4} (oracle {joint_or:.4}) => {}", two >= joint);
    }
}
