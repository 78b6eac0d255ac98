use maskmatch::checkpoint::Stage;
use maskmatch::eval::{self, EvalOptions};
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn main() {
    let mut base = config::Config::default();
    base.seed = 100;
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let ckpt1 = p1.checkpoint(None);

    let mut c = base.clone();
    c.seed = 201;
    let (p, _) = eval::run_grid_cell(&c, &ckpt1, "off", "off", "on").unwrap();
    let dcfg = c.data_config().unwrap();
    let matcher = p.matcher.as_ref().unwrap();
    for seed in 0..6u64 {
        let ep = data::sample_episode(seed, data::Split::Test, 1, &dcfg).unwrap();
        let mut g = tensor::Graph::inference();
        let bind = p.store.bind(&mut g).unwrap();
        let qp = p.encoder.encode(&p.store, &ep.query, 64, 64).unwrap();
        let sp = p.encoder.encode(&p.store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = p.seg.propose(&mut g, &bind, &qp).unwrap();
        let supports: Vec<(&encoder::FeaturePyramid, &[f64])> = vec![(&sp, ep.supports[0].1.as_slice())];
        let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        let gt4 = pos::downsample_mask(&ep.query_gt, 64, 4);
        let hw = 256;
        let ious = mm::proposal_ious(g.data(proposals.masks), 16, hw, &gt4);
        let w = g.data(out.result.weights.unwrap()).to_vec();
        let s = g.data(out.result.s).to_vec();
        let widx = mm::argmax_tie_low(&w);
        let sidx = mm::argmax_tie_low(&s);
        let iidx = mm::argmax_tie_low(&ious);
        let md = g.data(proposals.masks);
        let pmax = |i: usize| md[i*hw..(i+1)*hw].iter().cloned().fold(0.0f64, f64::max);
        let parea = |i: usize| md[i*hw..(i+1)*hw].iter().filter(|&&v| v >= 0.25).count();
        // soft dice of blended and of best proposal
        let bd = g.data(out.result.blended);
        let dice_blend = pos::dice_val(bd, &gt4);
        let dice_best = pos::dice_val(&md[iidx*hw..(iidx+1)*hw], &gt4);
        println!("ep {seed}: w->{widx} (w {:.2}, iou {:.2}, max {:.2}, area25 {}) | argmaxS {sidx} | bestIoU {iidx} (iou {:.2}, max {:.2}) | dice(blend) {:.3} vs dice(best) {:.3}",
            w[widx], ious[widx], pmax(widx), parea(widx), ious[iidx], pmax(iidx), dice_blend, dice_best);
    }
    // overall eval of this cell for reference
    let r = eval::evaluate(&p, &EvalOptions{ episodes: 50, shots: 1, split: data::Split::Test, seed: 900, with_oracle: false, with_baseline: false }).unwrap();
    println!("cell miou (50 eps): {:.4}", r.miou.unwrap());
}
