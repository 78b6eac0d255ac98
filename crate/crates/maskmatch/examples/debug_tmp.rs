use maskmatch::checkpoint::Stage;
use maskmatch::train::{self, OptimizerState, Pipeline};
use maskmatch::*;

fn main() {
    let mut base = config::Config::default();
    base.seed = 11;
    let mut c1 = base.clone();
    c1.iterations = Some(2000);
    let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let ckpt1 = p1.checkpoint(None);

    for (sa, ca) in [(false, mm::CaMode::Off), (true, mm::CaMode::Off), (true, mm::CaMode::NonParametric), (true, mm::CaMode::Learned)] {
        let mut c = base.clone();
        c.sa = if sa {"on"} else {"off"}.into();
        c.ca = match ca { mm::CaMode::Off => "off", mm::CaMode::Learned => "on", mm::CaMode::NonParametric => "nonparam" }.into();
        c.lm = "off".into();
        let mut p = Pipeline::build(&c, Stage::Mm).unwrap();
        p.load_values(&ckpt1.params, &["encoder.", "pos."]).unwrap();
        let dcfg = c.data_config().unwrap();
        let matcher = p.matcher.as_ref().unwrap();
        let mut smin: f64 = 1.0; let mut smax: f64 = -1.0; let mut spread = 0.0; let mut cnt = 0.0;
        for seed in 0..20u64 {
            let ep = data::sample_episode(seed, data::Split::Test, 1, &dcfg).unwrap();
            let mut g = tensor::Graph::inference();
            let bind = p.store.bind(&mut g).unwrap();
            let qp = p.encoder.encode(&p.store, &ep.query, 64, 64).unwrap();
            let sp = p.encoder.encode(&p.store, &ep.supports[0].0, 64, 64).unwrap();
            let proposals = p.seg.propose(&mut g, &bind, &qp).unwrap();
            let supports: Vec<(&encoder::FeaturePyramid, &[f64])> = vec![(&sp, ep.supports[0].1.as_slice())];
            let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
            let s = g.data(out.result.s);
            let mn = s.iter().cloned().fold(f64::INFINITY, f64::min);
            let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            smin = smin.min(mn); smax = smax.max(mx); spread += mx - mn; cnt += 1.0;
        }
        println!("sa={sa} ca={ca:?}: S in [{smin:.4}, {smax:.4}], mean spread {:.4}", spread / cnt);
    }

    // proposal stats: how confident are stage-1 proposals?
    {
        let dcfg = base.data_config().unwrap();
        let ep = data::sample_episode(0, data::Split::Test, 1, &dcfg).unwrap();
        let mut g = tensor::Graph::inference();
        let bind = p1.store.bind(&mut g).unwrap();
        let qp = p1.encoder.encode(&p1.store, &ep.query, 64, 64).unwrap();
        let proposals = p1.seg.propose(&mut g, &bind, &qp).unwrap();
        let d = g.data(proposals.masks);
        let hw = 256;
        for p in 0..4 {
            let m = &d[p*hw..(p+1)*hw];
            let mx = m.iter().cloned().fold(0.0f64, f64::max);
            let over = m.iter().filter(|&&v| v >= 0.5).count();
            println!("proposal {p}: max {mx:.3}, px>=0.5: {over}");
        }
    }
}
