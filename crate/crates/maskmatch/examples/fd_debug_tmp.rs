use maskmatch::checkpoint::Stage;
use maskmatch::data::{self, Split};
use maskmatch::mm;
use maskmatch::nn::ParamStore;
use maskmatch::pos::downsample_mask;
use maskmatch::tensor::Graph;
use maskmatch::train::Pipeline;

fn main() {
    let mut cfg = maskmatch::config::Config::default();
    cfg.image_size = 64;
    cfg.d_model = 4;
    cfg.heads = 2;
    cfg.d_ffn = 8;
    cfg.proposals = 3;
    cfg.seed = 9;
    let pipeline = Pipeline::build(&cfg, Stage::Mm).unwrap();
    let dcfg = cfg.data_config().unwrap();
    let ep = data::sample_episode(3, Split::Train, 1, &dcfg).unwrap();
    let gt4 = downsample_mask(&ep.query_gt, 64, 4);

    let forward = |store: &ParamStore, want: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let bind = store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(store, &ep.query, 64, 64).unwrap();
        let sp = pipeline.encoder.encode(store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = pipeline.seg.propose(&mut g, &bind, &qp).unwrap();
        let matcher = pipeline.matcher.as_ref().unwrap();
        let supports: Vec<(&maskmatch::encoder::FeaturePyramid, &[f64])> =
            vec![(&sp, ep.supports[0].1.as_slice())];
        let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        let ious = mm::proposal_ious(g.data(proposals.masks), proposals.n, proposals.h * proposals.w, &gt4);
        let loss = mm::mm_loss(&mut g, &matcher.cfg, &out.result, &gt4, &ious).unwrap();
        let value = g.item(loss.total);
        let grads = if want {
            g.backward(loss.total).unwrap();
            store.trainable_ids().iter().map(|&id| {
                g.grad(bind.var(id)).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).value().len()])
            }).collect()
        } else { Vec::new() };
        (value, grads)
    };

    let (l0, analytic) = forward(&pipeline.store, true);
    println!("loss {l0}");
    let ids = pipeline.store.trainable_ids();
    let mut store = pipeline.store.clone();
    let h = 1e-5;
    for (pi, &id) in ids.iter().enumerate() {
        let name = pipeline.store.get(id).name().to_string();
        let mut worst = 0.0f64;
        let mut worst_j = 0;
        let mut worst_pair = (0.0, 0.0);
        for j in 0..store.get(id).value().len() {
            let orig = store.get(id).value()[j];
            store.value_mut(id)[j] = orig + h;
            let (up, _) = forward(&store, false);
            store.value_mut(id)[j] = orig - h;
            let (down, _) = forward(&store, false);
            store.value_mut(id)[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > worst { worst = rel; worst_j = j; worst_pair = (a, numeric); }
        }
        if worst > 1e-5 {
            println!("{name}: worst rel {worst:.3e} at [{worst_j}] analytic {} numeric {}", worst_pair.0, worst_pair.1);
        }
    }
}
