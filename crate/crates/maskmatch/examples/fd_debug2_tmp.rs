use maskmatch::checkpoint::Stage;
use maskmatch::data::{self, Split};
use maskmatch::mm;
use maskmatch::nn::ParamStore;
use maskmatch::pos::downsample_mask;
use maskmatch::tensor::Graph;
use maskmatch::train::Pipeline;

fn main() {
    let mut cfg = maskmatch::config::Config::default();
    cfg.image_size = 32;
    cfg.d_model = 4;
    cfg.heads = 2;
    cfg.d_ffn = 8;
    cfg.proposals = 3;
    cfg.seed = 9;
    let pipeline = Pipeline::build(&cfg, Stage::Mm).unwrap();
    let dcfg = cfg.data_config().unwrap();
    let ep = data::sample_episode(3, Split::Train, 1, &dcfg).unwrap();
    let gt4 = downsample_mask(&ep.query_gt, 32, 4);

    let forward = |store: &ParamStore, want: bool| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let bind = store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(store, &ep.query, 32, 32).unwrap();
        let sp = pipeline.encoder.encode(store, &ep.supports[0].0, 32, 32).unwrap();
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
            let id = store.id_of("mm.ca.level4.layer0.attn.wo.b").unwrap();
            g.grad(bind.var(id)).map(|s| s.to_vec()).unwrap_or_default()
        } else { Vec::new() };
        (value, grads)
    };

    let (l0, analytic) = forward(&pipeline.store, true);
    println!("loss {l0}; analytic grad wo.b = {:?}", analytic);
    let id = pipeline.store.id_of("mm.ca.level4.layer0.attn.wo.b").unwrap();
    let j = 3;
    let orig = pipeline.store.get(id).value()[j];
    let mut store = pipeline.store.clone();
    for h in [1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9] {
        store.value_mut(id)[j] = orig + h;
        let (up, _) = forward(&store, false);
        store.value_mut(id)[j] = orig - h;
        let (down, _) = forward(&store, false);
        store.value_mut(id)[j] = orig;
        println!("h={h:.0e}: numeric {:.4}", (up - down) / (2.0 * h));
    }
}
