//! Acceptance suite. Each test prints one `ACCEPTANCE <name>: PASS` line
//! (or FAIL with the measured values before panicking). Heavy shared
//! artifacts — notably the default-scale stage-1 checkpoint — are built
//! once per run.
//!
//!     cargo test --test acceptance -- --nocapture

use std::sync::OnceLock;
use std::time::Instant;

use maskmatch::checkpoint::{Checkpoint, Stage};
use maskmatch::config::Config;
use maskmatch::data::{self, Split};
use maskmatch::eval::{self, EvalOptions};
use maskmatch::gradcheck;
use maskmatch::mm::{self, CaMode};
use maskmatch::nn::ParamStore;
use maskmatch::pos::{self, downsample_mask};
use maskmatch::rng::chacha;
use maskmatch::tensor::Graph;
use maskmatch::train::{self, OptimizerState, Pipeline};

const EVAL_SEED: u64 = 900;
const EPISODES: usize = 200;

fn pass(name: &str, detail: String) {
    println!("ACCEPTANCE {name}: PASS ({detail})");
}

fn verdict(name: &str, ok: bool, detail: String) {
    if ok {
        pass(name, detail);
    } else {
        println!("ACCEPTANCE {name}: FAIL ({detail})");
        panic!("{name} failed: {detail}");
    }
}

/// Desk-scale defaults: 64x64 images, d = 32, N = 16.
fn default_config(seed: u64) -> Config {
    let mut c = Config::default();
    c.seed = seed;
    c.episodes = EPISODES;
    c
}

/// Stage-1 checkpoint at the defaults, shared across criteria.
fn shared_stage1() -> &'static (Checkpoint, Config) {
    static STAGE1: OnceLock<(Checkpoint, Config)> = OnceLock::new();
    STAGE1.get_or_init(|| {
        let cfg = default_config(100);
        let mut p = Pipeline::build(&cfg, Stage::Pos).expect("build stage 1");
        let mut opt = OptimizerState::new(&p.store);
        train::train_stage1(&mut p, &mut opt).expect("train stage 1");
        (p.checkpoint(None), cfg)
    })
}

fn eval_miou(pipeline: &Pipeline, oracle: bool, baseline: bool) -> eval::EvalReport {
    eval::evaluate(
        pipeline,
        &EvalOptions {
            episodes: EPISODES,
            shots: 1,
            split: Split::Test,
            seed: EVAL_SEED,
            with_oracle: oracle,
            with_baseline: baseline,
        },
    )
    .expect("evaluation")
}

fn grid_cell_miou(stage1: &Checkpoint, base: &Config, seed: u64, sa: &str, ca: &str, lm: &str) -> f64 {
    let mut cfg = base.clone();
    cfg.seed = seed;
    let (pipeline, _) = eval::run_grid_cell(&cfg, stage1, sa, ca, lm).expect("grid cell");
    eval_miou(&pipeline, false, false).miou.expect("miou")
}

// ── Criterion: gradient correctness ─────────────────────────────────

#[test]
fn gradient_correctness() {
    let t0 = Instant::now();
    let tol_block = 1e-5;

    // Attention + decoder layer.
    let mut store = ParamStore::new();
    let mut rng = chacha(1);
    let layer = maskmatch::nn::DecoderLayer::new(&mut store, "acc.dec", 4, 2, 8, &mut rng).unwrap();
    gradcheck::assert_grads(&[&[3, 4], &[5, 4]], 2, tol_block, |g, v| {
        let bind = store.bind(g)?;
        let y = layer.forward(g, &bind, v[0], v[1], None)?;
        let sq = g.mul(y, y)?;
        g.sum_all(sq)
    });

    // Self-alignment.
    gradcheck::assert_grads(&[&[4, 6]], 3, tol_block, |g, v| {
        let y = mm::self_align(g, v[0])?;
        let sq = g.mul(y, y)?;
        g.sum_all(sq)
    });

    // Cross-alignment (learned) through feature inputs.
    let mut store2 = ParamStore::new();
    let mut rng2 = chacha(2);
    let mm_cfg = mm::MmConfig {
        sa: true,
        ca: CaMode::Learned,
        lm: true,
        d_model: 4,
        heads: 2,
        d_ffn: 8,
        ca_layers: 1,
        n_proposals: 3,
        blend: mm::Blend::Softmax,
        lambda1: 10.0,
        lambda2: 6.0,
        pos_encoding: pos::PosEncoding::Off,
    };
    let matcher = mm::MaskMatcher::new(&mut store2, mm_cfg, &mut rng2).unwrap();
    gradcheck::assert_grads(&[&[4, 4], &[4, 4]], 4, tol_block, |g, v| {
        let bind = store2.bind(g)?;
        // One level in sequence layout on both sides, pooled = itself.
        let q = mm::LevelSeq { seq: v[0], h: 2, w: 2 };
        let s = mm::LevelSeq { seq: v[1], h: 2, w: 2 };
        let layer = &matcher.ca_levels[0][0];
        let _ = layer;
        let qf = mm::PreparedFeatures { levels: vec![q, q, q], pooled: vec![q, q, q] };
        let sf = mm::PreparedFeatures { levels: vec![s, s, s], pooled: vec![s, s, s] };
        let (qa, sa) = mm::cross_align(g, &bind, &matcher, &qf, &sf)
            .map_err(|e| maskmatch::tensor::TensorError::Contract(e.to_string()))?;
        let a = g.mul(qa[0].seq, qa[0].seq)?;
        let b = g.mul(sa[1].seq, sa[1].seq)?;
        let sa_ = g.sum_all(a)?;
        let sb = g.sum_all(b)?;
        g.add(sa_, sb)
    });

    // Matching MLP + blending + min-max + cosine, through prototypes.
    let matcher2 = {
        let mut s = ParamStore::new();
        let m = mm::MaskMatcher::new(&mut s, mm_cfg, &mut chacha(3)).unwrap();
        (s, m)
    };
    gradcheck::assert_grads(&[&[1, 12], &[1, 12], &[1, 12], &[1, 12], &[3, 2, 2]], 5, tol_block, |g, v| {
        let (store, matcher) = &matcher2;
        let bind = store.bind(g)?;
        let masks = g.sigmoid(v[4])?;
        let set = pos::ProposalSet { masks, embeddings: masks, n: 3, h: 2, w: 2 };
        let res = mm::match_proposals(g, &bind, matcher, v[0], &[v[1], v[2], v[3]], &set)
            .map_err(|e| maskmatch::tensor::TensorError::Contract(e.to_string()))?;
        let a = g.sum_all(res.blended)?;
        let b = g.sum_all(res.s_hat)?;
        g.add(a, b)
    });

    // Dice and the contrastive loss.
    gradcheck::assert_grads(&[&[8]], 6, tol_block, |g, v| {
        let pred = g.sigmoid(v[0])?;
        let gt = g.constant(vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0], &[8])?;
        pos::dice_loss(g, pred, gt)
    });
    gradcheck::assert_grads(&[&[1, 5]], 7, tol_block, |g, v| {
        let sig = g.sigmoid(v[0])?;
        let s_hat = mm::minmax_norm(g, sig)?;
        let (loss, _) = mm::contrastive_loss(g, s_hat, &[0.2, 0.9, 0.5, 0.1, 0.4])
            .map_err(|e| maskmatch::tensor::TensorError::Contract(e.to_string()))?;
        Ok(loss)
    });

    // Full stage-2 graph: finite differences over every trainable
    // (matching-module) parameter on a tiny configuration (d = 4, N = 3).
    // 64x64 keeps every pyramid level and pooled attention row above the
    // degenerate sizes where layer-norm curvature would invalidate the
    // finite-difference step itself.
    let tol_full = 1e-4;
    let mut cfg = Config::default();
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

    let forward = |store: &ParamStore, want_grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let bind = store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(store, &ep.query, 64, 64).unwrap();
        let sp = pipeline.encoder.encode(store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = pipeline.seg.propose(&mut g, &bind, &qp).unwrap();
        let matcher = pipeline.matcher.as_ref().unwrap();
        let supports: Vec<(&maskmatch::encoder::FeaturePyramid, &[f64])> =
            vec![(&sp, ep.supports[0].1.as_slice())];
        let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        let ious = mm::proposal_ious(
            g.data(proposals.masks),
            proposals.n,
            proposals.h * proposals.w,
            &gt4,
        );
        let loss = mm::mm_loss(&mut g, &matcher.cfg, &out.result, &gt4, &ious).unwrap();
        let value = g.item(loss.total);
        let grads = if want_grads {
            g.backward(loss.total).unwrap();
            store
                .trainable_ids()
                .iter()
                .map(|&id| {
                    g.grad(bind.var(id))
                        .map(|s| s.to_vec())
                        .unwrap_or_else(|| vec![0.0; store.get(id).value().len()])
                })
                .collect()
        } else {
            Vec::new()
        };
        (value, grads)
    };

    let (_, analytic) = forward(&pipeline.store, true);
    let ids = pipeline.store.trainable_ids();
    let mut store = pipeline.store.clone();
    let h = gradcheck::STEP;
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (pi, &id) in ids.iter().enumerate() {
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
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        "gradient-correctness",
        max_rel < tol_full && elapsed.as_secs() < 60,
        format!(
            "blocks < {tol_block:.0e}; stage-2 graph max rel err {max_rel:.3e} over {checked} params (tol {tol_full:.0e}); {elapsed:.1?} < 1 min"
        ),
    );
}

// ── Criterion: Hungarian optimality ─────────────────────────────────

#[test]
fn hungarian_optimality() {
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], g: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if g == cost[0].len() {
                *best = best.min(acc);
                return;
            }
            for p in 0..cost.len() {
                if !used[p] {
                    used[p] = true;
                    rec(cost, g + 1, used, acc + cost[p][g], best);
                    used[p] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; cost.len()], 0.0, &mut best);
        best
    }

    use rand::Rng;
    let t0 = Instant::now();
    let mut rng = chacha(55);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=6usize);
        let g = rng.gen_range(1..=n);
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..g).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let got = pos::hungarian(&cost).unwrap().total_cost;
        let expect = brute_force(&cost);
        worst = worst.max((got - expect).abs());
    }
    let elapsed = t0.elapsed();
    verdict(
        "hungarian-optimality",
        worst < 1e-9 && elapsed.as_secs() < 5,
        format!("200 matrices N<=6, max |total - brute force| = {worst:.2e}, {elapsed:.2?} < 5 s"),
    );
}

// ── Criterion: loss identities ──────────────────────────────────────

#[test]
fn loss_identities() {
    // dice(pred = gt) = 0 exactly on binary masks.
    let m = vec![1.0, 0.0, 1.0, 1.0, 0.0];
    let dice_zero = pos::dice_val(&m, &m) == 0.0;

    // L_co -> 0 as (S_pos, S_neg) -> (1, 0).
    let mut g = Graph::new();
    let mut lco_limit = true;
    for eps in [1e-3, 1e-6, 1e-9] {
        let s_hat = g.constant(vec![1.0 - eps, eps], &[1, 2]).unwrap();
        let (loss, _) = mm::contrastive_loss(&mut g, s_hat, &[0.9, 0.1]).unwrap();
        lco_limit &= g.item(loss) < 2.0 * eps + 1e-12;
    }

    // min-max output in [0,1] including the constant-S degenerate case.
    use rand::Rng;
    let mut rng = chacha(77);
    let mut minmax_ok = true;
    for _ in 0..100 {
        let n = rng.gen_range(1..10usize);
        let constant = rng.gen_bool(0.2);
        let vals: Vec<f64> = if constant {
            vec![rng.gen_range(-2.0..2.0); n]
        } else {
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
        };
        let s = g.constant(vals, &[1, n]).unwrap();
        let out = mm::minmax_norm(&mut g, s).unwrap();
        minmax_ok &= g.data(out).iter().all(|&v| (0.0..=1.0).contains(&v));
    }
    let c = g.constant(vec![0.7; 5], &[1, 5]).unwrap();
    let out = mm::minmax_norm(&mut g, c).unwrap();
    minmax_ok &= g.data(out).iter().all(|&v| v.abs() < 1e-9);

    // Lambda defaults (10, 6) round-trip through the config format.
    let cfg = Config::default();
    let back = Config::from_toml(&cfg.to_toml()).unwrap();
    let lambdas = back.lambda1 == 10.0 && back.lambda2 == 6.0;

    verdict(
        "loss-identities",
        dice_zero && lco_limit && minmax_ok && lambdas,
        format!("dice(pred=gt)=0: {dice_zero}; L_co limit: {lco_limit}; minmax range: {minmax_ok}; lambda round-trip (10, 6): {lambdas}"),
    );
}

// ── Criterion: oracle dominance ─────────────────────────────────────

#[test]
fn oracle_dominance() {
    let (stage1, cfg) = shared_stage1();
    let mut pipeline = Pipeline::build(cfg, Stage::Mm).unwrap();
    pipeline.load_values(&stage1.params, &["encoder.", "pos."]).unwrap();
    let report = eval_miou(&pipeline, true, true);
    let per_episode = report
        .per_episode
        .iter()
        .all(|e| e.oracle_iou.unwrap() >= e.baseline_iou.unwrap() - 1e-12);
    let aggregate = report.oracle_miou.unwrap() >= report.baseline_miou.unwrap();
    verdict(
        "oracle-dominance",
        per_episode && aggregate && report.episodes >= 200,
        format!(
            "{} episodes, per-episode argmax dominance: {per_episode}; aggregate oracle {:.4} >= baseline {:.4}",
            report.episodes,
            report.oracle_miou.unwrap(),
            report.baseline_miou.unwrap()
        ),
    );
}

// ── Criterion: ablation trend (Tab. 3a ordering) ────────────────────

#[test]
fn ablation_trend() {
    let (stage1, base) = shared_stage1();
    let seeds = [201u64, 202, 203];

    // Rows without learnable parameters do not train; one evaluation each.
    let all_off = grid_cell_miou(stage1, base, seeds[0], "off", "off", "off");
    let nonparam = grid_cell_miou(stage1, base, seeds[0], "on", "nonparam", "off");

    let mean = |f: &dyn Fn(u64) -> f64| -> f64 {
        seeds.iter().map(|&s| f(s)).sum::<f64>() / seeds.len() as f64
    };
    let lm_only = mean(&|s| grid_cell_miou(stage1, base, s, "off", "off", "on"));
    let full = mean(&|s| grid_cell_miou(stage1, base, s, "on", "on", "on"));
    let ca_learned = mean(&|s| grid_cell_miou(stage1, base, s, "on", "on", "off"));

    let a = lm_only > all_off;
    let b = full >= lm_only;
    let c = nonparam < ca_learned;
    verdict(
        "ablation-trend",
        a && b && c,
        format!(
            "3-seed means: all-off {all_off:.4}, LM-only {lm_only:.4} (> all-off: {a}), full {full:.4} (>= LM-only: {b}), CA nonparam {nonparam:.4} < learned {ca_learned:.4}: {c}"
        ),
    );
}

// ── Criterion: proposal-count trend (oracle vs N) ───────────────────

#[test]
fn proposal_count_trend() {
    // Fixed stage-1 budget of 800 iterations across N, averaged over 3
    // seeds.
    let seeds = [301u64, 302, 303];
    let mut means = Vec::new();
    for n in [4usize, 8, 16] {
        let mut total = 0.0;
        for &seed in &seeds {
            let mut cfg = default_config(seed);
            cfg.proposals = n;
            cfg.iterations = Some(800);
            let mut p = Pipeline::build(&cfg, Stage::Pos).unwrap();
            let mut opt = OptimizerState::new(&p.store);
            train::train_stage1(&mut p, &mut opt).unwrap();
            let ckpt = p.checkpoint(None);
            let mut pe = Pipeline::build(&cfg, Stage::Mm).unwrap();
            pe.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
            total += eval_miou(&pe, true, false).oracle_miou.unwrap();
        }
        means.push(total / seeds.len() as f64);
    }
    let ok = means[0] <= means[1] && means[1] <= means[2];
    verdict(
        "proposal-count-trend",
        ok,
        format!(
            "oracle mIoU over N ∈ {{4, 8, 16}} (3-seed means): {:.4} <= {:.4} <= {:.4}",
            means[0], means[1], means[2]
        ),
    );
}

// ── Criterion: two-stage vs end-to-end ──────────────────────────────

#[test]
fn two_stage_vs_joint() {
    let seeds = [401u64, 402, 403];
    let mut two_total = 0.0;
    let mut joint_total = 0.0;
    for &seed in &seeds {
        // Two-stage at the stage defaults: 2000 + 1000 iterations.
        let mut c1 = default_config(seed);
        c1.iterations = Some(2000);
        let mut p1 = Pipeline::build(&c1, Stage::Pos).unwrap();
        let mut o1 = OptimizerState::new(&p1.store);
        train::train_stage1(&mut p1, &mut o1).unwrap();
        let ckpt = p1.checkpoint(None);
        let mut c2 = c1.clone();
        c2.iterations = Some(1000);
        let mut p2 = Pipeline::build(&c2, Stage::Mm).unwrap();
        p2.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
        let mut o2 = OptimizerState::new(&p2.store);
        train::train_stage2(&mut p2, &mut o2).unwrap();
        two_total += eval_miou(&p2, false, false).miou.unwrap();

        // Joint on the same total budget: 3000 iterations end-to-end.
        let mut cj = default_config(seed);
        cj.iterations = Some(3000);
        let mut pj = Pipeline::build(&cj, Stage::Joint).unwrap();
        let mut oj = OptimizerState::new(&pj.store);
        train::train_joint(&mut pj, &mut oj).unwrap();
        joint_total += eval_miou(&pj, false, false).miou.unwrap();
    }
    let two = two_total / seeds.len() as f64;
    let joint = joint_total / seeds.len() as f64;
    verdict(
        "two-stage-vs-joint",
        two >= joint,
        format!("3-seed means at equal 3000-iteration budget: two-stage {two:.4} >= joint {joint:.4}"),
    );
}

// ── Criterion: freeze contracts ─────────────────────────────────────

#[test]
fn freeze_contracts() {
    let mut cfg = default_config(500);
    cfg.iterations = Some(60);
    let mut p1 = Pipeline::build(&cfg, Stage::Pos).unwrap();
    let enc_before = p1.store.subtree_hash("encoder.");
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1).unwrap();
    let stage1_ok = enc_before == p1.store.subtree_hash("encoder.");

    let ckpt = p1.checkpoint(None);
    let mut c2 = cfg.clone();
    c2.iterations = Some(60);
    let mut p2 = Pipeline::build(&c2, Stage::Mm).unwrap();
    p2.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
    let frozen_before = (p2.store.subtree_hash("encoder."), p2.store.subtree_hash("pos."));
    let mut o2 = OptimizerState::new(&p2.store);
    train::train_stage2(&mut p2, &mut o2).unwrap();
    let stage2_ok = frozen_before
        == (p2.store.subtree_hash("encoder."), p2.store.subtree_hash("pos."));

    verdict(
        "freeze-contracts",
        stage1_ok && stage2_ok,
        format!("encoder bit-identical across stage 1: {stage1_ok}; encoder+pos bit-identical across stage 2: {stage2_ok}"),
    );
}

// ── Criterion: k-shot reduction ─────────────────────────────────────

#[test]
fn kshot_reduction() {
    let mut cfg = default_config(600);
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    cfg.proposals = 8;
    let pipeline = Pipeline::build(&cfg, Stage::Mm).unwrap();
    let matcher = pipeline.matcher.as_ref().unwrap();
    let dcfg = cfg.data_config().unwrap();
    let ep = data::sample_episode(12, Split::Test, 1, &dcfg).unwrap();

    let run = |k: usize| -> (Vec<u64>, Vec<f64>) {
        let mut g = Graph::inference();
        let bind = pipeline.store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(&pipeline.store, &ep.query, 64, 64).unwrap();
        let sp = pipeline.encoder.encode(&pipeline.store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = pipeline.seg.propose(&mut g, &bind, &qp).unwrap();
        let supports: Vec<(&maskmatch::encoder::FeaturePyramid, &[f64])> =
            (0..k).map(|_| (&sp, ep.supports[0].1.as_slice())).collect();
        let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &qp, &proposals).unwrap();
        (
            g.data(out.result.blended).iter().map(|v| v.to_bits()).collect(),
            g.data(out.p_support).to_vec(),
        )
    };

    // k = 1 versus the direct match path, bit for bit.
    let (one_bits, one_proto) = run(1);
    let direct_bits = {
        let mut g = Graph::inference();
        let bind = pipeline.store.bind(&mut g).unwrap();
        let qp = pipeline.encoder.encode(&pipeline.store, &ep.query, 64, 64).unwrap();
        let sp = pipeline.encoder.encode(&pipeline.store, &ep.supports[0].0, 64, 64).unwrap();
        let proposals = pipeline.seg.propose(&mut g, &bind, &qp).unwrap();
        let qf = mm::prepare_features(&mut g, &matcher.cfg, &qp).unwrap();
        let sf = mm::prepare_features(&mut g, &matcher.cfg, &sp).unwrap();
        let (qa, sa) = mm::cross_align(&mut g, &bind, matcher, &qf, &sf).unwrap();
        let mv = g.constant(ep.supports[0].1.clone(), &[64, 64]).unwrap();
        let (ps, _) = mm::masked_gap(&mut g, &sa, mv).unwrap();
        let mut pq = Vec::new();
        for p in 0..proposals.n {
            let m = g.slice(proposals.masks, 0, p, 1).unwrap();
            let m2 = g.reshape(m, &[proposals.h, proposals.w]).unwrap();
            let (proto, _) = mm::masked_gap(&mut g, &qa, m2).unwrap();
            pq.push(proto);
        }
        let res = mm::match_proposals(&mut g, &bind, matcher, ps, &pq, &proposals).unwrap();
        g.data(res.blended).iter().map(|v| v.to_bits()).collect::<Vec<u64>>()
    };
    let k1_bitwise = one_bits == direct_bits;

    // Five identical supports equal one.
    let (five_bits, five_proto) = run(5);
    let identical = one_bits == five_bits && one_proto == five_proto;

    verdict(
        "kshot-reduction",
        k1_bitwise && identical,
        format!("k=1 bit-identical to match: {k1_bitwise}; identical-support k=5 equals k=1: {identical}"),
    );
}

// ── Criterion: end-to-end determinism ───────────────────────────────

#[test]
fn determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("acc.toml");
    std::fs::write(
        &cfg_path,
        "image_size = 32\nd_model = 8\nheads = 2\nd_ffn = 16\nproposals = 4\nbatch_size = 2\nepisodes = 12\nseed = 77\n",
    )
    .unwrap();
    let run_all = |tag: &str| {
        let s1 = dir.path().join(format!("{tag}_s1"));
        let s2 = dir.path().join(format!("{tag}_s2"));
        let ev = dir.path().join(format!("{tag}_ev"));
        for (args, expect) in [
            (
                vec![
                    "train-pos".to_string(),
                    "--config".into(),
                    cfg_path.to_str().unwrap().into(),
                    "--iterations".into(),
                    "40".into(),
                    "--out".into(),
                    s1.to_str().unwrap().into(),
                ],
                0,
            ),
            (
                vec![
                    "train-mm".to_string(),
                    "--config".into(),
                    cfg_path.to_str().unwrap().into(),
                    "--stage1".into(),
                    s1.join("stage1.ckpt").to_str().unwrap().into(),
                    "--iterations".into(),
                    "30".into(),
                    "--out".into(),
                    s2.to_str().unwrap().into(),
                ],
                0,
            ),
            (
                vec![
                    "eval".to_string(),
                    "--checkpoint".into(),
                    s2.join("stage2.ckpt").to_str().unwrap().into(),
                    "--oracle".into(),
                    "--baseline".into(),
                    "--out".into(),
                    ev.to_str().unwrap().into(),
                ],
                0,
            ),
        ] {
            let mut full = vec!["maskmatch".to_string()];
            full.extend(args);
            assert_eq!(maskmatch::cli::run(&full), expect, "command failed: {full:?}");
        }
        (s1, s2, ev)
    };
    let (a1, a2, ae) = run_all("a");
    let (b1, b2, be) = run_all("b");
    let mut identical = true;
    for (x, y) in [
        (a1.join("stage1.ckpt"), b1.join("stage1.ckpt")),
        (a1.join("stage1_loss.csv"), b1.join("stage1_loss.csv")),
        (a2.join("stage2.ckpt"), b2.join("stage2.ckpt")),
        (a2.join("stage2_loss.csv"), b2.join("stage2_loss.csv")),
        (ae.join("report.txt"), be.join("report.txt")),
        (ae.join("report.json"), be.join("report.json")),
        (ae.join("per_episode.csv"), be.join("per_episode.csv")),
    ] {
        identical &= std::fs::read(&x).unwrap() == std::fs::read(&y).unwrap();
    }
    verdict(
        "determinism",
        identical,
        "two full train+eval pipeline runs produced byte-identical checkpoints, loss curves, and reports".to_string(),
    );
}
