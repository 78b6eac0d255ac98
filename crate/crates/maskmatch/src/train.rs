//! Two-stage optimization. Stage 1 trains the proposal segmenter with the
//! Hungarian-matched dice loss on multi-object scenes (encoder frozen).
//! Stage 2 freezes encoder + segmenter and trains only the matching
//! module on episodes. A joint mode optimizes everything but the encoder
//! on the full objective, solely for the two-stage-vs-end-to-end
//! comparison.

use std::collections::BTreeMap;

use crate::checkpoint::{Checkpoint, OptRecord, ParamRecord, Stage};
use crate::config::Config;
use crate::data::{self, Split};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::mm::{self, MaskMatcher};
use crate::nn::{ParamId, ParamStore};
use crate::pos::{downsample_mask, pos_loss, ProposalSegmenter};
use crate::rng::{chacha, mix, stream};
use crate::tensor::Graph;

/// Polynomial decay: `base * (1 - step/total)^power`.
pub fn poly_lr(step: u64, total: u64, base: f64, power: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = 1.0 - step as f64 / total as f64;
    base * frac.max(0.0).powf(power)
}

// ── AdamW ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn new(weight_decay: f64) -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// First/second moment buffers for the unfrozen parameters plus the step
/// count.
pub struct OptimizerState {
    pub step: u64,
    pub ids: Vec<ParamId>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    /// Buffers exist only for unfrozen parameters; construct after all
    /// freezing decisions are made.
    pub fn new(store: &ParamStore) -> Self {
        let ids = store.trainable_ids();
        let m = ids.iter().map(|&id| vec![0.0; store.get(id).value().len()]).collect();
        let v = ids.iter().map(|&id| vec![0.0; store.get(id).value().len()]).collect();
        OptimizerState { step: 0, ids, m, v }
    }
}

/// Decoupled-weight-decay AdamW update with bias-corrected moments.
pub fn adamw_step(
    store: &mut ParamStore,
    state: &mut OptimizerState,
    grads: &[Vec<f64>],
    lr: f64,
    hyper: &AdamHyper,
) {
    assert_eq!(grads.len(), state.ids.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (i, &id) in state.ids.iter().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let p = store.value_mut(id);
        for j in 0..p.len() {
            let g = grads[i][j];
            m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * g;
            v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + hyper.weight_decay * p[j]);
        }
    }
}

/// Global-norm gradient clipping; returns the pre-clip norm. Never
/// increases the norm.
pub fn clip_gradients(grads: &mut [Vec<f64>], clip: f64) -> f64 {
    let norm: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if clip > 0.0 && norm > clip {
        let scale = clip / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

// ── Pipeline ────────────────────────────────────────────────────────

/// The assembled model: frozen encoder, proposal segmenter, and (for
/// matching stages) the mask matcher, all backed by one parameter store.
pub struct Pipeline {
    pub store: ParamStore,
    pub encoder: ToyEncoder,
    pub seg: ProposalSegmenter,
    pub matcher: Option<MaskMatcher>,
    pub config: Config,
    pub stage: Stage,
}

impl Pipeline {
    /// Builds a fresh pipeline for `stage` from the config seed. Stage-2
    /// construction freezes the `pos.*` subtree; the encoder is frozen by
    /// construction in every stage.
    pub fn build(config: &Config, stage: Stage) -> Result<Pipeline> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut enc_rng = chacha(mix(config.seed, stream::ENCODER_INIT));
        let encoder = ToyEncoder::new(&mut store, config.d_model, &mut enc_rng);
        let mut pos_rng = chacha(mix(config.seed, stream::POS_INIT));
        let seg = ProposalSegmenter::new(&mut store, config.pos_config(), &mut pos_rng)?;
        let matcher = match stage {
            Stage::Pos => None,
            Stage::Mm | Stage::Joint => {
                let mut mm_rng = chacha(mix(config.seed, stream::MM_INIT));
                Some(MaskMatcher::new(&mut store, config.mm_config(), &mut mm_rng)?)
            }
        };
        if stage == Stage::Mm {
            store.freeze_subtree("pos.");
        }
        Ok(Pipeline { store, encoder, seg, matcher, config: config.clone(), stage })
    }

    /// Copies parameter values from a checkpoint into this pipeline.
    /// Every pipeline parameter starting with one of `required_prefixes`
    /// must be present; other checkpoint entries must still match a known
    /// parameter and shape.
    pub fn load_values(
        &mut self,
        params: &BTreeMap<String, ParamRecord>,
        required_prefixes: &[&str],
    ) -> Result<()> {
        for (name, rec) in params {
            match self.store.id_of(name) {
                Some(id) => {
                    if self.store.get(id).shape() != rec.shape.as_slice() {
                        return Err(Error::Checkpoint(format!(
                            "{name}: checkpoint shape {:?} does not match model shape {:?}",
                            rec.shape,
                            self.store.get(id).shape()
                        )));
                    }
                    self.store.value_mut(id).copy_from_slice(&rec.value);
                }
                None => {
                    return Err(Error::Checkpoint(format!(
                        "{name}: checkpoint parameter not present in this model"
                    )));
                }
            }
        }
        let names: Vec<String> = self.store.iter().map(|e| e.name().to_string()).collect();
        for name in names {
            if required_prefixes.iter().any(|p| name.starts_with(p)) && !params.contains_key(&name) {
                return Err(Error::Checkpoint(format!("{name}: missing from checkpoint")));
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self, opt: Option<&OptimizerState>) -> Checkpoint {
        let mut ckpt = Checkpoint::from_store(
            self.stage,
            self.config.to_toml(),
            self.config.seed,
            &self.store,
        );
        if let Some(state) = opt {
            let mut moments = BTreeMap::new();
            for (i, &id) in state.ids.iter().enumerate() {
                moments.insert(
                    self.store.get(id).name().to_string(),
                    (state.m[i].clone(), state.v[i].clone()),
                );
            }
            ckpt.optimizer = Some(OptRecord { step: state.step, moments });
        }
        ckpt
    }
}

/// Keys that fix the proposal-stack architecture; a stage-1 checkpoint
/// only fits a stage-2 run when these agree.
pub fn check_arch_compat(current: &Config, from_ckpt: &Config) -> Result<()> {
    let pairs: [(&str, String, String); 7] = [
        ("image_size", current.image_size.to_string(), from_ckpt.image_size.to_string()),
        ("d_model", current.d_model.to_string(), from_ckpt.d_model.to_string()),
        ("heads", current.heads.to_string(), from_ckpt.heads.to_string()),
        ("d_ffn", current.d_ffn.to_string(), from_ckpt.d_ffn.to_string()),
        ("proposals", current.proposals.to_string(), from_ckpt.proposals.to_string()),
        ("positional_encoding", current.positional_encoding.clone(), from_ckpt.positional_encoding.clone()),
        ("fold", current.fold.to_string(), from_ckpt.fold.to_string()),
    ];
    for (key, a, b) in pairs {
        if a != b {
            return Err(Error::config(format!(
                "{key}: current value {a} conflicts with checkpoint value {b}"
            )));
        }
    }
    Ok(())
}

// ── Training loops ──────────────────────────────────────────────────

/// Per-iteration loss record; unused components are zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub lp: f64,
    pub lm: f64,
    pub lco: f64,
}

pub struct TrainOutcome {
    pub losses: Vec<f64>,
    pub parts: Vec<LossParts>,
}

fn collect_grads(g: &Graph, bind: &crate::nn::Binding, state: &OptimizerState) -> Vec<Vec<f64>> {
    state
        .ids
        .iter()
        .map(|&id| {
            let var = bind.var(id);
            match g.grad(var) {
                Some(grad) => grad.to_vec(),
                None => vec![0.0; g.tensor(var).numel()],
            }
        })
        .collect()
}

/// Stage 1: dice-supervised proposal training on scenes.
pub fn train_stage1(pipeline: &mut Pipeline, opt: &mut OptimizerState) -> Result<TrainOutcome> {
    let cfg = pipeline.config.clone();
    let dcfg = cfg.data_config()?;
    let total = cfg.iterations_for("pos");
    let hyper = AdamHyper::new(cfg.weight_decay);
    let data_base = mix(cfg.seed, stream::DATA);
    let aug_base = mix(cfg.seed, stream::AUGMENT);
    let mut losses = Vec::with_capacity(total as usize);
    let mut parts = Vec::with_capacity(total as usize);

    for it in 0..total {
        let lr = poly_lr(it, total, cfg.base_lr, cfg.poly_power);
        let mut g = Graph::new();
        let bind = pipeline.store.bind(&mut g)?;
        let mut batch_terms = Vec::new();
        for b in 0..cfg.batch_size {
            let idx = it * cfg.batch_size as u64 + b as u64;
            let mut scene = data::generate_scene(mix(data_base, idx), Split::Train, &dcfg);
            if cfg.augment {
                scene = data::augment_scene(&scene, mix(aug_base, idx));
            }
            let pyr = pipeline.encoder.encode(&pipeline.store, &scene.image, scene.size, scene.size)?;
            let proposals = pipeline.seg.propose(&mut g, &bind, &pyr)?;
            let gts: Vec<Vec<f64>> = scene
                .objects
                .iter()
                .map(|(_, m)| downsample_mask(m, scene.size, 4))
                .filter(|m| m.iter().any(|&v| v > 0.5))
                .collect();
            if gts.is_empty() {
                continue;
            }
            let (term, _) = pos_loss(&mut g, &proposals, &gts)?;
            batch_terms.push(term);
        }
        if batch_terms.is_empty() {
            losses.push(0.0);
            parts.push(LossParts::default());
            continue;
        }
        let mut acc = batch_terms[0];
        for t in &batch_terms[1..] {
            acc = g.add(acc, *t)?;
        }
        let loss = g.scale(acc, 1.0 / batch_terms.len() as f64)?;
        g.backward(loss)?;
        let mut grads = collect_grads(&g, &bind, opt);
        clip_gradients(&mut grads, cfg.grad_clip);
        adamw_step(&mut pipeline.store, opt, &grads, lr, &hyper);
        let lv = g.item(loss);
        losses.push(lv);
        parts.push(LossParts { total: lv, lp: lv, ..Default::default() });
    }
    Ok(TrainOutcome { losses, parts })
}

/// One episode's matching loss inside an existing graph. Returns the
/// total term plus raw (dice, lco) values for bookkeeping.
fn episode_mm_term(
    g: &mut Graph,
    bind: &crate::nn::Binding,
    pipeline: &Pipeline,
    episode: &data::EpisodeSample,
) -> Result<Option<(crate::tensor::Var, f64, f64, Option<(crate::tensor::Var, f64)>)>> {
    let matcher = pipeline.matcher.as_ref().expect("matching stage");
    let size = episode.size;
    let gt_s4 = downsample_mask(&episode.query_gt, size, 4);
    if !gt_s4.iter().any(|&v| v > 0.5) {
        return Ok(None);
    }
    let query_pyr = pipeline.encoder.encode(&pipeline.store, &episode.query, size, size)?;
    let support_pyrs: Vec<_> = episode
        .supports
        .iter()
        .map(|(img, _)| pipeline.encoder.encode(&pipeline.store, img, size, size))
        .collect::<Result<_>>()?;
    let supports: Vec<(&crate::encoder::FeaturePyramid, &[f64])> = support_pyrs
        .iter()
        .zip(&episode.supports)
        .map(|(pyr, (_, mask))| (pyr, mask.as_slice()))
        .collect();

    let proposals = pipeline.seg.propose(g, bind, &query_pyr)?;
    let ep = mm::kshot_match(g, bind, matcher, &supports, &query_pyr, &proposals)?;
    let ious = mm::proposal_ious(
        g.data(proposals.masks),
        proposals.n,
        proposals.h * proposals.w,
        &gt_s4,
    );
    let loss = mm::mm_loss(g, &matcher.cfg, &ep.result, &gt_s4, &ious)?;

    // Joint mode also supervises the proposals on the query scene.
    let lp = if pipeline.stage == Stage::Joint {
        let gts: Vec<Vec<f64>> = episode
            .query_objects
            .iter()
            .map(|(_, m)| downsample_mask(m, size, 4))
            .filter(|m| m.iter().any(|&v| v > 0.5))
            .collect();
        if gts.is_empty() {
            None
        } else {
            let (lp, _) = pos_loss(g, &proposals, &gts)?;
            let lp_val = g.item(lp);
            Some((lp, lp_val))
        }
    } else {
        None
    };
    Ok(Some((loss.total, g.item(loss.lm), g.item(loss.lco), lp)))
}

fn train_matching(pipeline: &mut Pipeline, opt: &mut OptimizerState, stage_name: &str) -> Result<TrainOutcome> {
    let cfg = pipeline.config.clone();
    let dcfg = cfg.data_config()?;
    let total = cfg.iterations_for(stage_name);
    let hyper = AdamHyper::new(cfg.weight_decay);
    // A separate data stream from stage 1, so two-stage runs do not replay
    // the proposal-training scenes.
    let data_base = mix(cfg.seed, mix(stream::DATA, 2));
    let aug_base = mix(cfg.seed, mix(stream::AUGMENT, 2));
    let mut losses = Vec::with_capacity(total as usize);
    let mut parts = Vec::with_capacity(total as usize);

    for it in 0..total {
        let lr = poly_lr(it, total, cfg.base_lr, cfg.poly_power);
        let mut g = Graph::new();
        let bind = pipeline.store.bind(&mut g)?;
        let mut terms = Vec::new();
        let mut part = LossParts::default();
        for b in 0..cfg.batch_size {
            let idx = it * cfg.batch_size as u64 + b as u64;
            let mut ep = data::sample_episode(mix(data_base, idx), Split::Train, cfg.shots, &dcfg)?;
            if cfg.augment {
                ep = data::augment(&ep, mix(aug_base, idx));
            }
            if let Some((term, dice, lco, lp)) = episode_mm_term(&mut g, &bind, pipeline, &ep)? {
                let full = match lp {
                    Some((lp_var, lp_val)) => {
                        part.lp += lp_val;
                        g.add(term, lp_var)?
                    }
                    None => term,
                };
                part.lm += dice;
                part.lco += lco;
                terms.push(full);
            }
        }
        if terms.is_empty() {
            losses.push(0.0);
            parts.push(LossParts::default());
            continue;
        }
        let inv = 1.0 / terms.len() as f64;
        let mut acc = terms[0];
        for t in &terms[1..] {
            acc = g.add(acc, *t)?;
        }
        let loss = g.scale(acc, inv)?;
        g.backward(loss)?;
        let mut grads = collect_grads(&g, &bind, opt);
        clip_gradients(&mut grads, cfg.grad_clip);
        adamw_step(&mut pipeline.store, opt, &grads, lr, &hyper);
        let lv = g.item(loss);
        part.total = lv;
        part.lp *= inv;
        part.lm *= inv;
        part.lco *= inv;
        losses.push(lv);
        parts.push(part);
    }
    Ok(TrainOutcome { losses, parts })
}

/// Stage 2: matching-module training with encoder and segmenter frozen.
pub fn train_stage2(pipeline: &mut Pipeline, opt: &mut OptimizerState) -> Result<TrainOutcome> {
    train_matching(pipeline, opt, "mm")
}

/// End-to-end training of segmenter + matcher on the full objective,
/// for the two-stage-vs-joint comparison.
pub fn train_joint(pipeline: &mut Pipeline, opt: &mut OptimizerState) -> Result<TrainOutcome> {
    train_matching(pipeline, opt, "joint")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> Config {
        let mut c = Config::default();
        c.image_size = 32;
        c.d_model = 8;
        c.heads = 2;
        c.d_ffn = 16;
        c.proposals = 4;
        c.batch_size = 2;
        c.seed = seed;
        c.base_lr = 2e-3;
        c.episodes = 8;
        c
    }

    // ── poly schedule ───────────────────────────────────────────────

    #[test]
    fn poly_schedule_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0, 100, 1e-4, 0.9), 1e-4);
        assert_eq!(poly_lr(100, 100, 1e-4, 0.9), 0.0);
        let mid = poly_lr(50, 100, 1e-4, 0.9);
        assert!((mid - 1e-4 * 0.5f64.powf(0.9)).abs() < 1e-18);
    }

    // ── AdamW oracles ───────────────────────────────────────────────

    #[test]
    fn zero_gradient_without_decay_leaves_parameters_unchanged() {
        let mut store = ParamStore::new();
        let id = store.register("p", &[3], vec![1.0, -2.0, 0.5]);
        let mut state = OptimizerState::new(&store);
        let before = store.get(id).value().to_vec();
        adamw_step(&mut store, &mut state, &[vec![0.0; 3]], 1e-3, &AdamHyper::new(0.0));
        assert_eq!(store.get(id).value(), before.as_slice());
    }

    #[test]
    fn zero_gradient_with_decay_shrinks_by_the_decoupled_factor() {
        let mut store = ParamStore::new();
        let id = store.register("p", &[2], vec![2.0, -4.0]);
        let mut state = OptimizerState::new(&store);
        let lr = 1e-2;
        let wd = 5e-2;
        adamw_step(&mut store, &mut state, &[vec![0.0; 2]], lr, &AdamHyper::new(wd));
        let factor = 1.0 - lr * wd;
        assert!((store.get(id).value()[0] - 2.0 * factor).abs() < 1e-15);
        assert!((store.get(id).value()[1] + 4.0 * factor).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_a_hand_rolled_oracle() {
        let mut store = ParamStore::new();
        let id = store.register("p", &[1], vec![1.0]);
        let mut state = OptimizerState::new(&store);
        let hyper = AdamHyper::new(0.01);
        let lr = 0.1;
        let grad = 0.5;
        for _ in 0..3 {
            adamw_step(&mut store, &mut state, &[vec![grad]], lr, &hyper);
        }
        // Independent step-by-step oracle.
        let (b1, b2, eps, wd) = (0.9, 0.999, 1e-8, 0.01);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            m = b1 * m + (1.0 - b1) * grad;
            v = b2 * v + (1.0 - b2) * grad * grad;
            let mh = m / (1.0 - b1f64(t, b1));
            let vh = v / (1.0 - b1f64(t, b2));
            p -= lr * (mh / (vh.sqrt() + eps) + wd * p);
        }
        assert!((store.get(id).value()[0] - p).abs() < 1e-12, "{} vs {p}", store.get(id).value()[0]);
    }

    fn b1f64(t: usize, b: f64) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn optimizer_buffers_exist_only_for_unfrozen_parameters() {
        let mut store = ParamStore::new();
        store.register("enc.w", &[2], vec![0.0; 2]);
        store.register("head.w", &[2], vec![0.0; 2]);
        store.freeze_subtree("enc.");
        let state = OptimizerState::new(&store);
        assert_eq!(state.ids.len(), 1);
        assert_eq!(store.get(state.ids[0]).name(), "head.w");
    }

    #[test]
    fn clipping_never_increases_the_norm() {
        let mut rng = crate::rng::chacha(3);
        use rand::Rng;
        for _ in 0..20 {
            let mut grads = vec![(0..5).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<f64>>()];
            let clip = rng.gen_range(0.1..5.0);
            let before = clip_gradients(&mut [grads[0].clone()], 0.0);
            let after_applied = clip_gradients(&mut grads, clip);
            let after: f64 = grads[0].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((after_applied - before).abs() < 1e-12);
            assert!(after <= before + 1e-12);
            assert!(after <= clip + 1e-9);
        }
    }

    // ── Stage smoke runs ────────────────────────────────────────────

    fn probe_pos_loss(pipeline: &Pipeline, seeds: &[u64]) -> f64 {
        let dcfg = pipeline.config.data_config().unwrap();
        let mut total = 0.0;
        for &s in seeds {
            let scene = data::generate_scene(s, Split::Train, &dcfg);
            let pyr = pipeline
                .encoder
                .encode(&pipeline.store, &scene.image, scene.size, scene.size)
                .unwrap();
            let mut g = Graph::inference();
            let bind = pipeline.store.bind(&mut g).unwrap();
            let proposals = pipeline.seg.propose(&mut g, &bind, &pyr).unwrap();
            let gts: Vec<Vec<f64>> = scene
                .objects
                .iter()
                .map(|(_, m)| downsample_mask(m, scene.size, 4))
                .filter(|m| m.iter().any(|&v| v > 0.5))
                .collect();
            let (loss, _) = pos_loss(&mut g, &proposals, &gts).unwrap();
            total += g.item(loss);
        }
        total / seeds.len() as f64
    }

    #[test]
    fn stage1_freezes_encoder_improves_loss_and_is_deterministic() {
        let mut cfg = tiny_config(7);
        cfg.iterations = Some(40);
        let run = || {
            let mut p = Pipeline::build(&cfg, Stage::Pos).unwrap();
            let enc_before = p.store.subtree_hash("encoder.");
            let before = probe_pos_loss(&p, &[1000, 1001, 1002]);
            let mut opt = OptimizerState::new(&p.store);
            train_stage1(&mut p, &mut opt).unwrap();
            let after = probe_pos_loss(&p, &[1000, 1001, 1002]);
            assert_eq!(enc_before, p.store.subtree_hash("encoder."), "encoder must stay frozen");
            assert!(after < before, "probe loss should improve: {before} -> {after}");
            p.store.subtree_hash("")
        };
        assert_eq!(run(), run(), "same seed must give bit-identical parameters");
    }

    #[test]
    fn zero_iterations_keeps_initialization() {
        let mut cfg = tiny_config(8);
        cfg.iterations = Some(0);
        let mut p = Pipeline::build(&cfg, Stage::Pos).unwrap();
        let before = p.store.subtree_hash("");
        let mut opt = OptimizerState::new(&p.store);
        let out = train_stage1(&mut p, &mut opt).unwrap();
        assert!(out.losses.is_empty());
        assert_eq!(before, p.store.subtree_hash(""));
    }

    fn probe_mm_loss(pipeline: &Pipeline, seeds: &[u64]) -> f64 {
        let dcfg = pipeline.config.data_config().unwrap();
        let mut total = 0.0;
        for &s in seeds {
            let ep = data::sample_episode(s, Split::Train, pipeline.config.shots, &dcfg).unwrap();
            let mut g = Graph::inference();
            let bind = pipeline.store.bind(&mut g).unwrap();
            let (term, ..) = episode_mm_term(&mut g, &bind, pipeline, &ep).unwrap().unwrap();
            total += g.item(term);
        }
        total / seeds.len() as f64
    }

    #[test]
    fn stage2_freezes_pos_and_improves_matching_loss() {
        let mut cfg = tiny_config(9);
        // 64x64 keeps the pooled attention keys above a single row, so the
        // matching module has signal to improve on.
        cfg.image_size = 64;
        cfg.iterations = Some(60);
        let mut p1 = Pipeline::build(&cfg, Stage::Pos).unwrap();
        let mut opt1 = OptimizerState::new(&p1.store);
        train_stage1(&mut p1, &mut opt1).unwrap();
        let ckpt = p1.checkpoint(None);

        let mut cfg2 = cfg.clone();
        cfg2.iterations = Some(120);
        let mut p2 = Pipeline::build(&cfg2, Stage::Mm).unwrap();
        p2.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
        let pos_hash = p2.store.subtree_hash("pos.");
        let enc_hash = p2.store.subtree_hash("encoder.");
        let probe_seeds = [5000, 5001, 5002, 5003];
        let before = probe_mm_loss(&p2, &probe_seeds);
        let mut opt2 = OptimizerState::new(&p2.store);
        assert!(opt2
            .ids
            .iter()
            .all(|&id| p2.store.get(id).name().starts_with("mm.")));
        train_stage2(&mut p2, &mut opt2).unwrap();
        let after = probe_mm_loss(&p2, &probe_seeds);
        assert_eq!(pos_hash, p2.store.subtree_hash("pos."), "pos must stay frozen in stage 2");
        assert_eq!(enc_hash, p2.store.subtree_hash("encoder."));
        assert!(after < before, "probe matching loss should improve: {before} -> {after}");
    }

    #[test]
    fn joint_loss_decomposes_and_reduces_to_lp_when_lambdas_vanish() {
        let mut cfg = tiny_config(10);
        cfg.iterations = Some(3);
        let mut p = Pipeline::build(&cfg, Stage::Joint).unwrap();
        let mut opt = OptimizerState::new(&p.store);
        let out = train_joint(&mut p, &mut opt).unwrap();
        for part in &out.parts {
            let recomposed = part.lp + cfg.lambda1 * part.lm + cfg.lambda2 * part.lco;
            assert!(
                (recomposed - part.total).abs() < 1e-9,
                "components must sum to the total: {recomposed} vs {}",
                part.total
            );
        }

        let mut cfg0 = tiny_config(10);
        cfg0.iterations = Some(3);
        cfg0.lambda1 = 0.0;
        cfg0.lambda2 = 0.0;
        let mut p0 = Pipeline::build(&cfg0, Stage::Joint).unwrap();
        let mut opt0 = OptimizerState::new(&p0.store);
        let out0 = train_joint(&mut p0, &mut opt0).unwrap();
        // With both lambdas zero the recorded total is exactly the lp part.
        assert!((out0.parts[0].total - out0.parts[0].lp).abs() < 1e-15);
    }

    #[test]
    fn stage2_accepts_one_checkpoint_for_different_shot_counts() {
        let mut cfg = tiny_config(11);
        cfg.iterations = Some(10);
        let mut p1 = Pipeline::build(&cfg, Stage::Pos).unwrap();
        let mut opt1 = OptimizerState::new(&p1.store);
        train_stage1(&mut p1, &mut opt1).unwrap();
        let ckpt = p1.checkpoint(None);
        for shots in [1usize, 5] {
            let mut c = cfg.clone();
            c.shots = shots;
            c.iterations = Some(2);
            check_arch_compat(&c, &ckpt.config().unwrap()).unwrap();
            let mut p = Pipeline::build(&c, Stage::Mm).unwrap();
            p.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
            let mut opt = OptimizerState::new(&p.store);
            train_stage2(&mut p, &mut opt).unwrap();
        }
    }

    #[test]
    fn arch_compat_names_the_conflicting_key() {
        let a = tiny_config(1);
        let mut b = tiny_config(1);
        b.proposals = 9;
        let err = check_arch_compat(&a, &b).unwrap_err();
        assert!(err.to_string().contains("proposals"), "{err}");
    }
}
