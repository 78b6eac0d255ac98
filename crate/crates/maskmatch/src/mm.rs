//! Mask matching: self-alignment, weight-shared cross-alignment,
//! masked-GAP prototypes, cosine similarity, and the learnable matching
//! head that blends the N proposals into the final mask. Also the
//! stage-2 losses (blended-mask dice plus the contrastive alignment
//! term on min-max-normalized similarities).

use rand::Rng;

use crate::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{
    scaled_dot_attention, sine_positions, Binding, LayerNorm, Mlp, MultiHeadAttention, ParamStore,
};
use crate::pos::{dice_loss, PosEncoding, ProposalSet};
use crate::tensor::{Graph, Var};

pub const GAP_EPS: f64 = 1e-7;
pub const MINMAX_EPS: f64 = 1e-7;
pub const LOG_CLAMP: f64 = 1e-7;
/// Initial slope of the matching MLP over normalized similarities.
pub const MATCH_GAIN: f64 = 3.0;
/// Slope of the soft-binarization ramp inside the mask loss.
pub const RAMP_STEEPNESS: f64 = 4.0;

/// Cross-alignment flavor: off, learned, or the non-parametric ablation
/// variant (identity-projection attention with a residual add).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaMode {
    Off,
    Learned,
    NonParametric,
}

/// How the matching head turns MLP outputs into blend weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blend {
    /// Softmax-normalized: a convex combination, blended mask stays in [0,1].
    Softmax,
    /// Raw MLP outputs, for ablation.
    Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct MmConfig {
    pub sa: bool,
    pub ca: CaMode,
    pub lm: bool,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    /// Cross-alignment layers stacked per pyramid level.
    pub ca_layers: usize,
    pub n_proposals: usize,
    pub blend: Blend,
    pub lambda1: f64,
    pub lambda2: f64,
    pub pos_encoding: PosEncoding,
}

impl MmConfig {
    /// True when the configuration contains anything trainable.
    pub fn has_learnable_params(&self) -> bool {
        self.lm || self.ca == CaMode::Learned
    }
}

/// One cross-alignment layer: pre-norm cross-attention into the pooled
/// counterpart features, then a feed-forward, then a terminal norm. The
/// same layer (same parameters) serves both the support and the query
/// direction.
pub struct CrossAlignLayer {
    pub attn: MultiHeadAttention,
    pub ffn: Mlp,
    pub ln1: LayerNorm,
    pub ln2: LayerNorm,
    pub ln_out: LayerNorm,
}

impl CrossAlignLayer {
    /// Projections start at identity plus small noise and the FFN output
    /// layer at zero, so an untrained layer already performs plain
    /// cross-attention mixing (the non-parametric block's behavior) and
    /// the short desk-scale schedule only has to refine it.
    fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        d_ffn: usize,
        rng: &mut R,
    ) -> crate::tensor::Result<Self> {
        let attn = MultiHeadAttention::new(store, &format!("{name}.attn"), d, heads, rng)?;
        for proj in [&attn.wq, &attn.wk, &attn.wv, &attn.wo] {
            let w = store.value_mut(proj.w);
            for v in w.iter_mut() {
                *v *= 0.1;
            }
            for i in 0..d {
                w[i * d + i] += 1.0;
            }
        }
        let ffn = Mlp::new(store, &format!("{name}.ffn"), &[d, d_ffn, d], rng);
        let last = ffn.layers.last().expect("ffn layers");
        store.value_mut(last.w).iter_mut().for_each(|v| *v = 0.0);
        Ok(CrossAlignLayer {
            attn,
            ffn,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
            ln_out: LayerNorm::new(store, &format!("{name}.ln_out"), d),
        })
    }

    fn forward(
        &self,
        g: &mut Graph,
        bind: &Binding,
        x: Var,
        kv: Var,
        kv_pos: Option<Var>,
    ) -> crate::tensor::Result<Var> {
        let h = self.ln1.forward(g, bind, x)?;
        let keys = match kv_pos {
            Some(p) => g.add(kv, p)?,
            None => kv,
        };
        let attended = self.attn.forward(g, bind, h, keys, kv)?;
        let x = g.add(x, attended)?;
        let h = self.ln2.forward(g, bind, x)?;
        let ff = self.ffn.forward(g, bind, h)?;
        let x = g.add(x, ff)?;
        self.ln_out.forward(g, bind, x)
    }
}

/// Matching module parameters: per-level cross-alignment stacks (levels
/// 3, 4, 5) and the matching MLP (N -> 2N -> N).
pub struct MaskMatcher {
    pub ca_levels: Vec<Vec<CrossAlignLayer>>,
    pub match_mlp: Option<Mlp>,
    pub cfg: MmConfig,
}

impl MaskMatcher {
    /// Registers parameters under `mm.*`. Only the blocks the config
    /// enables get parameters.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: MmConfig, rng: &mut R) -> Result<Self> {
        let mut ca_levels = Vec::new();
        if cfg.ca == CaMode::Learned {
            for level in [3usize, 4, 5] {
                let stack = (0..cfg.ca_layers)
                    .map(|j| {
                        CrossAlignLayer::new(
                            store,
                            &format!("mm.ca.level{level}.layer{j}"),
                            cfg.d_model,
                            cfg.heads,
                            cfg.d_ffn,
                            rng,
                        )
                    })
                    .collect::<crate::tensor::Result<Vec<_>>>()?;
                ca_levels.push(stack);
            }
        }
        let match_mlp = if cfg.lm {
            let n = cfg.n_proposals;
            // Bias-free: raw cosine vectors sit in a narrow band
            // (spread ~0.03 on unaligned features), so any
            // input-independent path lets the head collapse onto an
            // unconditional "always this proposal" policy fitted to the
            // training classes. With centered inputs (see
            // `match_proposals`) and no biases, every logit must read S.
            let mlp = Mlp::with_bias(store, "mm.match", &[n, 2 * n, n], false, rng);
            // Amplified-identity start: the two layers compose to
            // MATCH_GAIN * S (relu(x) - relu(-x) = x), so blend weights
            // begin as a sharpened softmax over the cosine similarities
            // rather than a uniform mush the optimizer cannot escape at
            // desk-scale iteration budgets. Xavier noise (scaled down)
            // stays in for symmetry breaking.
            let g = MATCH_GAIN.sqrt();
            {
                let w1 = store.value_mut(mlp.layers[0].w);
                for v in w1.iter_mut() {
                    *v *= 0.1;
                }
                for i in 0..n {
                    w1[i * 2 * n + i] += g;
                    w1[i * 2 * n + n + i] -= g;
                }
            }
            {
                let w2 = store.value_mut(mlp.layers[1].w);
                for v in w2.iter_mut() {
                    *v *= 0.1;
                }
                for i in 0..n {
                    w2[i * n + i] += g;
                    w2[(n + i) * n + i] -= g;
                }
            }
            Some(mlp)
        } else {
            None
        };
        Ok(MaskMatcher { ca_levels, match_mlp, cfg })
    }
}

// ── Self-alignment ──────────────────────────────────────────────────

/// Non-parametric channel reweighting: `F_avg` = channel mean (1 x hw),
/// `A = F F_avg^T` (c x 1), output `A` broadcast-multiplied with `F`.
pub fn self_align(g: &mut Graph, f: Var) -> crate::tensor::Result<Var> {
    let f_avg = g.mean_keepdim(f, 0)?;
    let f_avg_t = g.transpose(f_avg)?;
    let a = g.matmul(f, f_avg_t)?;
    g.mul(f, a)
}

// ── Feature preparation ─────────────────────────────────────────────

/// One pyramid level in sequence layout plus its spatial extent.
#[derive(Clone, Copy)]
pub struct LevelSeq {
    pub seq: Var,
    pub h: usize,
    pub w: usize,
}

/// Levels 3..5 of one image as (optionally self-aligned) sequences, plus
/// the stride-32-pooled variants used as attention keys/values.
pub struct PreparedFeatures {
    pub levels: Vec<LevelSeq>,
    pub pooled: Vec<LevelSeq>,
}

/// Applies SA (when enabled) and lays each level out as [hw, d] rows.
pub fn prepare_features(
    g: &mut Graph,
    cfg: &MmConfig,
    pyramid: &FeaturePyramid,
) -> Result<PreparedFeatures> {
    let d = cfg.d_model;
    let base_h = pyramid.level(5).h;
    let mut levels = Vec::with_capacity(3);
    let mut pooled = Vec::with_capacity(3);
    for level in [3usize, 4, 5] {
        let lm = pyramid.level(level);
        let feat = lm.to_var(g)?;
        let mut chans = g.reshape(feat, &[d, lm.h * lm.w])?;
        if cfg.sa {
            chans = self_align(g, chans)?;
        }
        let seq = g.transpose(chans)?;
        levels.push(LevelSeq { seq, h: lm.h, w: lm.w });

        // Keys/values are average-pooled to the stride-32 spatial size.
        let factor = lm.h / base_h;
        let grid = g.reshape(chans, &[d, lm.h, lm.w])?;
        let small = g.avg_pool2(grid, factor)?;
        let small_flat = g.reshape(small, &[d, base_h * (lm.w / factor)])?;
        let small_seq = g.transpose(small_flat)?;
        pooled.push(LevelSeq { seq: small_seq, h: base_h, w: lm.w / factor });
    }
    Ok(PreparedFeatures { levels, pooled })
}

/// Cross-aligns query and support features level by level. The two
/// directions run in parallel through the same parameter tensors; each
/// attends to the other's stride-32-pooled features.
pub fn cross_align(
    g: &mut Graph,
    bind: &Binding,
    matcher: &MaskMatcher,
    query: &PreparedFeatures,
    support: &PreparedFeatures,
) -> Result<(Vec<LevelSeq>, Vec<LevelSeq>)> {
    let cfg = &matcher.cfg;
    let mut q_out = Vec::with_capacity(3);
    let mut s_out = Vec::with_capacity(3);
    for i in 0..3 {
        let (mut q, mut s) = (query.levels[i], support.levels[i]);
        let kv_q = query.pooled[i];
        let kv_s = support.pooled[i];
        match cfg.ca {
            CaMode::Off => {}
            CaMode::NonParametric => {
                // Literal parameter-free reading of the block: attention
                // replaces the features outright (no learned projections,
                // no MLP, nothing to blend back through).
                let (aq, _) = scaled_dot_attention(g, q.seq, kv_s.seq, kv_s.seq, cfg.heads)?;
                q.seq = aq;
                let (as_, _) = scaled_dot_attention(g, s.seq, kv_q.seq, kv_q.seq, cfg.heads)?;
                s.seq = as_;
            }
            CaMode::Learned => {
                let pe = match cfg.pos_encoding {
                    PosEncoding::Off => None,
                    PosEncoding::Sine => {
                        let len = kv_q.h * kv_q.w;
                        Some(g.constant(sine_positions(len, cfg.d_model), &[len, cfg.d_model])?)
                    }
                };
                for layer in &matcher.ca_levels[i] {
                    let new_q = layer.forward(g, bind, q.seq, kv_s.seq, pe)?;
                    let new_s = layer.forward(g, bind, s.seq, kv_q.seq, pe)?;
                    q.seq = new_q;
                    s.seq = new_s;
                }
            }
        }
        q_out.push(q);
        s_out.push(s);
    }
    Ok((q_out, s_out))
}

// ── Prototypes ──────────────────────────────────────────────────────

/// Masked global average pooling over each level, concatenated into a
/// [1, 3d] prototype. The mask (any resolution) is bilinearly resized to
/// each level. Returns the prototype and a flag set when the mask
/// vanished at some level (the epsilon then yields a zero part).
pub fn masked_gap(g: &mut Graph, levels: &[LevelSeq], mask: Var) -> Result<(Var, bool)> {
    let mut parts = Vec::with_capacity(levels.len());
    let mut vanished = false;
    for lvl in levels {
        let m = g.resize_bilinear(mask, lvl.h, lvl.w)?;
        let row = g.reshape(m, &[1, lvl.h * lvl.w])?;
        let num = g.matmul(row, lvl.seq)?;
        let den = g.sum_keepdim(row, 1)?;
        if g.item(den) == 0.0 {
            vanished = true;
        }
        let den = g.add_scalar(den, GAP_EPS)?;
        parts.push(g.div(num, den)?);
    }
    Ok((g.concat(&parts, 1)?, vanished))
}

/// Cosine similarity between two [1, D] rows; zero-norm inputs yield an
/// exact 0 with the flag set.
pub fn cosine(g: &mut Graph, a: Var, b: Var) -> Result<(Var, bool)> {
    let aa = g.mul(a, a)?;
    let na2 = g.sum_keepdim(aa, 1)?;
    let bb = g.mul(b, b)?;
    let nb2 = g.sum_keepdim(bb, 1)?;
    if g.item(na2) == 0.0 || g.item(nb2) == 0.0 {
        return Ok((g.constant(vec![0.0], &[1, 1])?, true));
    }
    let bt = g.transpose(b)?;
    let dot = g.matmul(a, bt)?;
    let n2 = g.mul(na2, nb2)?;
    let norm = g.sqrt(n2)?;
    Ok((g.div(dot, norm)?, false))
}

/// Min-max normalization into [0, 1] with an epsilon-guarded denominator.
pub fn minmax_norm(g: &mut Graph, s: Var) -> crate::tensor::Result<Var> {
    let mn = g.min_keepdim(s, 1)?;
    let mx = g.max_keepdim(s, 1)?;
    let num = g.sub(s, mn)?;
    let range = g.sub(mx, mn)?;
    let den = g.add_scalar(range, MINMAX_EPS)?;
    g.div(num, den)
}

/// Convex (or raw, for ablation) blend of N stride-4 masks.
pub fn blend_masks(g: &mut Graph, weights: Var, masks: Var, n: usize, h: usize, w: usize) -> crate::tensor::Result<Var> {
    let flat = g.reshape(masks, &[n, h * w])?;
    let mixed = g.matmul(weights, flat)?;
    g.reshape(mixed, &[h, w])
}

/// Similarity vector, normalized similarities, blend weights, and the
/// blended prediction for one episode.
pub struct MatchResult {
    pub s: Var,
    pub s_hat: Var,
    pub weights: Option<Var>,
    pub blended: Var,
    /// Index of the argmax-similarity proposal (the heuristic choice and
    /// the prediction when the learnable matcher is off).
    pub selected: usize,
    pub zero_norm_flags: Vec<bool>,
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn argmin_tie_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Cosine-matches the support prototype against the N query prototypes
/// and blends the proposals. With the learnable matcher off this reduces
/// to heuristic argmax selection.
pub fn match_proposals(
    g: &mut Graph,
    bind: &Binding,
    matcher: &MaskMatcher,
    p_support: Var,
    p_query: &[Var],
    proposals: &ProposalSet,
) -> Result<MatchResult> {
    if p_query.is_empty() {
        return Err(Error::config("match: no query prototypes"));
    }
    let mut parts = Vec::with_capacity(p_query.len());
    let mut flags = Vec::with_capacity(p_query.len());
    for &pq in p_query {
        let (c, flag) = cosine(g, p_support, pq)?;
        parts.push(c);
        flags.push(flag);
    }
    let s = g.concat(&parts, 1)?;
    let s_hat = minmax_norm(g, s)?;
    let selected = argmax_tie_low(g.data(s));

    let (weights, blended) = match &matcher.match_mlp {
        Some(mlp) if matcher.cfg.lm => {
            // The head reads the min-max-normalized similarities, centered.
            // Normalized input keeps the head's operating range fixed: the
            // stage-2 objectives are scale-free in S, so the absolute
            // cosine spread drifts during training, while the [0,1]
            // ranking does not. Centering removes the constant component
            // (the shortcut a nearly-flat S would otherwise hand to any
            // input-independent path).
            let s_mean = g.mean_keepdim(s_hat, 1)?;
            let centered = g.sub(s_hat, s_mean)?;
            let raw = mlp.forward(g, bind, centered)?;
            let w = match matcher.cfg.blend {
                Blend::Softmax => g.softmax(raw, 1)?,
                Blend::Linear => raw,
            };
            let b = blend_masks(g, w, proposals.masks, proposals.n, proposals.h, proposals.w)?;
            (Some(w), b)
        }
        _ => {
            let m = g.slice(proposals.masks, 0, selected, 1)?;
            (None, g.reshape(m, &[proposals.h, proposals.w])?)
        }
    };
    Ok(MatchResult { s, s_hat, weights, blended, selected, zero_norm_flags: flags })
}

/// The paper's baseline: the proposal with the highest cosine similarity.
pub fn heuristic_match(
    g: &mut Graph,
    p_support: Var,
    p_query: &[Var],
    proposals: &ProposalSet,
) -> Result<(Var, usize)> {
    let mut sims = Vec::with_capacity(p_query.len());
    for &pq in p_query {
        let (c, _) = cosine(g, p_support, pq)?;
        sims.push(g.item(c));
    }
    let selected = argmax_tie_low(&sims);
    let m = g.slice(proposals.masks, 0, selected, 1)?;
    Ok((g.reshape(m, &[proposals.h, proposals.w])?, selected))
}

// ── Losses ──────────────────────────────────────────────────────────

/// Contrastive alignment loss over min-max-normalized similarities:
/// `-(log S_pos + log(1 - S_neg)) / 2`, positive/negative chosen by the
/// best/worst proposal IoU. Inputs to the logs are clamped to >= 1e-7.
pub fn contrastive_loss(g: &mut Graph, s_hat: Var, ious: &[f64]) -> Result<(Var, bool)> {
    let n = g.shape(s_hat)[1];
    if n < 2 || ious.len() != n {
        return Err(Error::config(format!(
            "contrastive_loss: need at least 2 proposals with matching ious, got n={n}, ious={}",
            ious.len()
        )));
    }
    let pos = argmax_tie_low(ious);
    let neg = argmin_tie_low(ious);
    let degenerate = pos == neg;

    // Lower clamp only: min-max keeps both quantities <= 1 already, and an
    // upper clamp would sit exactly on its boundary whenever the negative
    // pick coincides with the similarity minimum.
    let sp = g.slice(s_hat, 1, pos, 1)?;
    let sp = g.clamp(sp, LOG_CLAMP, f64::MAX)?;
    let lp = g.log(sp)?;
    let sn = g.slice(s_hat, 1, neg, 1)?;
    let one_minus = g.rsub_scalar(sn, 1.0)?;
    let one_minus = g.clamp(one_minus, LOG_CLAMP, f64::MAX)?;
    let ln = g.log(one_minus)?;
    let sum = g.add(lp, ln)?;
    let loss = g.scale(sum, -0.5)?;
    Ok((g.reshape(loss, &[])?, degenerate))
}

/// IoU of each proposal (binarized at 0.5) against the stride-4 ground
/// truth; the selection signal for the contrastive loss — not a gradient
/// path.
pub fn proposal_ious(mask_data: &[f64], n: usize, hw: usize, gt: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|p| {
            let m = &mask_data[p * hw..(p + 1) * hw];
            let mut inter = 0usize;
            let mut union = 0usize;
            for (a, b) in m.iter().zip(gt) {
                let pa = *a >= 0.5;
                let pb = *b >= 0.5;
                if pa && pb {
                    inter += 1;
                }
                if pa || pb {
                    union += 1;
                }
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect()
}

/// Stage-2 objective and its raw components.
pub struct MmLoss {
    /// `lambda1 * lm + lambda2 * lco`.
    pub total: Var,
    /// Unscaled mask term: dice of the (clamped) blend plus the
    /// out-of-range penalty.
    pub lm: Var,
    /// Unscaled dice alone.
    pub dice: Var,
    /// Unscaled contrastive term.
    pub lco: Var,
    /// True when argmax(IoU) == argmin(IoU).
    pub degenerate: bool,
}

/// Stage-2 objective: `lambda1 * dice(blended, gt) + lambda2 * L_co`,
/// with the proposal IoUs (the L_co selection signal) supplied by the
/// caller. The proposal-matching loss L_P is absent here: stage 2 runs
/// with the proposal stack frozen.
pub fn mm_loss(
    g: &mut Graph,
    cfg: &MmConfig,
    result: &MatchResult,
    query_gt_s4: &[f64],
    ious: &[f64],
) -> Result<MmLoss> {
    let (h, w) = {
        let s = g.shape(result.blended);
        (s[0], s[1])
    };
    if query_gt_s4.len() != h * w {
        return Err(Error::config(format!(
            "mm_loss: ground truth has {} values, expected {}",
            query_gt_s4.len(),
            h * w
        )));
    }
    let gt = g.constant(query_gt_s4.to_vec(), &[h, w])?;
    // Dice is computed through a steep ramp centered on the binarization
    // threshold: binary masks map to themselves (so a perfect prediction
    // still scores exactly zero), while sub-threshold hedging mass — which
    // plain soft dice happily accumulates and the 0.5 binarization then
    // punishes — contributes nothing. A quadratic penalty on values
    // outside [0, 1] keeps raw-linear blend weights corrigible where the
    // ramp's clamp blocks gradients.
    let shifted = g.add_scalar(result.blended, -0.5)?;
    let steep = g.scale(shifted, RAMP_STEEPNESS)?;
    let recentered = g.add_scalar(steep, 0.5)?;
    let ramped = g.clamp(recentered, 0.0, 1.0)?;
    let dice = dice_loss(g, ramped, gt)?;
    let bounded = g.clamp(result.blended, 0.0, 1.0)?;
    let overflow = g.sub(result.blended, bounded)?;
    let sq = g.mul(overflow, overflow)?;
    let range_penalty = g.mean_all(sq)?;
    let dice_term = g.reshape(dice, &[])?;
    let lm = g.add(dice_term, range_penalty)?;
    let (lco, degenerate) = contrastive_loss(g, result.s_hat, ious)?;
    let d = g.scale(lm, cfg.lambda1)?;
    let c = g.scale(lco, cfg.lambda2)?;
    let total = g.add(d, c)?;
    Ok(MmLoss { total, lm, dice: dice_term, lco, degenerate })
}

// ── Episode forward (k-shot) ────────────────────────────────────────

/// Full matching pass over one episode.
pub struct EpisodeMatch {
    pub result: MatchResult,
    pub p_support: Var,
    pub p_query: Vec<Var>,
    pub gap_flags: Vec<bool>,
}

/// Runs alignment + prototypes for each support, averages prototypes
/// across supports (anchored at the first so identical supports reduce
/// exactly to the k=1 case), then matches. k = 1 takes the single-support
/// path directly and is bit-identical to a plain match.
pub fn kshot_match(
    g: &mut Graph,
    bind: &Binding,
    matcher: &MaskMatcher,
    supports: &[(&FeaturePyramid, &[f64])],
    query: &FeaturePyramid,
    proposals: &ProposalSet,
) -> Result<EpisodeMatch> {
    if supports.is_empty() {
        return Err(Error::config("kshot_match: k must be >= 1"));
    }
    let n = proposals.n;
    let mut per_support: Vec<(Var, Vec<Var>)> = Vec::with_capacity(supports.len());
    let mut gap_flags = Vec::new();
    for (pyr_s, mask_img) in supports {
        let q_feats = prepare_features(g, &matcher.cfg, query)?;
        let s_feats = prepare_features(g, &matcher.cfg, *pyr_s)?;
        let (q_aligned, s_aligned) = cross_align(g, bind, matcher, &q_feats, &s_feats)?;

        let img_side = (mask_img.len() as f64).sqrt() as usize;
        let mask_var = g.constant(mask_img.to_vec(), &[img_side, img_side])?;
        let (p_s, flag_s) = masked_gap(g, &s_aligned, mask_var)?;
        gap_flags.push(flag_s);

        let mut p_q = Vec::with_capacity(n);
        for p in 0..n {
            let m = g.slice(proposals.masks, 0, p, 1)?;
            let m2 = g.reshape(m, &[proposals.h, proposals.w])?;
            let (proto, flag) = masked_gap(g, &q_aligned, m2)?;
            gap_flags.push(flag);
            p_q.push(proto);
        }
        per_support.push((p_s, p_q));
    }

    let (p_support, p_query) = if per_support.len() == 1 {
        per_support.pop().expect("one support")
    } else {
        let k = per_support.len();
        let anchor_s = per_support[0].0;
        let mut p_support = anchor_s;
        let mut diff_acc: Option<Var> = None;
        for (ps, _) in per_support.iter().skip(1) {
            let d = g.sub(*ps, anchor_s)?;
            diff_acc = Some(match diff_acc {
                Some(a) => g.add(a, d)?,
                None => d,
            });
        }
        if let Some(acc) = diff_acc {
            let scaled = g.scale(acc, 1.0 / k as f64)?;
            p_support = g.add(anchor_s, scaled)?;
        }
        let mut p_query = Vec::with_capacity(n);
        for prop_idx in 0..n {
            let anchor = per_support[0].1[prop_idx];
            let mut acc: Option<Var> = None;
            for (_, pq) in per_support.iter().skip(1) {
                let d = g.sub(pq[prop_idx], anchor)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, d)?,
                    None => d,
                });
            }
            let avg = match acc {
                Some(a) => {
                    let scaled = g.scale(a, 1.0 / k as f64)?;
                    g.add(anchor, scaled)?
                }
                None => anchor,
            };
            p_query.push(avg);
        }
        (p_support, p_query)
    };

    let result = match_proposals(g, bind, matcher, p_support, &p_query, proposals)?;
    Ok(EpisodeMatch { result, p_support, p_query, gap_flags })
}
