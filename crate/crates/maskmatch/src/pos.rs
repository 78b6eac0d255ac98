//! Potential objects segmenter: N learnable embeddings refined by three
//! decoder layers (one per pyramid level F3..F5), projected against the
//! stride-4 query feature map to produce N soft mask proposals. Training
//! supervision is dice loss on Hungarian-matched proposal/ground-truth
//! pairs; there is no mask classifier.

use rand::Rng;

use crate::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{sine_positions, Binding, DecoderLayer, Linear, ParamId, ParamStore};
use crate::tensor::{Graph, TensorError, Var};

pub const DICE_SMOOTHING: f64 = 1.0;

/// How memory rows are tagged with positions inside attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PosEncoding {
    Off,
    Sine,
}

/// N soft masks in [0,1] at stride 4 plus the decoder embeddings that
/// produced them.
pub struct ProposalSet {
    pub masks: Var,
    pub embeddings: Var,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

/// Injective map from ground truths to proposals with minimal total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// (proposal index, ground-truth index) pairs, one per ground truth.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

// ── Dice ────────────────────────────────────────────────────────────

/// Soft dice loss on plain values: `1 - (2·Σpg + s)/(Σp + Σg + s)`.
pub fn dice_val(pred: &[f64], gt: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), gt.len());
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let sums: f64 = pred.iter().sum::<f64>() + gt.iter().sum::<f64>();
    1.0 - (2.0 * inter + DICE_SMOOTHING) / (sums + DICE_SMOOTHING)
}

/// Graph version of the dice loss; gradients flow into `pred`.
pub fn dice_loss(g: &mut Graph, pred: Var, gt: Var) -> crate::tensor::Result<Var> {
    if g.shape(pred) != g.shape(gt) {
        return Err(TensorError::Dimension {
            op: "dice_loss",
            detail: format!("pred {:?} vs gt {:?}", g.shape(pred), g.shape(gt)),
        });
    }
    let prod = g.mul(pred, gt)?;
    let inter = g.sum_all(prod)?;
    let sp = g.sum_all(pred)?;
    let sg = g.sum_all(gt)?;
    let num = g.scale(inter, 2.0)?;
    let num = g.add_scalar(num, DICE_SMOOTHING)?;
    let den = g.add(sp, sg)?;
    let den = g.add_scalar(den, DICE_SMOOTHING)?;
    let ratio = g.div(num, den)?;
    g.rsub_scalar(ratio, 1.0)
}

// ── Hungarian assignment ────────────────────────────────────────────

/// Minimum-cost assignment of every column (ground truth) to a distinct
/// row (proposal) of an N x G cost matrix, N >= G >= 1. Exact: shortest
/// augmenting paths over dual potentials.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::config("hungarian: empty cost matrix"));
    }
    let g_count = cost[0].len();
    if g_count == 0 || cost.iter().any(|r| r.len() != g_count) {
        return Err(Error::config("hungarian: ragged or empty cost matrix"));
    }
    if g_count > n {
        return Err(Error::config(format!(
            "hungarian: {g_count} ground truths exceed {n} proposals"
        )));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config("hungarian: non-finite cost"));
    }

    // Solve with ground truths as rows (rows <= cols). a[i][j] = cost of
    // assigning gt i to proposal j.
    let rows = g_count;
    let cols = n;
    let a = |i: usize, j: usize| cost[j][i];
    let inf = f64::INFINITY;
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut assigned = vec![0usize; cols + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        assigned[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(rows);
    let mut total = 0.0;
    for j in 1..=cols {
        if assigned[j] != 0 {
            let gt = assigned[j] - 1;
            let proposal = j - 1;
            pairs.push((proposal, gt));
            total += cost[proposal][gt];
        }
    }
    pairs.sort_by_key(|&(_, gt)| gt);
    Ok(Assignment { pairs, total_cost: total })
}

// ── Segmenter ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct PosConfig {
    pub n_proposals: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub pos_encoding: PosEncoding,
}

pub struct ProposalSegmenter {
    pub embed: ParamId,
    pub layers: Vec<DecoderLayer>,
    pub mask_proj: Linear,
    pub cfg: PosConfig,
}

impl ProposalSegmenter {
    /// Registers parameters under `pos.*`.
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: PosConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.d_model;
        let embed_init = crate::nn::xavier_uniform(rng, d, d, cfg.n_proposals * d);
        let embed = store.register("pos.embed", &[cfg.n_proposals, d], embed_init);
        let layers = (0..3)
            .map(|i| DecoderLayer::new(store, &format!("pos.layer{i}"), d, cfg.heads, cfg.d_ffn, rng))
            .collect::<crate::tensor::Result<Vec<_>>>()?;
        let mask_proj = Linear::new(store, "pos.mask_proj", d, d, rng);
        Ok(ProposalSegmenter { embed, layers, mask_proj, cfg })
    }

    /// E0 = learnable embeddings; E_{l+1} = layer_l(E_l, F_i) for
    /// i = 3, 4, 5; masks = sigmoid(project(E3) · F2).
    pub fn propose(&self, g: &mut Graph, bind: &Binding, pyramid: &FeaturePyramid) -> Result<ProposalSet> {
        let d = self.cfg.d_model;
        let mut e = bind.var(self.embed);
        for (layer, level) in self.layers.iter().zip([3usize, 4, 5]) {
            let lm = pyramid.level(level);
            let feat = lm.to_var(g)?;
            let flat = g.reshape(feat, &[d, lm.h * lm.w])?;
            let mem = g.transpose(flat)?;
            let pos = match self.cfg.pos_encoding {
                PosEncoding::Off => None,
                PosEncoding::Sine => {
                    Some(g.constant(sine_positions(lm.h * lm.w, d), &[lm.h * lm.w, d])?)
                }
            };
            e = layer.forward(g, bind, e, mem, pos)?;
        }
        let q = self.mask_proj.forward(g, bind, e)?;
        let f2 = pyramid.level(2);
        let flat2 = {
            let feat = f2.to_var(g)?;
            g.reshape(feat, &[d, f2.h * f2.w])?
        };
        let logits = g.matmul(q, flat2)?;
        let masks = g.sigmoid(logits)?;
        let masks = g.reshape(masks, &[self.cfg.n_proposals, f2.h, f2.w])?;
        Ok(ProposalSet { masks, embeddings: e, n: self.cfg.n_proposals, h: f2.h, w: f2.w })
    }
}

/// Hungarian-matched mean dice loss. Ground truths must already be at the
/// proposal resolution. Matching runs on detached values; gradients flow
/// only through the matched dice terms.
pub fn pos_loss(
    g: &mut Graph,
    proposals: &ProposalSet,
    gts: &[Vec<f64>],
) -> Result<(Var, Assignment)> {
    if gts.is_empty() {
        return Err(Error::config("pos_loss: no ground-truth masks"));
    }
    let hw = proposals.h * proposals.w;
    for (i, gt) in gts.iter().enumerate() {
        if gt.len() != hw {
            return Err(Error::config(format!(
                "pos_loss: ground truth {i} has {} values, expected {hw}",
                gt.len()
            )));
        }
    }
    let mask_data = g.data(proposals.masks).to_vec();
    let cost: Vec<Vec<f64>> = (0..proposals.n)
        .map(|p| {
            let pred = &mask_data[p * hw..(p + 1) * hw];
            gts.iter().map(|gt| dice_val(pred, gt)).collect()
        })
        .collect();
    let assignment = hungarian(&cost)?;

    let flat = g.reshape(proposals.masks, &[proposals.n, hw])?;
    let mut acc: Option<Var> = None;
    for &(p, t) in &assignment.pairs {
        let pred = g.slice(flat, 0, p, 1)?;
        let gt = g.constant(gts[t].clone(), &[1, hw])?;
        let term = dice_loss(g, pred, gt)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    let total = acc.expect("at least one matched pair");
    let loss = g.scale(total, 1.0 / assignment.pairs.len() as f64)?;
    Ok((loss, assignment))
}

/// Nearest-neighbor downsampling of a binary mask by `factor`.
pub fn downsample_mask(mask: &[f64], size: usize, factor: usize) -> Vec<f64> {
    let out_size = size / factor;
    let mut out = vec![0.0; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            out[y * out_size + x] = mask[(y * factor + factor / 2) * size + x * factor + factor / 2];
        }
    }
    out
}
