//! Episodic evaluation: mIoU with per-class accumulated
//! intersection/union, the ground-truth oracle analysis, the argmax-cosine
//! heuristic baseline, and the component ablation grid. Reports are
//! written as an aligned text table, a JSON record, and a per-episode CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Stage};
use crate::config::Config;
use crate::data::{self, Split};
use crate::error::{Error, Result};
use crate::mm::{self, Blend, CaMode, MaskMatcher, MmConfig};
use crate::rng::{mix, stream};
use crate::tensor::{Graph, TensorError};
use crate::train::{train_stage2, OptimizerState, Pipeline};

/// Intersection-over-union of two binary masks. Both empty counts as 1,
/// exactly one empty as 0.
pub fn iou(pred: &[f64], gt: &[f64]) -> crate::tensor::Result<f64> {
    if pred.len() != gt.len() {
        return Err(TensorError::Dimension {
            op: "iou",
            detail: format!("{} vs {} values", pred.len(), gt.len()),
        });
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (p, g) in pred.iter().zip(gt) {
        let bp = *p >= 0.5;
        let bg = *g >= 0.5;
        if bp && bg {
            inter += 1;
        }
        if bp || bg {
            union += 1;
        }
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn binarize(mask: &[f64]) -> Vec<f64> {
    mask.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
}

/// Nearest-neighbor upsampling by an integer factor.
pub fn upsample_nearest(mask: &[f64], size: usize, factor: usize) -> Vec<f64> {
    let out_size = size * factor;
    let mut out = vec![0.0; out_size * out_size];
    for y in 0..out_size {
        for x in 0..out_size {
            out[y * out_size + x] = mask[(y / factor) * size + x / factor];
        }
    }
    out
}

/// Per-class accumulated intersection/union; mIoU is the unweighted mean
/// over the classes seen.
#[derive(Debug, Default, Clone)]
pub struct MiouAccumulator {
    classes: BTreeMap<usize, (u64, u64)>,
}

impl MiouAccumulator {
    pub fn add(&mut self, class: usize, pred: &[f64], gt: &[f64]) {
        let entry = self.classes.entry(class).or_insert((0, 0));
        for (p, g) in pred.iter().zip(gt) {
            let bp = *p >= 0.5;
            let bg = *g >= 0.5;
            if bp && bg {
                entry.0 += 1;
            }
            if bp || bg {
                entry.1 += 1;
            }
        }
    }

    pub fn per_class(&self) -> Vec<(usize, f64)> {
        self.classes
            .iter()
            .map(|(&c, &(i, u))| (c, if u == 0 { 1.0 } else { i as f64 / u as f64 }))
            .collect()
    }

    pub fn miou(&self) -> f64 {
        let per = self.per_class();
        if per.is_empty() {
            return 0.0;
        }
        per.iter().map(|(_, v)| v).sum::<f64>() / per.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub episodes: usize,
    pub shots: usize,
    pub split: Split,
    pub seed: u64,
    pub with_oracle: bool,
    pub with_baseline: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub index: usize,
    pub class_id: usize,
    pub iou: Option<f64>,
    pub oracle_iou: Option<f64>,
    pub baseline_iou: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Accumulation convention, declared up front.
    pub accumulation: String,
    pub config_fingerprint: String,
    pub split: Split,
    pub shots: usize,
    pub episodes: usize,
    pub per_class: Vec<(usize, f64)>,
    pub miou: Option<f64>,
    pub oracle_miou: Option<f64>,
    pub baseline_miou: Option<f64>,
    pub per_episode: Vec<EpisodeScore>,
}

/// All-off matcher used for the heuristic baseline: raw features, argmax
/// cosine, no learnable blocks.
fn baseline_matcher(cfg: &MmConfig) -> MaskMatcher {
    MaskMatcher {
        ca_levels: Vec::new(),
        match_mlp: None,
        cfg: MmConfig {
            sa: false,
            ca: CaMode::Off,
            lm: false,
            blend: Blend::Softmax,
            ..*cfg
        },
    }
}

/// Evaluates a pipeline over deterministic episodes. The model prediction
/// needs a matcher; oracle and baseline run from the proposals alone.
pub fn evaluate(pipeline: &Pipeline, opts: &EvalOptions) -> Result<EvalReport> {
    let cfg = &pipeline.config;
    let dcfg = cfg.data_config()?;
    let size = cfg.image_size;
    let base = mix(opts.seed, stream::EVAL);
    let mm_cfg = cfg.mm_config();
    let baseline = baseline_matcher(&mm_cfg);

    let mut acc = MiouAccumulator::default();
    let mut oracle_acc = MiouAccumulator::default();
    let mut baseline_acc = MiouAccumulator::default();
    let mut per_episode = Vec::with_capacity(opts.episodes);

    for index in 0..opts.episodes {
        let ep = data::sample_episode(mix(base, index as u64), opts.split, opts.shots, &dcfg)?;
        let mut g = Graph::inference();
        let bind = pipeline.store.bind(&mut g)?;
        let query_pyr = pipeline.encoder.encode(&pipeline.store, &ep.query, size, size)?;
        let support_pyrs: Vec<_> = ep
            .supports
            .iter()
            .map(|(img, _)| pipeline.encoder.encode(&pipeline.store, img, size, size))
            .collect::<Result<_>>()?;
        let supports: Vec<(&crate::encoder::FeaturePyramid, &[f64])> = support_pyrs
            .iter()
            .zip(&ep.supports)
            .map(|(pyr, (_, mask))| (pyr, mask.as_slice()))
            .collect();
        let proposals = pipeline.seg.propose(&mut g, &bind, &query_pyr)?;
        let hw = proposals.h * proposals.w;

        let model_iou = match &pipeline.matcher {
            Some(matcher) => {
                let out = mm::kshot_match(&mut g, &bind, matcher, &supports, &query_pyr, &proposals)?;
                let pred_s4 = binarize(g.data(out.result.blended));
                let pred = upsample_nearest(&pred_s4, proposals.h, 4);
                acc.add(ep.class_id, &pred, &ep.query_gt);
                Some(iou(&pred, &ep.query_gt)?)
            }
            None => None,
        };

        let oracle_iou = if opts.with_oracle {
            let data = g.data(proposals.masks).to_vec();
            let mut best = 0.0f64;
            let mut best_mask = vec![0.0; size * size];
            for p in 0..proposals.n {
                let m = binarize(&data[p * hw..(p + 1) * hw]);
                let up = upsample_nearest(&m, proposals.h, 4);
                let v = iou(&up, &ep.query_gt)?;
                if v > best || p == 0 {
                    best = v;
                    best_mask = up;
                }
            }
            oracle_acc.add(ep.class_id, &best_mask, &ep.query_gt);
            Some(best)
        } else {
            None
        };

        let baseline_iou = if opts.with_baseline {
            let out = mm::kshot_match(&mut g, &bind, &baseline, &supports, &query_pyr, &proposals)?;
            let pred_s4 = binarize(g.data(out.result.blended));
            let pred = upsample_nearest(&pred_s4, proposals.h, 4);
            baseline_acc.add(ep.class_id, &pred, &ep.query_gt);
            Some(iou(&pred, &ep.query_gt)?)
        } else {
            None
        };

        per_episode.push(EpisodeScore {
            index,
            class_id: ep.class_id,
            iou: model_iou,
            oracle_iou,
            baseline_iou,
        });
    }

    Ok(EvalReport {
        accumulation: "per-class accumulated intersection/union".to_string(),
        config_fingerprint: cfg.fingerprint(),
        split: opts.split,
        shots: opts.shots,
        episodes: opts.episodes,
        per_class: acc.per_class(),
        miou: pipeline.matcher.as_ref().map(|_| acc.miou()),
        oracle_miou: opts.with_oracle.then(|| oracle_acc.miou()),
        baseline_miou: opts.with_baseline.then(|| baseline_acc.miou()),
        per_episode,
    })
}

// ── Ablation grid ───────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridRow {
    pub sa: String,
    pub ca: String,
    pub lm: String,
    pub trained: bool,
    pub miou: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridReport {
    pub seed: u64,
    pub stage2_iterations: u64,
    pub eval_episodes: usize,
    pub rows: Vec<GridRow>,
}

/// The eight SA x CA x LM combinations plus the non-parametric CA row.
pub fn grid_rows() -> Vec<(&'static str, &'static str, &'static str)> {
    let mut rows = Vec::new();
    for sa in ["off", "on"] {
        for ca in ["off", "on"] {
            for lm in ["off", "on"] {
                rows.push((sa, ca, lm));
            }
        }
    }
    rows.push(("on", "nonparam", "off"));
    rows
}

/// Trains (when there is anything to train) and evaluates one ablation
/// configuration from a shared stage-1 checkpoint.
pub fn run_grid_cell(
    base: &Config,
    stage1: &Checkpoint,
    sa: &str,
    ca: &str,
    lm: &str,
) -> Result<(Pipeline, bool)> {
    let mut cfg = base.clone();
    cfg.sa = sa.to_string();
    cfg.ca = ca.to_string();
    cfg.lm = lm.to_string();
    crate::train::check_arch_compat(&cfg, &stage1.config()?)?;
    let mut pipeline = Pipeline::build(&cfg, Stage::Mm)?;
    pipeline.load_values(&stage1.params, &["encoder.", "pos."])?;
    let trainable = cfg.mm_config().has_learnable_params();
    if trainable {
        let mut opt = OptimizerState::new(&pipeline.store);
        train_stage2(&mut pipeline, &mut opt)?;
    }
    Ok((pipeline, trainable))
}

pub fn ablation_grid(base: &Config, stage1: &Checkpoint) -> Result<GridReport> {
    let mut rows = Vec::new();
    for (sa, ca, lm) in grid_rows() {
        let (pipeline, trained) = run_grid_cell(base, stage1, sa, ca, lm)?;
        let report = evaluate(
            &pipeline,
            &EvalOptions {
                episodes: base.episodes,
                shots: base.shots,
                split: Split::Test,
                seed: base.seed,
                with_oracle: false,
                with_baseline: false,
            },
        )?;
        rows.push(GridRow {
            sa: sa.to_string(),
            ca: ca.to_string(),
            lm: lm.to_string(),
            trained,
            miou: report.miou.ok_or_else(|| Error::config("grid cell produced no mIoU"))?,
        });
    }
    Ok(GridReport {
        seed: base.seed,
        stage2_iterations: base.iterations_for("mm"),
        eval_episodes: base.episodes,
        rows,
    })
}

// ── Report files ────────────────────────────────────────────────────

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

pub fn render_report_text(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# evaluation report");
    let _ = writeln!(s, "accumulation: {}", report.accumulation);
    let _ = writeln!(s, "config: {}", report.config_fingerprint);
    let _ = writeln!(s, "split: {}  shots: {}  episodes: {}", report.split, report.shots, report.episodes);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>10}", "class", "iou");
    for (c, v) in &report.per_class {
        let _ = writeln!(s, "{:<10} {:>10.4}", c, v);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>10}", "mIoU", fmt_opt(report.miou));
    let _ = writeln!(s, "{:<10} {:>10}", "oracle", fmt_opt(report.oracle_miou));
    let _ = writeln!(s, "{:<10} {:>10}", "baseline", fmt_opt(report.baseline_miou));
    s
}

pub fn render_grid_text(grid: &GridReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# ablation grid (seed {}, {} stage-2 iterations, {} episodes)",
        grid.seed, grid.stage2_iterations, grid.eval_episodes);
    let _ = writeln!(s, "{:<5} {:<9} {:<5} {:<8} {:>8}", "sa", "ca", "lm", "trained", "miou");
    for r in &grid.rows {
        let _ = writeln!(s, "{:<5} {:<9} {:<5} {:<8} {:>8.4}", r.sa, r.ca, r.lm, r.trained, r.miou);
    }
    s
}

fn csv_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

pub fn render_per_episode_csv(report: &EvalReport) -> String {
    let mut s = String::from("episode,class_id,iou,oracle_iou,baseline_iou\n");
    for e in &report.per_episode {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.index,
            e.class_id,
            csv_cell(e.iou),
            csv_cell(e.oracle_iou),
            csv_cell(e.baseline_iou)
        );
    }
    s
}

/// Writes report.txt, report.json, and per_episode.csv under `dir`.
pub fn write_report_files(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.txt"), render_report_text(report))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("per_episode.csv"), render_per_episode_csv(report))?;
    Ok(())
}

pub fn write_grid_files(dir: &Path, grid: &GridReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ablation.txt"), render_grid_text(grid))?;
    let json = serde_json::to_string_pretty(grid).expect("grid serializes");
    std::fs::write(dir.join("ablation.json"), json)?;
    Ok(())
}
