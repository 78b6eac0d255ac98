//! Command-line entry point: `gen-data`, `train-pos`, `train-mm`, `eval`.
//! All logic lives in the library; this module parses flags, resolves the
//! configuration (file < flags), dispatches, and maps errors to exit
//! codes (0 success, 1 runtime/I-O, 2 configuration).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{self, Stage};
use crate::config::Config;
use crate::data::{self, Split};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions};
use crate::manifest::{self, RunManifest};
use crate::rng::mix;
use crate::train::{self, OptimizerState, Pipeline};

#[derive(Parser)]
#[command(name = "maskmatch", version, about = "Few-shot segmentation by mask-proposal matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file overrides shared by every subcommand. Each flag has a
/// config key of the same name (dashes become underscores).
#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    /// Config file (TOML, flat keys); bare names resolve against
    /// $MASKMATCH_CONFIG_DIR.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    poly_power: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ffn: Option<usize>,
    #[arg(long)]
    proposals: Option<usize>,
    #[arg(long)]
    ca_layers: Option<usize>,
    #[arg(long)]
    positional_encoding: Option<String>,
    #[arg(long)]
    blend: Option<String>,
    #[arg(long)]
    sa: Option<String>,
    #[arg(long)]
    ca: Option<String>,
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    fold: Option<usize>,
    /// Support shots per episode (config key `shots`).
    #[arg(long = "k")]
    shots: Option<usize>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    episodes: Option<usize>,
}

impl Overrides {
    fn to_table(&self) -> toml::Table {
        let mut t = toml::Table::new();
        let mut put_int = |k: &str, v: Option<i64>| {
            if let Some(x) = v {
                t.insert(k.to_string(), toml::Value::Integer(x));
            }
        };
        put_int("seed", self.seed.map(|v| v as i64));
        put_int("iterations", self.iterations.map(|v| v as i64));
        put_int("batch_size", self.batch_size.map(|v| v as i64));
        put_int("image_size", self.image_size.map(|v| v as i64));
        put_int("d_model", self.d_model.map(|v| v as i64));
        put_int("heads", self.heads.map(|v| v as i64));
        put_int("d_ffn", self.d_ffn.map(|v| v as i64));
        put_int("proposals", self.proposals.map(|v| v as i64));
        put_int("ca_layers", self.ca_layers.map(|v| v as i64));
        put_int("fold", self.fold.map(|v| v as i64));
        put_int("shots", self.shots.map(|v| v as i64));
        put_int("episodes", self.episodes.map(|v| v as i64));
        let mut put_f = |k: &str, v: Option<f64>| {
            if let Some(x) = v {
                t.insert(k.to_string(), toml::Value::Float(x));
            }
        };
        put_f("base_lr", self.base_lr);
        put_f("weight_decay", self.weight_decay);
        put_f("poly_power", self.poly_power);
        put_f("lambda1", self.lambda1);
        put_f("lambda2", self.lambda2);
        put_f("grad_clip", self.grad_clip);
        put_f("dropout", self.dropout);
        let mut put_s = |k: &str, v: &Option<String>| {
            if let Some(x) = v {
                t.insert(k.to_string(), toml::Value::String(x.clone()));
            }
        };
        put_s("positional_encoding", &self.positional_encoding);
        put_s("blend", &self.blend);
        put_s("sa", &self.sa);
        put_s("ca", &self.ca);
        put_s("lm", &self.lm);
        if let Some(a) = self.augment {
            t.insert("augment".to_string(), toml::Value::Boolean(a));
        }
        t
    }

    /// File first, then flags on top, then validation.
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        cfg.apply(&self.to_table())?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render episodes to PNG rasters plus metadata, one directory each.
    GenData {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Dataset split to sample from.
        #[arg(long, default_value = "train")]
        split: String,
        /// Number of episodes to dump.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Stage 1: train the proposal segmenter (encoder frozen).
    TrainPos {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Stage 2: train the matching module from a stage-1 checkpoint
    /// (encoder and segmenter frozen), or jointly with --joint.
    TrainMm {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Stage-1 checkpoint to build on.
        #[arg(long)]
        stage1: Option<PathBuf>,
        /// Train the segmenter and matcher together (end-to-end).
        #[arg(long)]
        joint: bool,
    },
    /// Evaluate a checkpoint episodically; optionally oracle analysis,
    /// the heuristic baseline, or the full component ablation grid.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Dataset split to evaluate on.
        #[arg(long, default_value = "test")]
        split: String,
        /// Also score the best-IoU proposal per episode.
        #[arg(long)]
        oracle: bool,
        /// Also score the argmax-cosine heuristic baseline.
        #[arg(long)]
        baseline: bool,
        /// Train and evaluate all SA/CA/LM combinations from a stage-1
        /// checkpoint.
        #[arg(long)]
        ablation_grid: bool,
    },
}

/// Parses and runs; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // Help/version are successful exits; real parse errors are
            // configuration errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { overrides, out, split, count } => gen_data(&overrides, &out, &split, count),
        Command::TrainPos { overrides, out } => train_pos(&overrides, &out),
        Command::TrainMm { overrides, out, stage1, joint } => train_mm(&overrides, &out, stage1.as_deref(), joint),
        Command::Eval { overrides, checkpoint, out, split, oracle, baseline, ablation_grid } => {
            eval_cmd(&overrides, &checkpoint, &out, &split, oracle, baseline, ablation_grid)
        }
    }
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse()
}

fn write_loss_csv(path: &Path, losses: &[f64], parts: &[train::LossParts]) -> Result<()> {
    use std::fmt::Write as _;
    let mut s = String::from("iteration,total,lp,lm,lco\n");
    for (i, (l, p)) in losses.iter().zip(parts).enumerate() {
        let _ = writeln!(s, "{i},{l:.12},{:.12},{:.12},{:.12}", p.lp, p.lm, p.lco);
    }
    std::fs::write(path, s)?;
    Ok(())
}

fn gen_data(overrides: &Overrides, out: &Path, split: &str, count: usize) -> Result<()> {
    let cfg = overrides.resolve()?;
    let split = parse_split(split)?;
    let dcfg = cfg.data_config()?;
    std::fs::create_dir_all(out)?;
    let mut m = RunManifest::new("gen-data", &cfg);
    for i in 0..count {
        let seed = mix(cfg.seed, i as u64);
        let ep = data::sample_episode(seed, split, cfg.shots, &dcfg)?;
        let meta = data::EpisodeMeta {
            class_id: ep.class_id,
            seed,
            split,
            k: cfg.shots,
            size: cfg.image_size,
        };
        let dir = out.join(format!("episode_{i:04}"));
        data::dump_episode(&dir, &ep, &meta)?;
        m.outputs.insert(
            format!("episode_{i:04}"),
            checkpoint::file_hash(&dir.join("query.png"))?,
        );
    }
    m.stage = Some("gen-data".to_string());
    manifest::append(out, &m)?;
    println!("wrote {count} episodes to {}", out.display());
    Ok(())
}

fn train_pos(overrides: &Overrides, out: &Path) -> Result<()> {
    let cfg = overrides.resolve()?;
    let mut pipeline = Pipeline::build(&cfg, Stage::Pos)?;
    let mut opt = OptimizerState::new(&pipeline.store);
    let outcome = train::train_stage1(&mut pipeline, &mut opt)?;
    std::fs::create_dir_all(out)?;
    let ckpt = pipeline.checkpoint(Some(&opt));
    checkpoint::save(&out.join("stage1.ckpt"), &ckpt)?;
    write_loss_csv(&out.join("stage1_loss.csv"), &outcome.losses, &outcome.parts)?;
    let mut m = RunManifest::new("train-pos", &cfg);
    m.stage = Some("pos".to_string());
    m.record_output(out, "stage1.ckpt")?;
    m.record_output(out, "stage1_loss.csv")?;
    manifest::append(out, &m)?;
    println!(
        "stage 1 done: {} iterations, final loss {:.6}, checkpoint {}",
        outcome.losses.len(),
        outcome.losses.last().copied().unwrap_or(0.0),
        out.join("stage1.ckpt").display()
    );
    Ok(())
}

fn train_mm(overrides: &Overrides, out: &Path, stage1: Option<&Path>, joint: bool) -> Result<()> {
    let cfg = overrides.resolve()?;
    let stage = if joint { Stage::Joint } else { Stage::Mm };
    let loaded = match stage1 {
        Some(path) => Some((checkpoint::load(path)?, path.to_path_buf())),
        None if joint => None,
        None => {
            return Err(Error::config(
                "stage1: train-mm requires --stage1 <checkpoint> (or --joint to train from scratch)",
            ));
        }
    };
    let mut pipeline = Pipeline::build(&cfg, stage)?;
    let mut m = RunManifest::new("train-mm", &cfg);
    if let Some((ckpt, path)) = &loaded {
        if ckpt.stage != Stage::Pos {
            return Err(Error::Checkpoint(format!(
                "{}: expected a stage-1 (pos) checkpoint, found {}",
                path.display(),
                ckpt.stage.name()
            )));
        }
        train::check_arch_compat(&cfg, &ckpt.config()?)?;
        pipeline.load_values(&ckpt.params, &["encoder.", "pos."])?;
        m.inputs.insert(
            "stage1".to_string(),
            format!("{}:{}", path.display(), checkpoint::file_hash(path)?),
        );
    }
    let mut opt = OptimizerState::new(&pipeline.store);
    if opt.ids.is_empty() {
        eprintln!(
            "warning: sa={} ca={} lm={} leaves nothing learnable in the matching module; \
             the checkpoint will hold the untrained wiring",
            cfg.sa, cfg.ca, cfg.lm
        );
    }
    let outcome = if joint {
        train::train_joint(&mut pipeline, &mut opt)?
    } else {
        train::train_stage2(&mut pipeline, &mut opt)?
    };
    std::fs::create_dir_all(out)?;
    let name = if joint { "joint.ckpt" } else { "stage2.ckpt" };
    let ckpt = pipeline.checkpoint(Some(&opt));
    checkpoint::save(&out.join(name), &ckpt)?;
    let loss_name = if joint { "joint_loss.csv" } else { "stage2_loss.csv" };
    write_loss_csv(&out.join(loss_name), &outcome.losses, &outcome.parts)?;
    m.stage = Some(if joint { "joint" } else { "mm" }.to_string());
    m.record_output(out, name)?;
    m.record_output(out, loss_name)?;
    manifest::append(out, &m)?;
    println!(
        "{} training done: {} iterations, final loss {:.6}, checkpoint {}",
        if joint { "joint" } else { "stage 2" },
        outcome.losses.len(),
        outcome.losses.last().copied().unwrap_or(0.0),
        out.join(name).display()
    );
    Ok(())
}

fn eval_cmd(
    overrides: &Overrides,
    ckpt_path: &Path,
    out: &Path,
    split: &str,
    oracle: bool,
    baseline: bool,
    ablation_grid: bool,
) -> Result<()> {
    let ckpt = checkpoint::load(ckpt_path)?;
    let split = parse_split(split)?;
    // The checkpoint's config fixes the architecture; flags may adjust the
    // evaluation itself (seed, episodes, shots, ...). Conflicting
    // architecture overrides are rejected by name.
    let mut cfg = ckpt.config()?;
    if let Some(path) = &overrides.config {
        cfg.apply_file(path)?;
    }
    cfg.apply(&overrides.to_table())?;
    cfg.validate()?;
    train::check_arch_compat(&cfg, &ckpt.config()?)?;

    let mut m = RunManifest::new("eval", &cfg);
    m.inputs.insert(
        "checkpoint".to_string(),
        format!("{}:{}", ckpt_path.display(), checkpoint::file_hash(ckpt_path)?),
    );

    if ablation_grid {
        if ckpt.stage != Stage::Pos {
            return Err(Error::config(
                "ablation_grid: requires a stage-1 (pos) checkpoint to retrain each cell",
            ));
        }
        let grid = eval::ablation_grid(&cfg, &ckpt)?;
        eval::write_grid_files(out, &grid)?;
        m.stage = Some("ablation-grid".to_string());
        m.record_output(out, "ablation.txt")?;
        m.record_output(out, "ablation.json")?;
        manifest::append(out, &m)?;
        print!("{}", eval::render_grid_text(&grid));
        return Ok(());
    }

    let mm_keys_match = {
        let c0 = ckpt.config()?;
        cfg.sa == c0.sa && cfg.ca == c0.ca && cfg.lm == c0.lm && cfg.ca_layers == c0.ca_layers
            && cfg.blend == c0.blend
    };
    if ckpt.stage != Stage::Pos && !mm_keys_match {
        return Err(Error::config(
            "sa/ca/lm/ca_layers/blend: cannot override matcher architecture at evaluation time",
        ));
    }

    let mut pipeline = Pipeline::build(&cfg, ckpt.stage)?;
    pipeline.load_values(&ckpt.params, &["encoder.", "pos.", "mm."])?;
    let report = eval::evaluate(
        &pipeline,
        &EvalOptions {
            episodes: cfg.episodes,
            shots: cfg.shots,
            split,
            seed: cfg.seed,
            with_oracle: oracle || ckpt.stage == Stage::Pos,
            with_baseline: baseline,
        },
    )?;
    eval::write_report_files(out, &report)?;
    m.stage = Some("eval".to_string());
    m.record_output(out, "report.txt")?;
    m.record_output(out, "report.json")?;
    m.record_output(out, "per_episode.csv")?;
    manifest::append(out, &m)?;
    print!("{}", eval::render_report_text(&report));
    if let (Some(o), Some(b)) = (report.oracle_miou, report.baseline_miou) {
        println!("oracle >= baseline: {}", o >= b);
    }
    Ok(())
}
