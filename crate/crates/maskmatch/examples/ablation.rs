//! A reduced component ablation: the 2x2x2 SA/CA/LM grid plus the
//! non-parametric CA row, each cell retrained from one shared stage-1
//! checkpoint. At full defaults this takes minutes per trainable cell;
//! this demo shrinks the model and budgets to finish quickly.
//!
//!     cargo run --release --example ablation

use maskmatch::checkpoint::Stage;
use maskmatch::config::Config;
use maskmatch::eval;
use maskmatch::train::{self, OptimizerState, Pipeline};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = Config::default();
    cfg.d_model = 16;
    cfg.d_ffn = 32;
    cfg.proposals = 8;
    cfg.episodes = 60;
    cfg.seed = 13;

    cfg.iterations = Some(400);
    let mut p1 = Pipeline::build(&cfg, Stage::Pos)?;
    let mut o1 = OptimizerState::new(&p1.store);
    train::train_stage1(&mut p1, &mut o1)?;
    let stage1 = p1.checkpoint(None);
    println!("shared stage-1 checkpoint ready");

    cfg.iterations = Some(200);
    let grid = eval::ablation_grid(&cfg, &stage1)?;
    print!("{}", eval::render_grid_text(&grid));

    let row = |sa: &str, ca: &str, lm: &str| -> f64 {
        grid.rows
            .iter()
            .find(|r| r.sa == sa && r.ca == ca && r.lm == lm)
            .map(|r| r.miou)
            .unwrap()
    };
    println!();
    println!("learnable matching vs baseline: {:+.4}", row("off", "off", "on") - row("off", "off", "off"));
    println!("full model vs matching only:    {:+.4}", row("on", "on", "on") - row("off", "off", "on"));
    println!("learned CA vs non-parametric:   {:+.4}", row("on", "on", "off") - row("on", "nonparam", "off"));
    Ok(())
}
