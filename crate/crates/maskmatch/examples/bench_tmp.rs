use maskmatch::*;
use std::time::Instant;

fn main() {
    let mut cfg = config::Config::default(); // 64x64, d=32, N=16, batch 4
    cfg.seed = 1;
    cfg.iterations = Some(20);

    let t0 = Instant::now();
    let mut p = train::Pipeline::build(&cfg, checkpoint::Stage::Pos).unwrap();
    let mut opt = train::OptimizerState::new(&p.store);
    train::train_stage1(&mut p, &mut opt).unwrap();
    let dt = t0.elapsed();
    println!("stage1: {:?} for 20 iters => {:.1} ms/iter", dt, dt.as_secs_f64() * 50.0);

    let ckpt = p.checkpoint(None);
    let mut cfg2 = cfg.clone();
    cfg2.iterations = Some(10);
    let mut p2 = train::Pipeline::build(&cfg2, checkpoint::Stage::Mm).unwrap();
    p2.load_values(&ckpt.params, &["encoder.", "pos."]).unwrap();
    let mut opt2 = train::OptimizerState::new(&p2.store);
    let t0 = Instant::now();
    train::train_stage2(&mut p2, &mut opt2).unwrap();
    let dt = t0.elapsed();
    println!("stage2: {:?} for 10 iters => {:.1} ms/iter", dt, dt.as_secs_f64() * 100.0);

    let t0 = Instant::now();
    let report = eval::evaluate(&p2, &eval::EvalOptions {
        episodes: 50, shots: 1, split: data::Split::Test, seed: 2,
        with_oracle: true, with_baseline: true,
    }).unwrap();
    let dt = t0.elapsed();
    println!("eval: {:?} for 50 episodes => {:.1} ms/episode; miou {:?} oracle {:?} baseline {:?}",
        dt, dt.as_secs_f64() * 20.0, report.miou, report.oracle_miou, report.baseline_miou);

    // encoder alone
    let dcfg = cfg.data_config().unwrap();
    let scene = data::generate_scene(0, data::Split::Train, &dcfg);
    let t0 = Instant::now();
    for _ in 0..50 { let _ = p.encoder.encode(&p.store, &scene.image, 64, 64).unwrap(); }
    println!("encode: {:.2} ms each", t0.elapsed().as_secs_f64() * 20.0);
}
