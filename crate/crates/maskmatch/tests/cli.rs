//! End-to-end command tests, run in-process through `cli::run`.

use std::path::Path;

use maskmatch::checkpoint::{self, Stage};
use maskmatch::cli;
use maskmatch::config::Config;
use maskmatch::train::Pipeline;

fn run(args: &[&str]) -> i32 {
    let full: Vec<String> = std::iter::once("maskmatch".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect();
    cli::run(&full)
}

/// Tiny-but-real dimensions so commands finish in well under a second.
fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.toml");
    std::fs::write(
        &path,
        "image_size = 32\nd_model = 8\nheads = 2\nd_ffn = 16\nproposals = 4\nbatch_size = 2\nepisodes = 4\nbase_lr = 2e-3\n",
    )
    .unwrap();
    path
}

#[test]
fn train_pos_is_reproducible_checkpoint_for_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let code = run(&[
            "train-pos",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--iterations",
            "6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
    }
    let ha = checkpoint::file_hash(&dir.path().join("a/stage1.ckpt")).unwrap();
    let hb = checkpoint::file_hash(&dir.path().join("b/stage1.ckpt")).unwrap();
    assert_eq!(ha, hb, "same seed must give identical checkpoint bytes");
    let la = std::fs::read(dir.path().join("a/stage1_loss.csv")).unwrap();
    let lb = std::fs::read(dir.path().join("b/stage1_loss.csv")).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn zero_iterations_equals_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("init");
    let code = run(&[
        "train-pos",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--iterations",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let ckpt = checkpoint::load(&out.join("stage1.ckpt")).unwrap();
    let mut expect_cfg = Config::default();
    expect_cfg.apply(&std::fs::read_to_string(&cfg).unwrap().parse().unwrap()).unwrap();
    expect_cfg.seed = 3;
    expect_cfg.iterations = Some(0);
    let fresh = Pipeline::build(&expect_cfg, Stage::Pos).unwrap();
    for e in fresh.store.iter() {
        assert_eq!(
            ckpt.params[e.name()].value,
            e.value(),
            "{} must equal initialization",
            e.name()
        );
    }
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "lamda1 = 10.0\n").unwrap();
    let code = run(&["train-pos", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn missing_stage1_checkpoint_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let code = run(&[
        "train-mm",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code, 2, "train-mm without --stage1 must exit 2");
}

#[test]
fn nonexistent_checkpoint_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let code = run(&[
        "eval",
        "--checkpoint",
        dir.path().join("missing.ckpt").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn full_two_stage_plus_eval_roundtrip_and_shot_sharing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let s1 = dir.path().join("s1");
    assert_eq!(
        run(&["train-pos", "--config", cfg, "--seed", "5", "--iterations", "8", "--out", s1.to_str().unwrap()]),
        0
    );
    let ckpt1 = s1.join("stage1.ckpt");

    // One stage-1 checkpoint serves both shot counts.
    for k in ["1", "5"] {
        let out = dir.path().join(format!("s2_k{k}"));
        assert_eq!(
            run(&[
                "train-mm",
                "--config",
                cfg,
                "--stage1",
                ckpt1.to_str().unwrap(),
                "--k",
                k,
                "--iterations",
                "4",
                "--out",
                out.to_str().unwrap(),
            ]),
            0,
            "k={k} must accept the shared stage-1 checkpoint"
        );
    }

    let out = dir.path().join("eval");
    assert_eq!(
        run(&[
            "eval",
            "--checkpoint",
            dir.path().join("s2_k1/stage2.ckpt").to_str().unwrap(),
            "--episodes",
            "4",
            "--seed",
            "3",
            "--oracle",
            "--baseline",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    assert!(out.join("report.txt").exists());
    assert!(out.join("report.json").exists());
    assert!(out.join("per_episode.csv").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
    // The manifest echoes the fully resolved config, flags included.
    let record: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    assert_eq!(record["config"]["episodes"], 4);
    assert_eq!(record["config"]["seed"], 3);
    assert_eq!(record["config"]["lambda1"], 10.0);
    assert!(record["outputs"]["report.json"].as_str().unwrap().len() == 64);
}

#[test]
fn eval_is_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let s1 = dir.path().join("s1");
    assert_eq!(
        run(&["train-pos", "--config", cfg, "--seed", "1", "--iterations", "5", "--out", s1.to_str().unwrap()]),
        0
    );
    let ckpt = s1.join("stage1.ckpt");
    for sub in ["e1", "e2"] {
        let out = dir.path().join(sub);
        assert_eq!(
            run(&[
                "eval",
                "--checkpoint",
                ckpt.to_str().unwrap(),
                "--episodes",
                "10",
                "--seed",
                "3",
                "--out",
                out.to_str().unwrap(),
            ]),
            0
        );
    }
    for f in ["report.txt", "report.json", "per_episode.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("e1").join(f)).unwrap(),
            std::fs::read(dir.path().join("e2").join(f)).unwrap(),
            "{f} must be identical across reruns"
        );
    }
}

#[test]
fn joint_without_stage1_trains_from_scratch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("joint");
    assert_eq!(
        run(&[
            "train-mm",
            "--config",
            cfg.to_str().unwrap(),
            "--joint",
            "--iterations",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    let ckpt = checkpoint::load(&out.join("joint.ckpt")).unwrap();
    assert_eq!(ckpt.stage, Stage::Joint);
}

#[test]
fn all_off_matcher_is_accepted_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let s1 = dir.path().join("s1");
    assert_eq!(
        run(&["train-pos", "--config", cfg.to_str().unwrap(), "--iterations", "4", "--out", s1.to_str().unwrap()]),
        0
    );
    let out = dir.path().join("alloff");
    assert_eq!(
        run(&[
            "train-mm",
            "--config",
            cfg.to_str().unwrap(),
            "--stage1",
            s1.join("stage1.ckpt").to_str().unwrap(),
            "--sa",
            "off",
            "--ca",
            "off",
            "--lm",
            "off",
            "--iterations",
            "2",
            "--out",
            out.to_str().unwrap(),
        ]),
        0
    );
    assert!(out.join("stage2.ckpt").exists());
}

#[test]
fn gen_data_dumps_episode_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out = dir.path().join("data");
    assert_eq!(
        run(&[
            "gen-data",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--split",
            "test",
            "--count",
            "2",
            "--k",
            "2",
        ]),
        0
    );
    for i in 0..2 {
        let ep = out.join(format!("episode_{i:04}"));
        assert!(ep.join("query.png").exists());
        assert!(ep.join("query_mask.png").exists());
        assert!(ep.join("support_0.png").exists());
        assert!(ep.join("support_1_mask.png").exists());
        let meta: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(ep.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["split"], "test");
        assert_eq!(meta["k"], 2);
    }
}

#[test]
fn config_dir_env_var_resolves_bare_names() {
    let dir = tempfile::tempdir().unwrap();
    write_tiny_config(dir.path());
    // Env vars are process-global; this is the only test that sets it.
    std::env::set_var(maskmatch::config::CONFIG_DIR_ENV, dir.path());
    let out = dir.path().join("envrun");
    let code = run(&[
        "train-pos",
        "--config",
        "tiny.toml",
        "--iterations",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    std::env::remove_var(maskmatch::config::CONFIG_DIR_ENV);
    assert_eq!(code, 0);
}

#[test]
fn checkpoint_version_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let s1 = dir.path().join("s1");
    assert_eq!(
        run(&["train-pos", "--config", cfg.to_str().unwrap(), "--iterations", "1", "--out", s1.to_str().unwrap()]),
        0
    );
    let path = s1.join("stage1.ckpt");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 9;
    std::fs::write(&path, &bytes).unwrap();
    let code = run(&[
        "train-mm",
        "--config",
        cfg.to_str().unwrap(),
        "--stage1",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code, 1, "version mismatch is a runtime refusal");
}
