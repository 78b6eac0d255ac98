//! The synthetic episodic dataset: disjoint train/test shape classes,
//! deterministic scenes with instance masks, k-shot episode sampling, and
//! the PNG dump format.
//!
//!     cargo run --release --example dataset

use maskmatch::data::{self, DataConfig, EpisodeMeta, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = DataConfig::new(64, 0)?;
    println!("fold 0 train classes: {:?}", cfg.classes(Split::Train));
    println!("fold 0 test classes:  {:?}", cfg.classes(Split::Test));

    let scene = data::generate_scene(7, Split::Train, &cfg);
    println!("scene 7: {} objects", scene.objects.len());
    for (class, mask) in &scene.objects {
        let area = mask.iter().filter(|&&v| v > 0.5).count();
        println!("  class {class}: {area} px");
    }

    let ep = data::sample_episode(3, Split::Test, 2, &cfg)?;
    println!(
        "episode 3 (test, k=2): class {}, query mask {} px",
        ep.class_id,
        ep.query_gt.iter().filter(|&&v| v > 0.5).count()
    );

    // Prefix stability: the k=1 support is the first support of any k.
    let one = data::sample_episode(3, Split::Test, 1, &cfg)?;
    assert_eq!(one.supports[0].1, ep.supports[0].1);
    println!("prefix-stable sampling confirmed (k=1 support == k=2 first support)");

    // Augmentation keeps masks binary and nonempty.
    let aug = data::augment(&ep, 99);
    assert!(aug.query_gt.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!(aug.query_gt.iter().any(|&v| v > 0.5));
    println!("augmented query mask: {} px", aug.query_gt.iter().filter(|&&v| v > 0.5).count());

    let out = std::env::temp_dir().join("maskmatch_episode_demo");
    data::dump_episode(
        &out,
        &ep,
        &EpisodeMeta { class_id: ep.class_id, seed: 3, split: Split::Test, k: 2, size: 64 },
    )?;
    println!("dumped rasters to {}", out.display());
    Ok(())
}
