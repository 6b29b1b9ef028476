//! Checkpoint-resume reproduces an uninterrupted run bit for bit.

use xgait::checkpoint::Checkpoint;
use xgait::config::{ExperimentConfig, Preset, ScheduleConfig};
use xgait::synthgait::{generate_dataset, GenerateOptions};
use xgait::trainer::{checkpoint_path, load_train_pool, train_on_pool, FINAL_CHECKPOINT};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("data");
    let opts = GenerateOptions {
        subjects: 4,
        seqs_per_subject: 2,
        frames: 8,
        master_seed: 2,
        ..Default::default()
    };
    generate_dataset(&opts, &root)?;
    let mut cfg = ExperimentConfig::preset(Preset::Tiny);
    cfg.data.root = root;
    cfg.schedule = ScheduleConfig::scaled(12);
    cfg.batch.subjects = 2;
    cfg.train.checkpoint_every = 6;
    let (_, pool) = load_train_pool(&cfg)?;

    let full = dir.path().join("full");
    train_on_pool(&cfg, &pool, &full, None)?;
    let resumed = dir.path().join("resumed");
    train_on_pool(&cfg, &pool, &resumed, Some(&checkpoint_path(&full, 6)))?;

    let read = |d: &std::path::Path| std::fs::read(d.join("checkpoints").join(FINAL_CHECKPOINT));
    println!("final checkpoints identical: {}", read(&full)? == read(&resumed)?);
    let ck = Checkpoint::load(&full.join("checkpoints").join(FINAL_CHECKPOINT))?;
    println!("iteration {} fingerprint {}", ck.meta.iteration, &ck.meta.fingerprint[..12]);
    Ok(())
}
