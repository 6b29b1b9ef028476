//! Trains a tiny model on synthetic walkers and evaluates it under the
//! standard and cloth-changing protocols.
//!
//! `cargo run --release --example train_evaluate -- 300`

use xgait::checkpoint::Checkpoint;
use xgait::config::{ExperimentConfig, Preset, ScheduleConfig};
use xgait::dataset::index_dataset;
use xgait::eval::{format_report, run_protocol, EvalMode, Protocol, ReportMeta};
use xgait::synthgait::{generate_dataset, GenerateOptions};
use xgait::trainer::{resolve_split, train};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let iters: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(100);
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("data");
    let opts = GenerateOptions {
        subjects: 8,
        seqs_per_subject: 4,
        frames: 20,
        master_seed: 5,
        ..Default::default()
    };
    generate_dataset(&opts, &root)?;

    let mut cfg = ExperimentConfig::preset(Preset::Tiny);
    cfg.data.root = root.clone();
    cfg.schedule = ScheduleConfig::scaled(iters);
    cfg.batch.subjects = 4;
    cfg.train.checkpoint_every = 0;
    let summary = train(&cfg, &dir.path().join("run"), None)?;
    if let Some(last) = &summary.last {
        println!("after {} iterations: total loss {:.4}", last.iteration, last.total);
    }

    let mut model = Checkpoint::load(&summary.final_checkpoint)?.build_model()?;
    let index = index_dataset(&root)?;
    let split = resolve_split(&cfg, &index)?;
    let meta = ReportMeta {
        mode: "xgait".into(),
        fingerprint: cfg.short_fingerprint(),
        seed: cfg.seed,
        code_version: xgait::CODE_VERSION.into(),
    };
    for protocol in [Protocol::Standard, Protocol::ClFull] {
        match run_protocol(&index, &split, &mut [&mut model], EvalMode::Xgait, protocol, cfg.eval.max_frames) {
            Ok(run) => print!("{}", format_report(&run.report, &meta)),
            Err(e) => println!("{}: {e}", protocol.name()),
        }
    }
    Ok(())
}
