//! Lists the ablation grid, then trains and scores its representation rows
//! for a handful of iterations.

use xgait::ablation::{ablation_grid, run_ablation, ABLATION_HEADER};
use xgait::config::{ExperimentConfig, Preset, ScheduleConfig};
use xgait::synthgait::{generate_dataset, GenerateOptions};
use xgait::trainer::{load_train_pool, resolve_split};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("data");
    let opts = GenerateOptions {
        subjects: 4,
        seqs_per_subject: 2,
        frames: 8,
        master_seed: 9,
        ..Default::default()
    };
    generate_dataset(&opts, &root)?;
    let mut base = ExperimentConfig::preset(Preset::Tiny);
    base.data.root = root;
    base.schedule = ScheduleConfig::scaled(3);
    base.batch.subjects = 2;
    base.train.checkpoint_every = 0;

    let rows = ablation_grid(&base);
    for r in &rows {
        println!("{:13} {:26} {}", r.group, r.name, r.fingerprint());
    }

    let (index, pool) = load_train_pool(&base)?;
    let split = resolve_split(&base, &index)?;
    let picked: Vec<_> = rows.into_iter().filter(|r| r.group == "representation").collect();
    let results = run_ablation(&picked, &index, &split, &pool, dir.path())?;
    println!("{ABLATION_HEADER}");
    for r in &results {
        println!("{}", r.csv_row());
    }
    Ok(())
}
