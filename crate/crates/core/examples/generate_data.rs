//! Renders a small paired silhouette/parsing dataset and summarizes it.
//!
//! `cargo run --release --example generate_data -- /tmp/walkers`

use std::collections::BTreeMap;
use std::path::PathBuf;

use xgait::synthgait::{generate_dataset, GenerateOptions, Manifest};

fn main() -> anyhow::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xgait_walkers"));
    let opts = GenerateOptions {
        subjects: 6,
        seqs_per_subject: 3,
        frames: 16,
        noise: 0.2,
        master_seed: 1,
        ..Default::default()
    };
    let index = generate_dataset(&opts, &out)?;
    let mut by_condition: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &index.entries {
        *by_condition.entry(e.condition.as_str()).or_default() += 1;
    }
    println!("{} sequences of {} subjects in {}", index.entries.len(), index.num_subjects(), out.display());
    println!("conditions: {by_condition:?}");
    let manifest = Manifest::load(&out)?;
    println!("manifest lists {} subjects", manifest.subjects.len());
    Ok(())
}
