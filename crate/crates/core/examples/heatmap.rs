//! Channel-energy heatmaps of the four intermediate maps for one sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xgait::config::{ExperimentConfig, Preset};
use xgait::dataset::LoadedSequence;
use xgait::heatmap::write_heatmaps;
use xgait::model::XGait;
use xgait::synthgait::{generate_dataset, GenerateOptions};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let root = dir.path().join("data");
    let opts = GenerateOptions {
        subjects: 2,
        seqs_per_subject: 1,
        frames: 8,
        master_seed: 6,
        ..Default::default()
    };
    let index = generate_dataset(&opts, &root)?;
    let seq = LoadedSequence::load(&index.entries[0])?;
    let (sil, par) = seq.frames(&(0..seq.len()).collect::<Vec<_>>());

    let cfg = ExperimentConfig::preset(Preset::Tiny);
    let mut model = XGait::new(&cfg.model, 2, &mut ChaCha8Rng::seed_from_u64(0))?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| dir.path().join("heat"));
    for path in write_heatmaps(&mut model, &sil, &par, &[0, 4], &out)? {
        println!("{}", path.display());
    }
    Ok(())
}
