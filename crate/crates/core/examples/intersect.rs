//! Restricts a noisy dataset to the common silhouette/parsing support.

use xgait::dataset::{intersect_dataset, LoadedSequence};
use xgait::synthgait::{generate_dataset, GenerateOptions};

fn foreground(seq: &LoadedSequence) -> (f64, usize) {
    let (sil, par) = seq.frames(&(0..seq.len()).collect::<Vec<_>>());
    (sil.sum(), par.iter().filter(|&&l| l != 0).count())
}

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let src = dir.path().join("noisy");
    let opts = GenerateOptions {
        subjects: 3,
        seqs_per_subject: 2,
        frames: 8,
        noise: 0.5,
        master_seed: 8,
        ..Default::default()
    };
    let before = generate_dataset(&opts, &src)?;
    let after = intersect_dataset(&src, &dir.path().join("intersected"))?;
    for (a, b) in before.entries.iter().zip(&after.entries) {
        let (s0, p0) = foreground(&LoadedSequence::load(a)?);
        let (s1, p1) = foreground(&LoadedSequence::load(b)?);
        println!("{}: sil {s0} -> {s1}, parsing {p0} -> {p1}", a.key());
        assert_eq!(s1 as usize, p1);
    }
    Ok(())
}
