//! Presets, dotted overrides, fingerprints and the scaled step schedule.

use xgait::config::{scaled_milestones, ExperimentConfig, Preset};

fn main() -> anyhow::Result<()> {
    let base = ExperimentConfig::preset(Preset::Tiny);
    println!("tiny preset fingerprint {}", base.short_fingerprint());

    let cfg = ExperimentConfig::from_overrides(
        Preset::Tiny,
        &["schedule.total_iters=3000".into(), "model.reduction_ratio=8".into()],
    )?;
    println!("overridden fingerprint  {}", cfg.short_fingerprint());
    println!("milestones {:?}", cfg.schedule.milestones);
    assert_eq!(cfg.schedule.milestones, scaled_milestones(3000));
    for it in [1, 999, 1000, 2000, 2500, 3000] {
        println!("lr at {it:4}: {:.2e}", cfg.schedule.lr_at(it));
    }

    let text = cfg.to_toml();
    let back = ExperimentConfig::from_toml_str(&text, &[])?;
    println!("TOML round trip keeps the fingerprint: {}", back.fingerprint() == cfg.fingerprint());
    println!("bad override: {}", ExperimentConfig::from_overrides(Preset::Tiny, &["nodot".into()]).unwrap_err());
    Ok(())
}
