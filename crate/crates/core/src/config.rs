//! Experiment configuration: TOML files layered over a preset, with dotted
//! `key=value` overrides and a content fingerprint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Tiny,
    Full,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Preset::Tiny),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?} (tiny|full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub root: PathBuf,
    /// Split file; without one every subject trains and is evaluated closed-set.
    pub split: Option<PathBuf>,
    /// Random horizontal flips of training sequences.
    pub augment: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub total_iters: usize,
    /// Global gradient-norm clip; off by default.
    pub clip_grad: Option<f64>,
}

impl ScheduleConfig {
    /// Milestones at 1/3, 2/3 and 5/6 of the run (rounded up; duplicates and
    /// milestones at or past the end are dropped).
    pub fn scaled(total_iters: usize) -> Self {
        Self {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: scaled_milestones(total_iters),
            decay: 0.1,
            total_iters,
            clip_grad: None,
        }
    }

    /// Learning rate used for the step numbered `iteration` (1-based).
    pub fn lr_at(&self, iteration: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| iteration >= m).count();
        self.base_lr * self.decay.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.milestones.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.total_iters) {
            return Err(Error::Config("milestones must be below total_iters".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight_decay >= 0".into()));
        }
        if self.clip_grad.is_some_and(|c| c <= 0.0) {
            return Err(Error::Config("clip_grad must be positive".into()));
        }
        Ok(())
    }
}

pub fn scaled_milestones(total_iters: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (num, den) in [(1, 3), (2, 3), (5, 6)] {
        let m = (total_iters * num).div_ceil(den);
        if m < total_iters && out.last().is_none_or(|&l| l < m) {
            out.push(m);
        }
    }
    out
}

/// `subjects x seqs x frames` sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub subjects: usize,
    pub seqs: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub max_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
    pub batch: BatchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// The parts of a config that change what gets trained.
#[derive(Serialize)]
struct FingerprintView<'a> {
    seed: u64,
    augment: bool,
    model: &'a ModelConfig,
    loss: &'a LossConfig,
    schedule: &'a ScheduleConfig,
    batch: &'a BatchConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Tiny => Self {
                preset,
                seed: 0,
                data: DataConfig {
                    root: PathBuf::from("data"),
                    split: None,
                    augment: false,
                },
                model: ModelConfig::tiny(),
                loss: LossConfig::default(),
                schedule: ScheduleConfig::scaled(2000),
                batch: BatchConfig {
                    subjects: 8,
                    seqs: 2,
                    frames: 4,
                },
                train: TrainConfig { checkpoint_every: 500 },
                eval: EvalConfig { max_frames: 720 },
            },
            Preset::Full => Self {
                preset,
                model: ModelConfig::full(),
                schedule: ScheduleConfig {
                    milestones: vec![400_000, 800_000, 1_000_000],
                    ..ScheduleConfig::scaled(1_200_000)
                },
                batch: BatchConfig {
                    subjects: 32,
                    seqs: 2,
                    frames: 30,
                },
                train: TrainConfig {
                    checkpoint_every: 10_000,
                },
                ..Self::preset(Preset::Tiny)
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        if self.batch.subjects < 2 || self.batch.seqs == 0 || self.batch.frames == 0 {
            return Err(Error::Config("batch needs >= 2 subjects and nonzero seqs/frames".into()));
        }
        if self.eval.max_frames == 0 {
            return Err(Error::Config("eval.max_frames must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the training-relevant sections (paths excluded).
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            seed: self.seed,
            augment: self.data.augment,
            model: &self.model,
            loss: &self.loss,
            schedule: &self.schedule,
            batch: &self.batch,
        };
        let json = serde_json::to_string(&view).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Short form used in tables.
    pub fn short_fingerprint(&self) -> String {
        self.fingerprint()[..12].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parses TOML text on top of its preset (the `preset` key, default tiny)
    /// and applies `key=value` overrides. Unless milestones are given
    /// explicitly they are rescaled to `total_iters`.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let file: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut preset = match file.get("preset") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => Preset::Tiny,
        };
        if let Some(p) = overrides.iter().find_map(|o| o.strip_prefix("preset=")) {
            preset = p.trim().trim_matches('"').parse()?;
        }
        let explicit_milestones = file
            .get("schedule")
            .and_then(|s| s.as_table())
            .is_some_and(|s| s.contains_key("milestones"))
            || overrides
                .iter()
                .any(|o| o.split_once('=').is_some_and(|(k, _)| k.trim() == "schedule.milestones"));
        let mut merged = toml::Table::try_from(Self::preset(preset)).expect("config serializes");
        merge(&mut merged, file);
        for o in overrides {
            apply_override(&mut merged, o)?;
        }
        if !explicit_milestones {
            if let Some(toml::Value::Table(sched)) = merged.get_mut("schedule") {
                if let Some(total) = sched.get("total_iters").and_then(|v| v.as_integer()) {
                    let ms = scaled_milestones(total.max(0) as usize);
                    sched.insert(
                        "milestones".into(),
                        toml::Value::Array(ms.into_iter().map(|m| toml::Value::Integer(m as i64)).collect()),
                    );
                }
            }
        }
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    /// A preset with overrides applied, no file.
    pub fn from_overrides(preset: Preset, overrides: &[String]) -> Result<Self> {
        let head = format!("preset = \"{}\"\n", preset_name(preset));
        Self::from_toml_str(&head, overrides)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}

fn preset_name(p: Preset) -> &'static str {
    match p {
        Preset::Tiny => "tiny",
        Preset::Full => "full",
    }
}

/// Recursively overlays `top` onto `base`. Unknown keys are kept so that
/// deserialization can reject them.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is parsed as TOML, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override {spec:?} has an empty key")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(Error::Config(format!("override {key:?}: {part:?} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::DivisionMode;

    #[test]
    fn empty_file_is_the_tiny_preset() {
        let cfg = ExperimentConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(Preset::Tiny));
        assert_eq!(cfg.schedule.milestones, vec![667, 1334, 1667]);
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Tiny, Preset::Full] {
            let cfg = ExperimentConfig::preset(p);
            assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml(), &[]).unwrap(), cfg);
        }
        let full = ExperimentConfig::preset(Preset::Full);
        assert_eq!(full.model.encoder.output_hw(), (16, 11));
        assert_eq!(full.model.total_strips(), 124);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[model]\nbogus = 1\n", &[]).is_err());
        assert!(ExperimentConfig::from_toml_str("", &["loss.nope=2".into()]).is_err());
        assert!(ExperimentConfig::from_toml_str("typo = 3\n", &[]).is_err());
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let cfg = ExperimentConfig::from_toml_str(
            "seed = 3\n",
            &[
                "model.division=simple".into(),
                "loss.margin=0.3".into(),
                "model.encoder.stage_channels=[4,4,8,8]".into(),
                "data.root=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.model.division, DivisionMode::Simple);
        assert_eq!(cfg.loss.margin, 0.3);
        assert_eq!(cfg.model.encoder.stage_channels, vec![4, 4, 8, 8]);
        assert_eq!(cfg.data.root, PathBuf::from("/tmp/x"));
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }

    #[test]
    fn fingerprint_ignores_paths_only() {
        let a = ExperimentConfig::preset(Preset::Tiny);
        let mut b = a.clone();
        b.data.root = PathBuf::from("elsewhere");
        b.train.checkpoint_every = 7;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.model.reduction_ratio = 8;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn schedule_decays_at_milestones() {
        let s = ScheduleConfig::scaled(2000);
        assert_eq!(s.lr_at(1), 0.1);
        assert!((s.lr_at(s.milestones[0]) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(2000) - 1e-4).abs() < 1e-15);
        let bad = ScheduleConfig {
            milestones: vec![5, 3],
            ..s
        };
        assert!(bad.validate().is_err());
        assert_eq!(ScheduleConfig::scaled(3000).milestones, vec![1000, 2000, 2500]);
        assert_eq!(scaled_milestones(3), vec![1, 2]);
    }

    #[test]
    fn total_iters_override_rescales_milestones() {
        let cfg = ExperimentConfig::from_toml_str("", &["schedule.total_iters=200".into()]).unwrap();
        assert_eq!(cfg.schedule.milestones, vec![67, 134, 167]);
        let pinned = ExperimentConfig::from_toml_str(
            "",
            &["schedule.total_iters=200".into(), "schedule.milestones=[50, 100]".into()],
        )
        .unwrap();
        assert_eq!(pinned.schedule.milestones, vec![50, 100]);
        let full = ExperimentConfig::preset(Preset::Full);
        assert_eq!(full.schedule.milestones, scaled_milestones(1_200_000));
    }
}
