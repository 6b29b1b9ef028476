//! SGD training loop with momentum, step decay, checkpoints and a CSV log.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{Checkpoint, CheckpointMeta, RngState};
use crate::config::ExperimentConfig;
use crate::dataset::{index_dataset, load_all, sample_batch, Batch, DatasetIndex, Split, TrainPool};
use crate::error::{Error, Result};
use crate::loss::{ce_loss, total_loss, triplet_loss};
use crate::model::{ModelInput, XGait};
use crate::nn::Module;
use crate::representations::label;
use crate::CODE_VERSION;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.bin";
pub const NONFINITE_DUMP: &str = "nonfinite_dump.json";
const METRICS_HEADER: &str = "iteration,l_tri,l_ce,total,lr,active_triplets";

/// One row of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub iteration: usize,
    pub l_tri: f64,
    pub l_ce: f64,
    pub total: f64,
    pub lr: f64,
    pub active_triplets: usize,
}

impl StepStats {
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.l_tri, self.l_ce, self.total, self.lr, self.active_triplets
        )
    }
}

#[derive(Debug, Serialize)]
struct ParamNorm {
    name: String,
    value_norm: f64,
    grad_norm: f64,
    finite: bool,
}

/// Written next to the log when a step produces a non-finite value.
#[derive(Debug, Serialize)]
pub struct NonFiniteDump {
    iteration: usize,
    lr: f64,
    l_tri: f64,
    l_ce: f64,
    detail: String,
    params: Vec<ParamNorm>,
}

pub struct Trainer {
    pub config: ExperimentConfig,
    pub model: XGait,
    pub class_names: Vec<String>,
    /// Number of completed steps.
    pub iteration: usize,
    momentum: BTreeMap<String, Vec<f64>>,
    rng: ChaCha8Rng,
    last_failure: Option<NonFiniteDump>,
}

/// Sampler stream; stream 0 of the same seed initializes the model.
const SAMPLER_STREAM: u64 = 1;

impl Trainer {
    pub fn new(config: &ExperimentConfig, class_names: Vec<String>) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = XGait::new(&config.model, class_names.len(), &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(SAMPLER_STREAM);
        Ok(Self {
            config: config.clone(),
            model,
            class_names,
            iteration: 0,
            momentum: BTreeMap::new(),
            rng,
            last_failure: None,
        })
    }

    /// Resumes from `ck`; refuses a checkpoint written under another config
    /// unless `force` is set.
    pub fn from_checkpoint(config: &ExperimentConfig, ck: &Checkpoint, force: bool) -> Result<Self> {
        let found = config.fingerprint();
        if ck.meta.fingerprint != found && !force {
            return Err(Error::FingerprintMismatch {
                expected: ck.meta.fingerprint.clone(),
                found,
            });
        }
        let mut t = Self::new(config, ck.meta.class_names.clone())?;
        ck.restore_model(&mut t.model)?;
        t.momentum = ck.momentum();
        t.rng = ck.meta.rng.restore()?;
        t.iteration = ck.meta.iteration;
        Ok(t)
    }

    pub fn checkpoint(&mut self) -> Checkpoint {
        let meta = CheckpointMeta {
            iteration: self.iteration,
            fingerprint: self.config.fingerprint(),
            num_classes: self.class_names.len(),
            class_names: self.class_names.clone(),
            config: self.config.to_toml(),
            rng: RngState::capture(&self.rng),
            code_version: CODE_VERSION.to_string(),
        };
        Checkpoint::capture(meta, &mut self.model, &self.momentum)
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.config.schedule.total_iters
    }

    /// Samples a batch, computes the joint loss and applies one SGD update.
    pub fn step(&mut self, pool: &TrainPool) -> Result<StepStats> {
        let it = self.iteration + 1;
        let lr = self.config.schedule.lr_at(it);
        let b = &self.config.batch;
        let mut batch = sample_batch(pool, b.subjects, b.seqs, b.frames, &mut self.rng)?;
        if self.config.data.augment {
            let flips: Vec<bool> = (0..batch.num_sequences()).map(|_| self.rng.random_bool(0.5)).collect();
            flip_sequences(&mut batch, &flips);
        }
        let lengths = vec![batch.frames_per_seq; batch.num_sequences()];
        self.model.zero_grad();
        let input = ModelInput {
            silhouettes: &batch.silhouettes,
            parsings: &batch.parsings,
            lengths: &lengths,
        };
        let (out, cache) = match self.model.forward(input, true, true, false) {
            Ok(v) => v,
            Err(Error::NonFinite { detail, .. }) => return Err(self.fail(it, lr, f64::NAN, f64::NAN, detail)),
            Err(e) => return Err(e),
        };
        let cache = cache.expect("cache requested");
        let tri = triplet_loss(&out.embedding, &batch.labels, self.config.loss.margin)?;
        let ce = ce_loss(&out.logits, &batch.labels)?;
        let total = total_loss(tri.value, ce.value, &self.config.loss);
        if !total.is_finite() {
            return Err(self.fail(it, lr, tri.value, ce.value, "loss".into()));
        }
        let d_emb = tri.grad * self.config.loss.alpha;
        let d_logits = ce.grad * self.config.loss.beta;
        self.model.backward(&cache, &d_emb, &d_logits);
        if let Some(bad) = self
            .model
            .named_params()
            .into_iter()
            .find(|(_, p)| p.grad.iter().any(|g| !g.is_finite()))
            .map(|(n, _)| n)
        {
            return Err(self.fail(it, lr, tri.value, ce.value, format!("gradient of {bad}")));
        }
        self.apply_update(lr);
        self.iteration = it;
        Ok(StepStats {
            iteration: it,
            l_tri: tri.value,
            l_ce: ce.value,
            total,
            lr,
            active_triplets: tri.active,
        })
    }

    fn apply_update(&mut self, lr: f64) {
        let sched = &self.config.schedule;
        let mut params: Vec<_> = self.model.named_params().into_iter().filter(|(_, p)| p.trainable).collect();
        let scale = match sched.clip_grad {
            Some(max) => {
                let norm = params
                    .iter()
                    .flat_map(|(_, p)| p.grad.iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (name, p) in params.iter_mut() {
            let buf = self
                .momentum
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.len()]);
            for ((w, &g), m) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
                let g = g * scale + sched.weight_decay * *w;
                *m = sched.momentum * *m + g;
                *w -= lr * *m;
            }
        }
    }

    fn fail(&mut self, iteration: usize, lr: f64, l_tri: f64, l_ce: f64, detail: String) -> Error {
        let params = self
            .model
            .named_params()
            .into_iter()
            .map(|(name, p)| ParamNorm {
                name,
                value_norm: p.value.iter().map(|v| v * v).sum::<f64>().sqrt(),
                grad_norm: p.grad.iter().map(|v| v * v).sum::<f64>().sqrt(),
                finite: p.value.iter().chain(&p.grad).all(|v| v.is_finite()),
            })
            .collect();
        self.last_failure = Some(NonFiniteDump {
            iteration,
            lr,
            l_tri,
            l_ce,
            detail: detail.clone(),
            params,
        });
        Error::NonFinite { iteration, detail }
    }

    /// Diagnostics of the last non-finite abort, if any.
    pub fn failure_dump(&self) -> Option<&NonFiniteDump> {
        self.last_failure.as_ref()
    }
}

/// Mirrors the selected sequences left-right, swapping left/right part labels.
pub fn flip_sequences(batch: &mut Batch, flips: &[bool]) {
    let t = batch.frames_per_seq;
    for (i, _) in flips.iter().enumerate().filter(|(_, &f)| f) {
        let rows = i * t..(i + 1) * t;
        let mut sil = batch.silhouettes.slice_mut(s![rows.clone(), .., .., ..]);
        sil.invert_axis(Axis(3));
        let flipped = sil.to_owned();
        sil.invert_axis(Axis(3));
        sil.assign(&flipped);
        let mut par = batch.parsings.slice_mut(s![rows, .., ..]);
        par.invert_axis(Axis(2));
        let flipped = par.mapv(swap_side);
        par.invert_axis(Axis(2));
        par.assign(&flipped);
    }
}

fn swap_side(l: u8) -> u8 {
    use label::*;
    match l {
        LEFT_ARM => RIGHT_ARM,
        RIGHT_ARM => LEFT_ARM,
        LEFT_HAND => RIGHT_HAND,
        RIGHT_HAND => LEFT_HAND,
        LEFT_LEG => RIGHT_LEG,
        RIGHT_LEG => LEFT_LEG,
        LEFT_FOOT => RIGHT_FOOT,
        RIGHT_FOOT => LEFT_FOOT,
        other => other,
    }
}

/// The split named by the config, or the closed-set split.
pub fn resolve_split(cfg: &ExperimentConfig, index: &DatasetIndex) -> Result<Split> {
    match &cfg.data.split {
        Some(path) => Split::load(path),
        None => Ok(Split::closed_set(index)),
    }
}

pub fn load_train_pool(cfg: &ExperimentConfig) -> Result<(DatasetIndex, TrainPool)> {
    let index = index_dataset(&cfg.data.root)?;
    let split = resolve_split(cfg, &index)?;
    let entries: Vec<_> = split.train_entries(&index)?.into_iter().cloned().collect();
    if entries.is_empty() {
        return Err(Error::Split("no training sequences".into()));
    }
    let pool = TrainPool::new(load_all(&entries)?);
    Ok((index, pool))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub iterations: usize,
    pub last: Option<StepStats>,
}

pub fn checkpoint_path(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("ckpt_{iteration:06}.bin"))
}

/// Trains to `schedule.total_iters`, optionally continuing from `resume`.
pub fn train(cfg: &ExperimentConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    let (_, pool) = load_train_pool(cfg)?;
    train_on_pool(cfg, &pool, out_dir, resume)
}

pub fn train_on_pool(
    cfg: &ExperimentConfig,
    pool: &TrainPool,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.meta.class_names != pool.class_names {
                return Err(Error::Checkpoint("checkpoint classes differ from the training pool".into()));
            }
            Trainer::from_checkpoint(cfg, &ck, false)?
        }
        None => Trainer::new(cfg, pool.class_names.clone())?,
    };
    let ckpt_dir = out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cfg_path = out_dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let log_path = out_dir.join(METRICS_FILE);
    let mut log = open_log(&log_path, trainer.iteration)?;

    let mut last = None;
    let every = cfg.train.checkpoint_every;
    while !trainer.finished() {
        let stats = match trainer.step(pool) {
            Ok(s) => s,
            Err(e) => {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                if let Some(dump) = trainer.failure_dump() {
                    let path = out_dir.join(NONFINITE_DUMP);
                    let text = serde_json::to_string_pretty(dump).map_err(|e| Error::Serde(e.to_string()))?;
                    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                }
                return Err(e);
            }
        };
        writeln!(log, "{}", stats.csv_row()).map_err(|e| Error::io(&log_path, e))?;
        if stats.iteration % 50 == 0 || stats.iteration == 1 {
            log::info!(
                "iter {} total {:.4} tri {:.4} ce {:.4} lr {} active {}",
                stats.iteration,
                stats.total,
                stats.l_tri,
                stats.l_ce,
                stats.lr,
                stats.active_triplets
            );
        }
        if every > 0 && stats.iteration % every == 0 {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            trainer.checkpoint().save(&checkpoint_path(out_dir, stats.iteration))?;
        }
        last = Some(stats);
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let final_checkpoint = ckpt_dir.join(FINAL_CHECKPOINT);
    trainer.checkpoint().save(&final_checkpoint)?;
    Ok(TrainSummary {
        final_checkpoint,
        iterations: trainer.iteration,
        last,
    })
}

/// Opens the metrics log for appending, keeping only rows up to `keep`.
fn open_log(path: &Path, keep: usize) -> Result<std::io::BufWriter<std::fs::File>> {
    let mut kept = vec![METRICS_HEADER.to_string()];
    if keep > 0 && path.exists() {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        for line in BufReader::new(file).lines().skip(1) {
            let line = line.map_err(|e| Error::io(path, e))?;
            let it: usize = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| Error::Layout(format!("bad metrics row {line:?}")))?;
            if it <= keep {
                kept.push(line);
            }
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for line in kept {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

/// Reads a metrics log back.
pub fn read_metrics(path: &Path) -> Result<Vec<StepStats>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Layout(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::Layout(e.to_string()))?;
        let f = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Layout(format!("bad metrics field {i}")))
        };
        out.push(StepStats {
            iteration: f(0)? as usize,
            l_tri: f(1)?,
            l_ce: f(2)?,
            total: f(3)?,
            lr: f(4)?,
            active_triplets: f(5)? as usize,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representations::{FRAME_HEIGHT, FRAME_WIDTH};
    use ndarray::{Array3, Array4};

    #[test]
    fn flip_twice_is_identity_and_swaps_sides() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 4;
        let sil = Array4::from_shape_fn((n, 1, FRAME_HEIGHT, FRAME_WIDTH), |_| rng.random_range(0..2) as f64);
        let par = Array3::from_shape_fn((n, FRAME_HEIGHT, FRAME_WIDTH), |_| rng.random_range(0..12u8));
        let mut batch = Batch {
            silhouettes: sil.clone(),
            parsings: par.clone(),
            labels: vec![0, 1],
            frames_per_seq: 2,
        };
        flip_sequences(&mut batch, &[false, true]);
        assert_eq!(batch.silhouettes.slice(s![..2, .., .., ..]), sil.slice(s![..2, .., .., ..]));
        assert_eq!(batch.silhouettes[[2, 0, 5, 0]], sil[[2, 0, 5, FRAME_WIDTH - 1]]);
        assert_eq!(batch.parsings[[3, 7, 1]], swap_side(par[[3, 7, FRAME_WIDTH - 2]]));
        flip_sequences(&mut batch, &[false, true]);
        assert_eq!(batch.silhouettes, sil);
        assert_eq!(batch.parsings, par);
    }

    #[test]
    fn log_truncates_to_resume_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(METRICS_FILE);
        let mut w = open_log(&path, 0).unwrap();
        for i in 1..=4 {
            let s = StepStats {
                iteration: i,
                l_tri: 0.5,
                l_ce: 1.0,
                total: 1.5,
                lr: 0.1,
                active_triplets: 3,
            };
            writeln!(w, "{}", s.csv_row()).unwrap();
        }
        drop(w);
        drop(open_log(&path, 2).unwrap());
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(rows[0].total, 1.5);
    }
}
