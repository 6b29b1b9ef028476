//! The ablation grid: representation and fusion modes, division variants,
//! backbone/head sharing and the reduction-ratio sweep.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::dataset::{DatasetIndex, Split, TrainPool};
use crate::error::{Error, Result};
use crate::eval::{run_protocol, EvalMode, EvalReport, Protocol};
use crate::fusion::DivisionMode;
use crate::model::{FusionMode, XGait};
use crate::trainer::{train_on_pool, FINAL_CHECKPOINT};

pub const REDUCTION_RATIOS: [usize; 6] = [1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub group: &'static str,
    pub name: String,
    pub mode: EvalMode,
    /// One config, or sil-only then par-only for distance fusion.
    pub configs: Vec<ExperimentConfig>,
}

impl AblationRow {
    /// Short fingerprints of the row's configs joined by `+`.
    pub fn fingerprint(&self) -> String {
        self.configs
            .iter()
            .map(|c| c.short_fingerprint())
            .collect::<Vec<_>>()
            .join("+")
    }
}

fn with(base: &ExperimentConfig, edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = base.clone();
    c.model.fusion_mode = FusionMode::Xgait;
    c.model.disable_gcm = false;
    c.model.disable_pcm = false;
    edit(&mut c);
    c
}

/// Every row of the grid, derived from `base`.
pub fn ablation_grid(base: &ExperimentConfig) -> Vec<AblationRow> {
    let row = |group, name: &str, mode, configs| AblationRow {
        group,
        name: name.to_string(),
        mode,
        configs,
    };
    let full = with(base, |_| {});
    let sil = with(base, |c| c.model.fusion_mode = FusionMode::SilOnly);
    let par = with(base, |c| c.model.fusion_mode = FusionMode::ParOnly);
    let mut rows = vec![
        row("representation", "sil-only", EvalMode::SilOnly, vec![sil.clone()]),
        row("representation", "par-only", EvalMode::ParOnly, vec![par.clone()]),
        row("representation", "xgait", EvalMode::Xgait, vec![full.clone()]),
        row("fusion", "distance-fusion", EvalMode::DistanceFusion, vec![sil, par]),
        row(
            "fusion",
            "feature-fusion",
            EvalMode::FeatureFusion,
            vec![with(base, |c| c.model.fusion_mode = FusionMode::FeatureFusion)],
        ),
        row(
            "fusion",
            "+gcm",
            EvalMode::Xgait,
            vec![with(base, |c| c.model.disable_pcm = true)],
        ),
        row(
            "fusion",
            "+pcm",
            EvalMode::Xgait,
            vec![with(base, |c| c.model.disable_gcm = true)],
        ),
        row("fusion", "gcm+pcm", EvalMode::Xgait, vec![full.clone()]),
    ];
    for (name, division) in [
        ("simple", DivisionMode::Simple),
        ("fixed-0.75", DivisionMode::Fixed),
        ("learnable", DivisionMode::Learnable),
    ] {
        rows.push(row(
            "division",
            name,
            EvalMode::Xgait,
            vec![with(base, |c| c.model.division = division)],
        ));
    }
    for (backbone, fmh) in [(false, false), (true, false), (false, true), (true, true)] {
        let name = format!(
            "backbone-{}/fmh-{}",
            if backbone { "shared" } else { "indep" },
            if fmh { "shared" } else { "indep" }
        );
        rows.push(row(
            "shareability",
            &name,
            EvalMode::Xgait,
            vec![with(base, |c| {
                c.model.share_backbone = backbone;
                c.model.share_fmh = fmh;
            })],
        ));
    }
    for r in REDUCTION_RATIOS {
        rows.push(row(
            "reduction",
            &format!("r={r}"),
            EvalMode::Xgait,
            vec![with(base, |c| c.model.reduction_ratio = r)],
        ));
    }
    rows
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationResult {
    pub group: String,
    pub row: String,
    pub mode: String,
    pub fingerprint: String,
    pub report: Option<EvalReport>,
}

pub const ABLATION_HEADER: &str = "group,row,mode,fingerprint,rank1,rank5,mAP,mINP";

impl AblationResult {
    fn new(row: &AblationRow, report: Option<EvalReport>) -> Self {
        Self {
            group: row.group.to_string(),
            row: row.name.clone(),
            mode: row.mode.name().to_string(),
            fingerprint: row.fingerprint(),
            report,
        }
    }

    pub fn csv_row(&self) -> String {
        let metrics = match &self.report {
            Some(r) => format!(
                "{:.4},{:.4},{:.4},{:.4}",
                100.0 * r.rank1,
                100.0 * r.rank5,
                100.0 * r.map,
                100.0 * r.minp
            ),
            None => ",,,".to_string(),
        };
        format!("{},{},{},{},{metrics}", self.group, self.row, self.mode, self.fingerprint)
    }
}

/// Trains each distinct config of `rows` once (reusing a finished run under
/// `out_dir/runs/<fingerprint>`), evaluates every row and writes
/// `ablation.csv`.
pub fn run_ablation(
    rows: &[AblationRow],
    index: &DatasetIndex,
    split: &Split,
    pool: &TrainPool,
    out_dir: &Path,
) -> Result<Vec<AblationResult>> {
    let mut models: BTreeMap<String, XGait> = BTreeMap::new();
    let mut results = Vec::new();
    for row in rows {
        for cfg in &row.configs {
            let fp = cfg.short_fingerprint();
            if models.contains_key(&fp) {
                continue;
            }
            let run_dir = out_dir.join("runs").join(&fp);
            let final_path = run_dir.join("checkpoints").join(FINAL_CHECKPOINT);
            let reusable = final_path.exists()
                && Checkpoint::load(&final_path).is_ok_and(|c| c.meta.fingerprint == cfg.fingerprint());
            if !reusable {
                log::info!("ablation: training {} ({})", row.name, fp);
                train_on_pool(cfg, pool, &run_dir, None)?;
            }
            models.insert(fp, Checkpoint::load(&final_path)?.build_model()?);
        }
        let fps: Vec<String> = row.configs.iter().map(|c| c.short_fingerprint()).collect();
        let mut picked: Vec<XGait> = fps.iter().map(|f| models[f].clone()).collect();
        let mut refs: Vec<&mut XGait> = picked.iter_mut().collect();
        let max_frames = row.configs[0].eval.max_frames;
        let report = run_protocol(index, split, &mut refs, row.mode, Protocol::Standard, max_frames)?.report;
        results.push(AblationResult::new(row, Some(report)));
    }
    write_results(&results, out_dir)?;
    Ok(results)
}

/// The grid without metrics.
pub fn dry_run(rows: &[AblationRow], out_dir: &Path) -> Result<Vec<AblationResult>> {
    let results: Vec<_> = rows.iter().map(|r| AblationResult::new(r, None)).collect();
    write_results(&results, out_dir)?;
    Ok(results)
}

fn write_results(results: &[AblationResult], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut text = format!("{ABLATION_HEADER}\n");
    for r in results {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    let path = out_dir.join("ablation.csv");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
