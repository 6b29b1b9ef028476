//! Command-line front end. `run` returns the process exit code.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{self, ablation_grid, run_ablation, ABLATION_HEADER};
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Preset};
use crate::dataset::{index_dataset, intersect_dataset, LoadedSequence, SequenceEntry};
use crate::error::{Error, Result};
use crate::eval::{
    compute_metrics, distance_matrix, format_report, read_embedding_dump, run_protocol, write_embedding_dump,
    write_report, EvalMode, Protocol, ReportMeta,
};
use crate::heatmap::write_heatmaps;
use crate::representations::io;
use crate::synthgait::{generate_dataset, GenerateOptions};
use crate::trainer::{load_train_pool, resolve_split, train};
use crate::CODE_VERSION;

#[derive(Debug, Parser)]
#[command(name = "xgait", version, about = "Silhouette + parsing gait recognition on synthetic walkers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic paired silhouette/parsing dataset.
    GenerateData(GenerateArgs),
    /// Train a model from a config.
    Train(TrainArgs),
    /// Evaluate checkpoints under a retrieval protocol.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the full ablation grid.
    Ablate(AblateArgs),
    /// Restrict a dataset to the common silhouette/parsing support.
    Intersect(IntersectArgs),
    /// Write channel-energy heatmaps for one sequence.
    Heatmap(HeatmapArgs),
    /// Recompute metrics from an embedding dump.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    pub subjects: usize,
    #[arg(long, default_value_t = 4)]
    pub seqs: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    /// Parsing boundary corruption probability in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep every sequence at the side view.
    #[arg(long)]
    pub fixed_view: bool,
    /// Render every sequence in the normal condition.
    #[arg(long)]
    pub normal_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config; without one the preset defaults apply.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "tiny")]
    pub preset: String,
    /// Dotted override, e.g. `schedule.total_iters=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set data.root=DIR`.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(d) = &self.data {
            overrides.push(format!("data.root={}", toml_string(&d.to_string_lossy())));
        }
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_overrides(self.preset.parse::<Preset>()?, &overrides),
        }
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// One checkpoint, or sil-only and par-only checkpoints for distance fusion.
    #[arg(long, required = true, num_args = 1..=2)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "xgait")]
    pub mode: String,
    #[arg(long, default_value = "standard")]
    pub protocol: String,
    /// Accept checkpoints trained under a different config.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// List the grid with fingerprints without training.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct IntersectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Sequence directory holding `sil/` and `par/`.
    #[arg(long)]
    pub sequence: PathBuf,
    /// Frame indices to render.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub frames: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Embedding dump written by `evaluate`.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Also write report files here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::GenerateData(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Intersect(a) => cmd_intersect(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Metrics(a) => cmd_metrics(&a),
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let opts = GenerateOptions {
        subjects: a.subjects,
        seqs_per_subject: a.seqs,
        frames: a.frames,
        noise: a.noise,
        master_seed: a.seed,
        vary_view: !a.fixed_view,
        vary_condition: !a.normal_only,
    };
    let index = generate_dataset(&opts, &a.out)?;
    println!(
        "wrote {} sequences of {} subjects to {}",
        index.entries.len(),
        index.num_subjects(),
        a.out.display()
    );
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let summary = train(&cfg, &a.out, a.resume.as_deref())?;
    if let Some(s) = summary.last {
        println!(
            "iteration {} total {:.4} (tri {:.4}, ce {:.4})",
            s.iteration, s.total, s.l_tri, s.l_ce
        );
    }
    println!("checkpoint {}", summary.final_checkpoint.display());
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let mode: EvalMode = a.mode.parse()?;
    let protocol: Protocol = a.protocol.parse()?;
    let mut models = Vec::new();
    let mut fingerprints = Vec::new();
    for path in &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        let stored = ck.config()?;
        let mut expected = cfg.clone();
        if mode == EvalMode::DistanceFusion {
            expected.model.fusion_mode = stored.model.fusion_mode;
        }
        let found = expected.fingerprint();
        if found != ck.meta.fingerprint && !a.force {
            return Err(Error::FingerprintMismatch {
                expected: ck.meta.fingerprint.clone(),
                found,
            });
        }
        fingerprints.push(ck.meta.fingerprint[..12].to_string());
        models.push(ck.build_model()?);
    }
    let index = index_dataset(&cfg.data.root)?;
    let split = resolve_split(&cfg, &index)?;
    let mut refs: Vec<_> = models.iter_mut().collect();
    let run = run_protocol(&index, &split, &mut refs, mode, protocol, cfg.eval.max_frames)?;
    let meta = ReportMeta {
        mode: mode.name().to_string(),
        fingerprint: fingerprints.join("+"),
        seed: cfg.seed,
        code_version: CODE_VERSION.to_string(),
    };
    write_report(&a.out, &run.report, &meta)?;
    let table = format_report(&run.report, &meta);
    let path = a.out.join("report.txt");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    for (i, (q, g)) in run.tables.iter().enumerate() {
        let name = if run.tables.len() == 1 {
            "embeddings.bin".to_string()
        } else {
            format!("embeddings_{i}.bin")
        };
        write_embedding_dump(&a.out.join(name), q, g)?;
    }
    print!("{table}");
    Ok(())
}

pub fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let rows = ablation_grid(&cfg);
    let results = if a.dry_run {
        ablation::dry_run(&rows, &a.out)?
    } else {
        let (index, pool) = load_train_pool(&cfg)?;
        let split = resolve_split(&cfg, &index)?;
        run_ablation(&rows, &index, &split, &pool, &a.out)?
    };
    println!("{ABLATION_HEADER}");
    for r in &results {
        println!("{}", r.csv_row());
    }
    Ok(())
}

pub fn cmd_intersect(a: &IntersectArgs) -> Result<()> {
    let index = intersect_dataset(&a.input, &a.out)?;
    println!("wrote {} intersected sequences to {}", index.entries.len(), a.out.display());
    Ok(())
}

pub fn cmd_heatmap(a: &HeatmapArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let mut model = ck.build_model()?;
    let seq = load_sequence_dir(&a.sequence)?;
    let (sil, par) = seq.frames(&(0..seq.len()).collect::<Vec<_>>());
    let written = write_heatmaps(&mut model, &sil, &par, &a.frames, &a.out)?;
    println!("wrote {} heatmaps to {}", written.len(), a.out.display());
    Ok(())
}

/// Loads a standalone `<dir>/{sil,par}` sequence.
pub fn load_sequence_dir(dir: &Path) -> Result<LoadedSequence> {
    let name = |p: Option<&Path>| {
        p.and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let sil_dir = dir.join(io::SIL_DIR);
    let entry = SequenceEntry {
        subject_id: name(dir.parent()),
        seq_id: name(Some(dir)),
        frame_count: io::list_frames(&sil_dir)?.len(),
        sil_dir,
        par_dir: dir.join(io::PAR_DIR),
        view: "unknown".into(),
        condition: "unknown".into(),
    };
    LoadedSequence::load(&entry)
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let (q, g) = read_embedding_dump(&a.embeddings)?;
    let d = distance_matrix(&q, &g)?;
    let report = compute_metrics(&d, &q.subjects, &g.subjects, "dump")?;
    let meta = ReportMeta {
        mode: "dump".into(),
        fingerprint: String::new(),
        seed: 0,
        code_version: CODE_VERSION.to_string(),
    };
    if let Some(out) = &a.out {
        write_report(out, &report, &meta)?;
    }
    print!("{}", format_report(&report, &meta));
    Ok(())
}
