use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anyhow::{Context, Result};

const BIN: &str = env!("CARGO_BIN_EXE_xgait");

fn xgait(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn xgait")
}

fn code(args: &[&str]) -> i32 {
    xgait(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) -> bool {
    let fa = files(a);
    fa == files(b) && fa.iter().all(|f| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap())
}

fn small_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let c = code(&["generate-data", "--subjects", "4", "--seqs", "3", "--frames", "8", "--seed", "2", "--out", s(&data)]);
    assert_eq!(c, 0);
    data
}

const TINY: [&str; 6] = [
    "--set",
    "schedule.total_iters=4",
    "--set",
    "batch.subjects=2",
    "--set",
    "train.checkpoint_every=0",
];

fn train_tiny(data: &Path, out: &Path) -> PathBuf {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend(TINY);
    let o = xgait(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("checkpoints").join("final.bin")
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["generate-data"]), 2);
    assert_eq!(code(&["train", "--set", "nodot", "--out", "/tmp/x"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e");
    assert_eq!(
        code(&["evaluate", "--checkpoint", "missing.bin", "--mode", "bogus", "--out", s(&out)]),
        2
    );
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&["intersect", "--input", s(&missing), "--out", s(&dir.path().join("o"))]), 3);
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = dir.path().join("run");
    assert_eq!(code(&["train", "--data", s(&empty), "--out", s(&o)]), 3);
}

#[test]
fn generate_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let c = code(&["generate-data", "--subjects", "3", "--seqs", "2", "--frames", "8", "--noise", "0.3", "--seed", "4", "--out", s(out)]);
        assert_eq!(c, 0);
    }
    assert!(same_tree(&a, &b));
    assert!(files(&a).iter().any(|f| f.ends_with("manifest.json")));
}

#[test]
fn intersect_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let out = dir.path().join("inter");
    assert_eq!(code(&["intersect", "--input", s(&data), "--out", s(&out)]), 0);
    assert_eq!(files(&data).len(), files(&out).len());
    assert_eq!(code(&["intersect", "--input", s(&data), "--out", s(&data)]), 3);
}

#[test]
fn exploding_learning_rate_exits_4_with_dump() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let data = small_data(dir.path());
    let out = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&out), "--set", "schedule.base_lr=1e300"];
    args.extend(TINY);
    assert_eq!(code(&args), 4);
    let dump: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("nonfinite_dump.json"))?)?;
    assert!(dump.is_object());
    Ok(())
}

#[test]
fn train_evaluate_metrics_heatmap_round_trip() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let data = small_data(dir.path());
    let ck = train_tiny(&data, &dir.path().join("run"));
    let metrics = std::fs::read_to_string(dir.path().join("run").join("metrics.csv"))?;
    assert_eq!(metrics.lines().count(), 5);

    let eval_dir = dir.path().join("eval");
    let mut args = vec!["evaluate", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&eval_dir)];
    args.extend(TINY);
    let o = xgait(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(eval_dir.join("report.csv"))?;
    let rank1 = report.lines().nth(1).context("report row")?.to_string();

    let m_dir = dir.path().join("m");
    let dump = eval_dir.join("embeddings.bin");
    assert_eq!(code(&["metrics", "--embeddings", s(&dump), "--out", s(&m_dir)]), 0);
    let again = std::fs::read_to_string(m_dir.join("report.csv"))?;
    let pick = |row: &str| row.split(',').skip(2).take(4).map(str::to_string).collect::<Vec<_>>();
    let header: Vec<&str> = report.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[2..6], ["rank1", "rank5", "mAP", "mINP"]);
    assert_eq!(pick(&rank1), pick(again.lines().nth(1).context("metrics row")?));

    // A different model config must be refused unless forced.
    let mut other = args.clone();
    other.extend(["--set", "model.reduction_ratio=4"]);
    assert_eq!(code(&other), 2);
    other.push("--force");
    assert_eq!(code(&other), 0);

    let seq = data.join("000").join("00");
    let (h1, h2) = (dir.path().join("h1"), dir.path().join("h2"));
    for h in [&h1, &h2] {
        assert_eq!(code(&["heatmap", "--checkpoint", s(&ck), "--sequence", s(&seq), "--frames", "0,3", "--out", s(h)]), 0);
    }
    assert_eq!(files(&h1).len(), 8);
    assert!(same_tree(&h1, &h2));
    assert_eq!(code(&["heatmap", "--checkpoint", s(&ck), "--sequence", s(&seq), "--frames", "99", "--out", s(&h1)]), 3);
    Ok(())
}

#[test]
fn ablate_dry_run_lists_the_grid() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let out = dir.path().join("ab");
    assert_eq!(code(&["ablate", "--dry-run", "--out", s(&out)]), 0);
    let text = std::fs::read_to_string(out.join("ablation.csv"))?;
    assert_eq!(text.lines().count(), 22);
    Ok(())
}
