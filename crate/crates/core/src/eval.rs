//! Retrieval evaluation: strip-averaged Euclidean distances, Rank-k, mAP and
//! mINP, query/gallery protocols and fusion modes.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use serde::Serialize;

use crate::dataset::{cap_frames, DatasetIndex, LoadedSequence, SequenceEntry, Split};
use crate::error::{Error, Result};
use crate::model::{FusionMode, XGait};
use crate::synthgait::condition;

/// Per-sequence embeddings in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// Sequence keys (`subject/seq`).
    pub ids: Vec<String>,
    pub subjects: Vec<String>,
    pub conditions: Vec<String>,
    /// `(n, strips, d)`.
    pub embeddings: Array3<f64>,
}

impl EmbeddingTable {
    pub fn empty(strips: usize, dim: usize) -> Self {
        Self {
            ids: Vec::new(),
            subjects: Vec::new(),
            conditions: Vec::new(),
            embeddings: Array3::zeros((0, strips, dim)),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
            conditions: idx.iter().map(|&i| self.conditions[i].clone()).collect(),
            embeddings: self.embeddings.select(ndarray::Axis(0), idx),
        }
    }
}

/// Embeds every sequence using all of its frames, subsampled uniformly to at
/// most `max_frames`.
pub fn extract_embeddings(model: &mut XGait, entries: &[&SequenceEntry], max_frames: usize) -> Result<EmbeddingTable> {
    let strips = model.config.total_strips();
    let dim = model.config.embed_dim;
    let mut table = EmbeddingTable::empty(strips, dim);
    let mut rows = Vec::with_capacity(entries.len() * strips * dim);
    for e in entries {
        let seq = LoadedSequence::load(e)?;
        let emb = embed_loaded(model, &seq, max_frames)?;
        rows.extend(emb.iter().copied());
        table.ids.push(e.key());
        table.subjects.push(e.subject_id.clone());
        table.conditions.push(e.condition.clone());
    }
    table.embeddings = Array3::from_shape_vec((entries.len(), strips, dim), rows).expect("row count");
    Ok(table)
}

pub fn embed_loaded(model: &mut XGait, seq: &LoadedSequence, max_frames: usize) -> Result<Array2<f64>> {
    let (sil, par) = seq.frames(&cap_frames(seq.len(), max_frames));
    model.embed_sequence(&sil, &par)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub values: Array2<f64>,
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    /// `true` where the pair is excluded (same sequence).
    pub excluded: Array2<bool>,
}

/// Mean over strips of the per-strip Euclidean distance.
pub fn distance_matrix(queries: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<DistanceMatrix> {
    let (nq, sq, dq) = queries.embeddings.dim();
    let (ng, sg, dg) = gallery.embeddings.dim();
    if (sq, dq) != (sg, dg) {
        return Err(Error::DimMismatch(format!("queries {sq}x{dq}, gallery {sg}x{dg}")));
    }
    let mut values = Array2::zeros((nq, ng));
    for i in 0..nq {
        let q = queries.embeddings.index_axis(ndarray::Axis(0), i);
        for j in 0..ng {
            let g = gallery.embeddings.index_axis(ndarray::Axis(0), j);
            let mut acc = 0.0;
            for (qs, gs) in q.outer_iter().zip(g.outer_iter()) {
                acc += qs.iter().zip(gs.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
            values[[i, j]] = if sq == 0 { 0.0 } else { acc / sq as f64 };
        }
    }
    let excluded = Array2::from_shape_fn((nq, ng), |(i, j)| queries.ids[i] == gallery.ids[j]);
    Ok(DistanceMatrix {
        values,
        query_ids: queries.ids.clone(),
        gallery_ids: gallery.ids.clone(),
        excluded,
    })
}

/// Elementwise sum of two branch distance matrices over the same ids.
pub fn distance_fusion(a: &DistanceMatrix, b: &DistanceMatrix) -> Result<DistanceMatrix> {
    if a.values.dim() != b.values.dim() || a.query_ids != b.query_ids || a.gallery_ids != b.gallery_ids {
        return Err(Error::ShapeMismatch(format!(
            "distance matrices {:?} and {:?} over different ids",
            a.values.dim(),
            b.values.dim()
        )));
    }
    Ok(DistanceMatrix {
        values: &a.values + &b.values,
        query_ids: a.query_ids.clone(),
        gallery_ids: a.gallery_ids.clone(),
        excluded: ndarray::Zip::from(&a.excluded)
            .and(&b.excluded)
            .map_collect(|&x, &y| x || y),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    pub rank1: f64,
    pub rank5: f64,
    pub map: f64,
    pub minp: f64,
    /// Queries with at least one relevant gallery item, in query order.
    pub query_ids: Vec<String>,
    pub ap: Vec<f64>,
    pub inp: Vec<f64>,
    /// 1-based rank of the first correct match per valid query.
    pub first_hit: Vec<usize>,
    pub skipped_queries: usize,
}

/// Gallery indices sorted by distance, ties by gallery index, excluded
/// pairs removed.
pub fn ranked_gallery(d: &DistanceMatrix, query: usize) -> Vec<usize> {
    let row = d.values.row(query);
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| !d.excluded[[query, j]]).collect();
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order
}

/// Rank-1/5, mAP and mINP given subject labels of queries and gallery.
pub fn compute_metrics(
    d: &DistanceMatrix,
    query_labels: &[String],
    gallery_labels: &[String],
    protocol: &str,
) -> Result<EvalReport> {
    let (nq, ng) = d.values.dim();
    if query_labels.len() != nq || gallery_labels.len() != ng {
        return Err(Error::ShapeMismatch(format!(
            "{nq}x{ng} distances with {} query and {} gallery labels",
            query_labels.len(),
            gallery_labels.len()
        )));
    }
    if d.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite {
            iteration: 0,
            detail: "distance matrix has negative or non-finite entries".into(),
        });
    }
    let mut report = EvalReport {
        protocol: protocol.to_string(),
        rank1: 0.0,
        rank5: 0.0,
        map: 0.0,
        minp: 0.0,
        query_ids: Vec::new(),
        ap: Vec::new(),
        inp: Vec::new(),
        first_hit: Vec::new(),
        skipped_queries: 0,
    };
    for q in 0..nq {
        let ranked = ranked_gallery(d, q);
        let hits: Vec<usize> = ranked
            .iter()
            .enumerate()
            .filter(|(_, &g)| gallery_labels[g] == query_labels[q])
            .map(|(r, _)| r + 1)
            .collect();
        if hits.is_empty() {
            report.skipped_queries += 1;
            continue;
        }
        let ap = hits.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>() / hits.len() as f64;
        let inp = hits.len() as f64 / *hits.last().expect("nonempty") as f64;
        report.query_ids.push(d.query_ids[q].clone());
        report.ap.push(ap);
        report.inp.push(inp);
        report.first_hit.push(hits[0]);
    }
    let n = report.ap.len();
    if n == 0 {
        return Err(Error::NoValidQueries);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    report.rank1 = report.first_hit.iter().filter(|&&r| r <= 1).count() as f64 / n as f64;
    report.rank5 = report.first_hit.iter().filter(|&&r| r <= 5).count() as f64 / n as f64;
    report.map = mean(&report.ap);
    report.minp = mean(&report.inp);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Xgait,
    SilOnly,
    ParOnly,
    FeatureFusion,
    /// Sum of sil-only and par-only distance matrices.
    DistanceFusion,
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::Xgait,
        EvalMode::SilOnly,
        EvalMode::ParOnly,
        EvalMode::FeatureFusion,
        EvalMode::DistanceFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Xgait => "xgait",
            EvalMode::SilOnly => "sil-only",
            EvalMode::ParOnly => "par-only",
            EvalMode::FeatureFusion => "feature-fusion",
            EvalMode::DistanceFusion => "distance-fusion",
        }
    }

    /// Fusion modes of the models this mode evaluates.
    pub fn model_modes(self) -> Vec<FusionMode> {
        match self {
            EvalMode::Xgait => vec![FusionMode::Xgait],
            EvalMode::SilOnly => vec![FusionMode::SilOnly],
            EvalMode::ParOnly => vec![FusionMode::ParOnly],
            EvalMode::FeatureFusion => vec![FusionMode::FeatureFusion],
            EvalMode::DistanceFusion => vec![FusionMode::SilOnly, FusionMode::ParOnly],
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Query/gallery protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Protocol {
    /// Split queries against every other test sequence.
    Standard,
    /// Test sequences with a full outfit change query the normal ones.
    ClFull,
    /// Upper-garment change.
    ClUp,
    /// Lower-garment change.
    ClDn,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Standard => "standard",
            Protocol::ClFull => "cl-full",
            Protocol::ClUp => "cl-up",
            Protocol::ClDn => "cl-dn",
        }
    }

    /// Query and gallery entries of `split` under this protocol.
    pub fn select<'a>(
        self,
        split: &Split,
        index: &'a DatasetIndex,
    ) -> Result<(Vec<&'a SequenceEntry>, Vec<&'a SequenceEntry>)> {
        let (queries, gallery) = split.eval_entries(index)?;
        let cond = match self {
            Protocol::Standard => return Ok((queries, gallery)),
            Protocol::ClFull => condition::CLOTH_FULL,
            Protocol::ClUp => condition::CLOTH_UP,
            Protocol::ClDn => condition::CLOTH_DOWN,
        };
        let all: Vec<_> = queries.into_iter().chain(gallery).collect();
        let q: Vec<_> = all.iter().copied().filter(|e| e.condition == cond).collect();
        let g: Vec<_> = all.into_iter().filter(|e| e.condition == condition::NORMAL).collect();
        if q.is_empty() {
            return Err(Error::Split(format!("no test sequences with condition {cond}")));
        }
        Ok((q, g))
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Protocol::Standard, Protocol::ClFull, Protocol::ClUp, Protocol::ClDn]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown protocol {s:?}")))
    }
}

/// Output of a protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub report: EvalReport,
    pub distances: DistanceMatrix,
    /// One `(queries, gallery)` table pair per model.
    pub tables: Vec<(EmbeddingTable, EmbeddingTable)>,
}

/// Evaluates `models` under `mode`. Distance fusion takes a sil-only and a
/// par-only model; every other mode takes one model of the matching kind.
pub fn run_protocol(
    index: &DatasetIndex,
    split: &Split,
    models: &mut [&mut XGait],
    mode: EvalMode,
    protocol: Protocol,
    max_frames: usize,
) -> Result<ProtocolRun> {
    let expected = mode.model_modes();
    let mut found: Vec<FusionMode> = models.iter().map(|m| m.config.fusion_mode).collect();
    let mut want = expected.clone();
    found.sort_by_key(|m| m.name());
    want.sort_by_key(|m| m.name());
    if found != want {
        return Err(Error::Config(format!(
            "mode {} needs models {:?}, got {:?}",
            mode.name(),
            expected.iter().map(|m| m.name()).collect::<Vec<_>>(),
            found.iter().map(|m| m.name()).collect::<Vec<_>>()
        )));
    }
    let (queries, gallery) = protocol.select(split, index)?;
    let mut tables = Vec::new();
    let mut matrices = Vec::new();
    for model in models.iter_mut() {
        let q = extract_embeddings(model, &queries, max_frames)?;
        let g = extract_embeddings(model, &gallery, max_frames)?;
        matrices.push(distance_matrix(&q, &g)?);
        tables.push((q, g));
    }
    let distances = match matrices.as_slice() {
        [one] => one.clone(),
        [a, b] => distance_fusion(a, b)?,
        _ => unreachable!("mode model count checked above"),
    };
    let (q, g) = &tables[0];
    let report = compute_metrics(&distances, &q.subjects, &g.subjects, protocol.name())?;
    Ok(ProtocolRun {
        report,
        distances,
        tables,
    })
}

/// Provenance printed with every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMeta {
    pub mode: String,
    pub fingerprint: String,
    pub seed: u64,
    pub code_version: String,
}

pub const REPORT_HEADER: &str =
    "mode,protocol,rank1,rank5,mAP,mINP,valid_queries,skipped_queries,fingerprint,seed,code_version";

pub fn report_csv_row(report: &EvalReport, meta: &ReportMeta) -> String {
    format!(
        "{},{},{:.4},{:.4},{:.4},{:.4},{},{},{},{},{}",
        meta.mode,
        report.protocol,
        100.0 * report.rank1,
        100.0 * report.rank5,
        100.0 * report.map,
        100.0 * report.minp,
        report.ap.len(),
        report.skipped_queries,
        meta.fingerprint,
        meta.seed,
        meta.code_version
    )
}

/// Writes `report.csv` (summary) and `per_query.csv` into `dir`.
pub fn write_report(dir: &Path, report: &EvalReport, meta: &ReportMeta) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("report.csv");
    let text = format!("{REPORT_HEADER}\n{}\n", report_csv_row(report, meta));
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("per_query.csv");
    let mut text = String::from("query,ap,inp,first_hit\n");
    for i in 0..report.ap.len() {
        text.push_str(&format!(
            "{},{},{},{}\n",
            report.query_ids[i], report.ap[i], report.inp[i], report.first_hit[i]
        ));
    }
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Human-readable summary.
pub fn format_report(report: &EvalReport, meta: &ReportMeta) -> String {
    format!(
        "mode {} | protocol {}\n  Rank-1 {:6.2}%  Rank-5 {:6.2}%  mAP {:6.2}%  mINP {:6.2}%\n  queries {} (skipped {})\n  fingerprint {} seed {} {}\n",
        meta.mode,
        report.protocol,
        100.0 * report.rank1,
        100.0 * report.rank5,
        100.0 * report.map,
        100.0 * report.minp,
        report.ap.len(),
        report.skipped_queries,
        meta.fingerprint,
        meta.seed,
        meta.code_version
    )
}

const EMB_MAGIC: &[u8; 8] = b"XGAITEMB";

/// Binary table plus a tab-separated sidecar `<path>.txt` with
/// `id, subject, condition, role` per row.
pub fn write_embedding_dump(path: &Path, queries: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<()> {
    let (_, s, d) = queries.embeddings.dim();
    if gallery.embeddings.dim().1 != s || gallery.embeddings.dim().2 != d {
        return Err(Error::DimMismatch("query and gallery embeddings differ in shape".into()));
    }
    let mut bin = Vec::new();
    let mut txt = String::from("id\tsubject\tcondition\trole\n");
    let io = |e| Error::io(path, e);
    bin.write_all(EMB_MAGIC).map_err(io)?;
    bin.write_u32::<LittleEndian>(1).map_err(io)?;
    bin.write_u64::<LittleEndian>((queries.len() + gallery.len()) as u64).map_err(io)?;
    bin.write_u64::<LittleEndian>(s as u64).map_err(io)?;
    bin.write_u64::<LittleEndian>(d as u64).map_err(io)?;
    for (table, role) in [(queries, "query"), (gallery, "gallery")] {
        for i in 0..table.len() {
            bin.write_u32::<LittleEndian>(table.ids[i].len() as u32).map_err(io)?;
            bin.write_all(table.ids[i].as_bytes()).map_err(io)?;
            for &v in table.embeddings.index_axis(ndarray::Axis(0), i).iter() {
                bin.write_f64::<LittleEndian>(v).map_err(io)?;
            }
            txt.push_str(&format!("{}\t{}\t{}\t{role}\n", table.ids[i], table.subjects[i], table.conditions[i]));
        }
    }
    std::fs::write(path, bin).map_err(io)?;
    let side = sidecar_path(path);
    std::fs::write(&side, txt).map_err(|e| Error::io(&side, e))
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".txt");
    name.into()
}

/// Reads a dump back as `(queries, gallery)`.
pub fn read_embedding_dump(path: &Path) -> Result<(EmbeddingTable, EmbeddingTable)> {
    let bad = |m: String| Error::Layout(format!("{}: {m}", path.display()));
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let io = |e: std::io::Error| bad(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != EMB_MAGIC {
        return Err(bad("not an embedding dump".into()));
    }
    let _version = r.read_u32::<LittleEndian>().map_err(io)?;
    let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let s = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let d = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut ids = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * s * d);
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id).map_err(io)?;
        ids.push(String::from_utf8(id).map_err(|e| bad(e.to_string()))?);
        for _ in 0..s * d {
            data.push(r.read_f64::<LittleEndian>().map_err(io)?);
        }
    }
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    if rows.len() != n || rows.iter().zip(&ids).any(|(r, id)| r.len() != 4 || r[0] != id) {
        return Err(bad("sidecar does not match the binary table".into()));
    }
    let all = EmbeddingTable {
        ids,
        subjects: rows.iter().map(|r| r[1].to_string()).collect(),
        conditions: rows.iter().map(|r| r[2].to_string()).collect(),
        embeddings: Array3::from_shape_vec((n, s, d), data).expect("row count"),
    };
    let q: Vec<usize> = (0..n).filter(|&i| rows[i][3] == "query").collect();
    let g: Vec<usize> = (0..n).filter(|&i| rows[i][3] == "gallery").collect();
    Ok((all.select(&q), all.select(&g)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(emb: Array3<f64>, prefix: &str) -> EmbeddingTable {
        let n = emb.dim().0;
        EmbeddingTable {
            ids: (0..n).map(|i| format!("{prefix}{i}")).collect(),
            subjects: (0..n).map(|i| format!("s{}", i % 3)).collect(),
            conditions: vec!["nm".into(); n],
            embeddings: emb,
        }
    }

    fn matrix(values: Array2<f64>) -> DistanceMatrix {
        let (q, g) = values.dim();
        DistanceMatrix {
            excluded: Array2::from_elem((q, g), false),
            query_ids: (0..q).map(|i| format!("q{i}")).collect(),
            gallery_ids: (0..g).map(|i| format!("g{i}")).collect(),
            values,
        }
    }

    #[test]
    fn orthonormal_strips_are_sqrt2_apart() {
        let mut a = Array3::zeros((1, 2, 3));
        let mut b = Array3::zeros((1, 2, 3));
        a[[0, 0, 0]] = 1.0;
        b[[0, 0, 1]] = 1.0;
        a[[0, 1, 2]] = 1.0;
        b[[0, 1, 0]] = 1.0;
        let d = distance_matrix(&table(a.clone(), "q"), &table(b, "g")).unwrap();
        assert!((d.values[[0, 0]] - 2f64.sqrt()).abs() < 1e-15);
        let same = distance_matrix(&table(a.clone(), "q"), &table(a, "g")).unwrap();
        assert_eq!(same.values[[0, 0]], 0.0);
    }

    #[test]
    fn self_pairs_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Array::from_shape_fn((3, 2, 4), |_| rng.random::<f64>());
        let t = table(e, "x");
        let d = distance_matrix(&t, &t).unwrap();
        assert!((0..3).all(|i| d.excluded[[i, i]]));
        assert!(!ranked_gallery(&d, 1).contains(&1));
    }

    #[test]
    fn hand_case_ranks_one_and_three() {
        let d = matrix(ndarray::arr2(&[[0.1, 0.2, 0.3, 0.4, 0.5]]));
        let q = vec!["a".to_string()];
        let g: Vec<String> = ["a", "b", "a", "c", "d"].iter().map(|s| s.to_string()).collect();
        let r = compute_metrics(&d, &q, &g, "t").unwrap();
        assert!((r.ap[0] - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((r.inp[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.rank1, 1.0);
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let d = matrix(ndarray::arr2(&[[0.5, 0.5, 0.5]]));
        assert_eq!(ranked_gallery(&d, 0), vec![0, 1, 2]);
        let q = vec!["a".to_string()];
        let g: Vec<String> = ["b", "a", "a"].iter().map(|s| s.to_string()).collect();
        assert_eq!(compute_metrics(&d, &q, &g, "t").unwrap().rank1, 0.0);
    }

    #[test]
    fn queries_without_matches_are_skipped() {
        let d = matrix(ndarray::arr2(&[[0.1, 0.2], [0.3, 0.1]]));
        let q: Vec<String> = ["a", "z"].iter().map(|s| s.to_string()).collect();
        let g: Vec<String> = ["b", "a"].iter().map(|s| s.to_string()).collect();
        let r = compute_metrics(&d, &q, &g, "t").unwrap();
        assert_eq!((r.skipped_queries, r.ap.len()), (1, 1));
        let none: Vec<String> = ["y", "z"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(compute_metrics(&d, &none, &g, "t"), Err(Error::NoValidQueries)));
    }

    #[test]
    fn fusion_is_a_symmetric_sum() {
        let a = matrix(ndarray::arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]));
        let b = matrix(ndarray::arr2(&[[0.5, 0.0, 1.0], [2.0, 0.25, 0.0], [1.0, 1.0, 3.0]]));
        let ab = distance_fusion(&a, &b).unwrap();
        assert_eq!(ab, distance_fusion(&b, &a).unwrap());
        assert_eq!(ab.values, ndarray::arr2(&[[1.5, 2.0, 4.0], [6.0, 5.25, 6.0], [8.0, 9.0, 12.0]]));
        let zero = matrix(Array2::zeros((3, 3)));
        assert_eq!(distance_fusion(&a, &zero).unwrap().values, a.values);
        let small = matrix(Array2::zeros((2, 3)));
        assert!(distance_fusion(&a, &small).is_err());
    }

    #[test]
    fn dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = table(Array::from_shape_fn((2, 3, 2), |_| rng.random::<f64>()), "q");
        let g = table(Array::from_shape_fn((4, 3, 2), |_| rng.random::<f64>()), "g");
        write_embedding_dump(&path, &q, &g).unwrap();
        assert_eq!(read_embedding_dump(&path).unwrap(), (q, g));
    }

    #[test]
    fn modes_parse_by_name() {
        for m in EvalMode::ALL {
            assert_eq!(m.name().parse::<EvalMode>().unwrap(), m);
        }
        assert!("bogus".parse::<EvalMode>().is_err());
    }
}
