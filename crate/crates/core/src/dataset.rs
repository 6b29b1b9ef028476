//! Dataset indexing, train/query/gallery splits, identity-balanced batch
//! sampling and unordered frame sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::representations::{intersect, io, LabelGrid, FRAME_HEIGHT, FRAME_WIDTH};
use crate::synthgait::{Manifest, MANIFEST_FILE};

/// Upper bound on frames consumed per sequence at inference.
pub const MAX_INFERENCE_FRAMES: usize = 720;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceEntry {
    pub subject_id: String,
    pub seq_id: String,
    pub sil_dir: PathBuf,
    pub par_dir: PathBuf,
    pub view: String,
    pub condition: String,
    pub frame_count: usize,
}

impl SequenceEntry {
    /// `subject/seq`, unique within a dataset.
    pub fn key(&self) -> String {
        format!("{}/{}", self.subject_id, self.seq_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<SequenceEntry>,
    /// Dense class index per subject, in sorted subject order.
    pub id_to_label: BTreeMap<String, usize>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter_map(|p| Some((p.file_name()?.to_str()?.to_string(), p)))
        .collect();
    out.sort();
    Ok(out)
}

/// Scans `<root>/<subject>/<seq>/{sil,par}` and validates the pairing.
///
/// View and condition come from `manifest.json` when present.
pub fn index_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::Layout(format!("{} is not a directory", root.display())));
    }
    let meta: BTreeMap<(String, String), (String, String)> = match Manifest::load(root) {
        Ok(m) => m
            .sequences
            .into_iter()
            .map(|s| ((s.subject, s.seq), (s.view, s.condition)))
            .collect(),
        Err(_) => BTreeMap::new(),
    };
    let mut entries = Vec::new();
    let mut mismatched = Vec::new();
    for (subject_id, subject_dir) in sorted_subdirs(root)? {
        for (seq_id, seq_dir) in sorted_subdirs(&subject_dir)? {
            let sil_dir = seq_dir.join(io::SIL_DIR);
            let par_dir = seq_dir.join(io::PAR_DIR);
            if !sil_dir.is_dir() && !par_dir.is_dir() {
                continue;
            }
            let key = format!("{subject_id}/{seq_id}");
            if !sil_dir.is_dir() || !par_dir.is_dir() {
                mismatched.push(format!("{key} (missing modality)"));
                continue;
            }
            let n_sil = io::list_frames(&sil_dir)?.len();
            let n_par = io::list_frames(&par_dir)?.len();
            if n_sil != n_par || n_sil == 0 {
                mismatched.push(format!("{key} (sil {n_sil}, par {n_par})"));
                continue;
            }
            let (view, condition) = meta
                .get(&(subject_id.clone(), seq_id.clone()))
                .cloned()
                .unwrap_or_else(|| ("unknown".into(), "unknown".into()));
            entries.push(SequenceEntry {
                subject_id: subject_id.clone(),
                seq_id,
                sil_dir,
                par_dir,
                view,
                condition,
                frame_count: n_sil,
            });
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::ModalityMismatch(mismatched));
    }
    if entries.is_empty() {
        return Err(Error::Layout(format!(
            "no <subject>/<seq>/{{sil,par}} sequences under {}",
            root.display()
        )));
    }
    let subjects: BTreeSet<&str> = entries.iter().map(|e| e.subject_id.as_str()).collect();
    let id_to_label = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i))
        .collect();
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        id_to_label,
    })
}

impl DatasetIndex {
    pub fn num_subjects(&self) -> usize {
        self.id_to_label.len()
    }

    pub fn find(&self, key: &str) -> Option<&SequenceEntry> {
        self.entries.iter().find(|e| e.key() == key)
    }
}

/// Frames of one sequence held in memory as `T x 64 x 44` grids.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub entry: SequenceEntry,
    pub sil: Array3<u8>,
    pub par: Array3<u8>,
}

impl LoadedSequence {
    pub fn len(&self) -> usize {
        self.sil.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frames whose silhouette is empty are dropped with a warning.
    pub fn load(entry: &SequenceEntry) -> Result<Self> {
        let sil_files = io::list_frames(&entry.sil_dir)?;
        let par_files = io::list_frames(&entry.par_dir)?;
        let mut sils = Vec::new();
        let mut pars = Vec::new();
        for (sp, pp) in sil_files.iter().zip(&par_files) {
            let sil = io::read_silhouette(sp)?;
            let par = io::read_parsing(pp)?;
            if sil.dims() != (FRAME_HEIGHT, FRAME_WIDTH) || par.dims() != sil.dims() {
                return Err(Error::Layout(format!(
                    "{} is {:?}; frames must be aligned to {FRAME_HEIGHT}x{FRAME_WIDTH}",
                    sp.display(),
                    sil.dims()
                )));
            }
            if !sil.has_foreground() {
                log::warn!("dropping empty frame {}", sp.display());
                continue;
            }
            sils.push(sil);
            pars.push(par);
        }
        if sils.is_empty() {
            return Err(Error::Layout(format!("{} has no usable frames", entry.key())));
        }
        let t = sils.len();
        let mut sil = Array3::zeros((t, FRAME_HEIGHT, FRAME_WIDTH));
        let mut par = Array3::zeros((t, FRAME_HEIGHT, FRAME_WIDTH));
        for (i, (s, p)) in sils.iter().zip(&pars).enumerate() {
            sil.slice_mut(s![i, .., ..]).assign(s.pixels());
            par.slice_mut(s![i, .., ..]).assign(p.labels());
        }
        Ok(Self {
            entry: entry.clone(),
            sil,
            par,
        })
    }

    /// Gathers the given frames as model inputs.
    pub fn frames(&self, indices: &[usize]) -> (Array4<f64>, Array3<u8>) {
        let mut sil = Array4::zeros((indices.len(), 1, FRAME_HEIGHT, FRAME_WIDTH));
        let mut par = Array3::zeros((indices.len(), FRAME_HEIGHT, FRAME_WIDTH));
        for (i, &t) in indices.iter().enumerate() {
            sil.slice_mut(s![i, 0, .., ..])
                .assign(&self.sil.slice(s![t, .., ..]).mapv(f64::from));
            par.slice_mut(s![i, .., ..]).assign(&self.par.slice(s![t, .., ..]));
        }
        (sil, par)
    }
}

pub fn load_all(entries: &[SequenceEntry]) -> Result<Vec<LoadedSequence>> {
    entries.iter().map(LoadedSequence::load).collect()
}

/// `n` frame indices in sampled (unsorted) order; with replacement only when
/// the sequence is shorter than `n`.
pub fn sample_frames_unordered<R: Rng + ?Sized>(total: usize, n: usize, rng: &mut R) -> Vec<usize> {
    assert!(total >= 1, "cannot sample frames from an empty sequence");
    if total < n {
        (0..n).map(|_| rng.random_range(0..total)).collect()
    } else {
        index::sample(rng, total, n).into_vec()
    }
}

/// Uniform temporal subsampling down to at most `max` frames.
pub fn cap_frames(total: usize, max: usize) -> Vec<usize> {
    if total <= max {
        (0..total).collect()
    } else {
        (0..max).map(|i| i * total / max).collect()
    }
}

/// `P x K x T` training batch, frames flattened sequence-major.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(P*K*T, 1, 64, 44)` with values in {0, 1}.
    pub silhouettes: Array4<f64>,
    /// `(P*K*T, 64, 44)` integer part labels.
    pub parsings: Array3<u8>,
    /// One class index per sequence.
    pub labels: Vec<usize>,
    pub frames_per_seq: usize,
}

impl Batch {
    pub fn num_sequences(&self) -> usize {
        self.labels.len()
    }
}

/// Training sequences grouped by dense class index.
#[derive(Debug, Clone)]
pub struct TrainPool {
    pub sequences: Vec<LoadedSequence>,
    pub labels: Vec<usize>,
    pub by_class: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl TrainPool {
    /// Classes are the sorted distinct subjects of `sequences`.
    pub fn new(sequences: Vec<LoadedSequence>) -> Self {
        let class_names: Vec<String> = sequences
            .iter()
            .map(|s| s.entry.subject_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let lookup: BTreeMap<&str, usize> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let labels: Vec<usize> = sequences
            .iter()
            .map(|s| lookup[s.entry.subject_id.as_str()])
            .collect();
        let mut by_class = vec![Vec::new(); class_names.len()];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        Self {
            sequences,
            labels,
            by_class,
            class_names,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Samples `subjects` distinct classes, `seqs` sequences each (with
/// replacement for classes that have fewer), and `frames` unordered frames
/// per sequence.
pub fn sample_batch<R: Rng + ?Sized>(
    pool: &TrainPool,
    subjects: usize,
    seqs: usize,
    frames: usize,
    rng: &mut R,
) -> Result<Batch> {
    if subjects > pool.num_classes() || subjects == 0 {
        return Err(Error::InsufficientSubjects {
            requested: subjects,
            available: pool.num_classes(),
        });
    }
    let n = subjects * seqs * frames;
    let mut silhouettes = Array4::zeros((n, 1, FRAME_HEIGHT, FRAME_WIDTH));
    let mut parsings = Array3::zeros((n, FRAME_HEIGHT, FRAME_WIDTH));
    let mut labels = Vec::with_capacity(subjects * seqs);
    let mut row = 0;
    for class in index::sample(rng, pool.num_classes(), subjects) {
        let members = &pool.by_class[class];
        let picks: Vec<usize> = if members.len() >= seqs {
            index::sample(rng, members.len(), seqs).into_vec()
        } else {
            (0..seqs).map(|_| rng.random_range(0..members.len())).collect()
        };
        for p in picks {
            let seq = &pool.sequences[members[p]];
            for t in sample_frames_unordered(seq.len(), frames, rng) {
                silhouettes
                    .slice_mut(s![row, 0, .., ..])
                    .assign(&seq.sil.slice(s![t, .., ..]).mapv(f64::from));
                parsings
                    .slice_mut(s![row, .., ..])
                    .assign(&seq.par.slice(s![t, .., ..]));
                row += 1;
            }
            labels.push(class);
        }
    }
    Ok(Batch {
        silhouettes,
        parsings,
        labels,
        frames_per_seq: frames,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubjectRole {
    Train,
    Test,
    /// Closed-set use: non-query sequences train, queries and the rest evaluate.
    Both,
}

impl SubjectRole {
    fn as_str(self) -> &'static str {
        match self {
            SubjectRole::Train => "train",
            SubjectRole::Test => "test",
            SubjectRole::Both => "both",
        }
    }

    pub fn trains(self) -> bool {
        matches!(self, SubjectRole::Train | SubjectRole::Both)
    }

    pub fn tests(self) -> bool {
        matches!(self, SubjectRole::Test | SubjectRole::Both)
    }
}

/// Subject roles plus the query sequences; other test sequences form the gallery.
///
/// Text form, one directive per line, `#` comments:
///
/// ```text
/// subject 000 train
/// subject 001 test
/// query 001/03
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    pub subjects: BTreeMap<String, SubjectRole>,
    pub queries: BTreeSet<String>,
}

impl Split {
    pub fn parse(text: &str) -> Result<Self> {
        let mut split = Split::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["subject", id, role] => {
                    let role = match *role {
                        "train" => SubjectRole::Train,
                        "test" => SubjectRole::Test,
                        "both" => SubjectRole::Both,
                        other => {
                            return Err(Error::Split(format!("line {}: unknown role {other}", n + 1)))
                        }
                    };
                    split.subjects.insert(id.to_string(), role);
                }
                ["query", key] => {
                    split.queries.insert(key.to_string());
                }
                _ => return Err(Error::Split(format!("line {}: cannot parse {line:?}", n + 1))),
            }
        }
        Ok(split)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# xgait split\n");
        for (id, role) in &self.subjects {
            let _ = writeln!(out, "subject {id} {}", role.as_str());
        }
        for q in &self.queries {
            let _ = writeln!(out, "query {q}");
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Every subject both trains and tests; its last sequence is held out as the query.
    pub fn closed_set(index: &DatasetIndex) -> Self {
        let mut split = Split::default();
        for e in &index.entries {
            split.subjects.insert(e.subject_id.clone(), SubjectRole::Both);
        }
        split.queries = last_sequence_per_subject(index, |_| true);
        split
    }

    /// The first `n_train` subjects train; the rest test with one query each.
    pub fn open_set(index: &DatasetIndex, n_train: usize) -> Self {
        let mut split = Split::default();
        for (id, &label) in &index.id_to_label {
            let role = if label < n_train {
                SubjectRole::Train
            } else {
                SubjectRole::Test
            };
            split.subjects.insert(id.clone(), role);
        }
        split.queries = last_sequence_per_subject(index, |s| index.id_to_label[s] >= n_train);
        split
    }

    fn role(&self, subject: &str) -> Result<SubjectRole> {
        self.subjects
            .get(subject)
            .copied()
            .ok_or_else(|| Error::Split(format!("subject {subject} has no role")))
    }

    /// Non-query sequences of training subjects.
    pub fn train_entries<'a>(&self, index: &'a DatasetIndex) -> Result<Vec<&'a SequenceEntry>> {
        let mut out = Vec::new();
        for e in &index.entries {
            if self.role(&e.subject_id)?.trains() && !self.queries.contains(&e.key()) {
                out.push(e);
            }
        }
        Ok(out)
    }

    /// `(queries, gallery)` over test subjects.
    pub fn eval_entries<'a>(
        &self,
        index: &'a DatasetIndex,
    ) -> Result<(Vec<&'a SequenceEntry>, Vec<&'a SequenceEntry>)> {
        for q in &self.queries {
            if index.find(q).is_none() {
                return Err(Error::Split(format!("query {q} is not in the dataset")));
            }
        }
        let mut queries = Vec::new();
        let mut gallery = Vec::new();
        for e in &index.entries {
            if !self.role(&e.subject_id)?.tests() {
                continue;
            }
            if self.queries.contains(&e.key()) {
                queries.push(e);
            } else {
                gallery.push(e);
            }
        }
        if queries.is_empty() {
            return Err(Error::Split("no query sequences among test subjects".into()));
        }
        Ok((queries, gallery))
    }
}

/// Writes the Sil*/Par* copy of the dataset at `src` under `dst`: every
/// frame pair restricted to the common support of both modalities.
pub fn intersect_dataset(src: &Path, dst: &Path) -> Result<DatasetIndex> {
    if src == dst {
        return Err(Error::Layout("intersection output must differ from its input".into()));
    }
    let index = index_dataset(src)?;
    for e in &index.entries {
        let out = io::sequence_dir(dst, &e.subject_id, &e.seq_id);
        let sil_out = out.join(io::SIL_DIR);
        let par_out = out.join(io::PAR_DIR);
        std::fs::create_dir_all(&sil_out).map_err(|err| Error::io(&sil_out, err))?;
        std::fs::create_dir_all(&par_out).map_err(|err| Error::io(&par_out, err))?;
        let sil_files = io::list_frames(&e.sil_dir)?;
        let par_files = io::list_frames(&e.par_dir)?;
        for (sp, pp) in sil_files.iter().zip(&par_files) {
            let (sil, par) = intersect(&io::read_silhouette(sp)?, &io::read_parsing(pp)?)?;
            io::write_silhouette(&sil_out.join(sp.file_name().expect("frame file")), &sil)?;
            io::write_parsing(&par_out.join(pp.file_name().expect("frame file")), &par)?;
        }
    }
    let manifest = src.join(MANIFEST_FILE);
    if manifest.exists() {
        let target = dst.join(MANIFEST_FILE);
        std::fs::copy(&manifest, &target).map_err(|e| Error::io(&target, e))?;
    }
    index_dataset(dst)
}

fn last_sequence_per_subject(index: &DatasetIndex, keep: impl Fn(&str) -> bool) -> BTreeSet<String> {
    let mut last: BTreeMap<&str, &SequenceEntry> = BTreeMap::new();
    for e in &index.entries {
        if keep(&e.subject_id) {
            last.insert(&e.subject_id, e);
        }
    }
    last.values().map(|e| e.key()).collect()
}
