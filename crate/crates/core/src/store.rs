//! Dataset preparation and the immutable [`VectorIndex`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ClassId = u32;

/// Norms below this are treated as degenerate embeddings.
pub const ZERO_NORM: f64 = 1e-12;

/// Accepted deviation of a stored vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

pub const MANIFEST_HEADER: [&str; 8] = [
    "record_id",
    "source_path",
    "labels",
    "dataset",
    "split",
    "patient_id",
    "content_hash",
    "class_kind",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassKind {
    Pathological,
    Anatomical,
}

impl fmt::Display for ClassKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassKind::Pathological => "pathological",
            ClassKind::Anatomical => "anatomical",
        })
    }
}

impl FromStr for ClassKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pathological" => Ok(ClassKind::Pathological),
            "anatomical" => Ok(ClassKind::Anatomical),
            other => Err(format!("unknown class kind {other:?}")),
        }
    }
}

/// One row of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub record_id: u64,
    pub source_path: String,
    pub labels: Vec<String>,
    pub dataset: String,
    pub split: Split,
    pub patient_id: Option<String>,
    pub content_hash: Option<[u8; 32]>,
    pub class_kind: ClassKind,
}

/// A raw (possibly unnormalized) embedding keyed by manifest record id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub record_id: u64,
    pub vector: Vec<f32>,
}

/// Scales `vector` to unit Euclidean norm.
///
/// The norm is accumulated in `f64`. Vectors with a norm below
/// [`ZERO_NORM`] or with non-finite components are rejected.
pub fn l2_normalize(vector: &[f32]) -> Result<Vec<f32>> {
    if vector.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { record_id: None });
    }
    let norm = vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        return Err(Error::ZeroVector { record_id: None });
    }
    Ok(vector.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

pub(crate) fn norm_f64(vector: &[f32]) -> f64 {
    vector.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Manifest CSV

pub fn read_manifest<R: Read>(reader: R) -> Result<Vec<ManifestEntry>> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::InvalidManifest {
            line: 1,
            message: format!("expected header {}", MANIFEST_HEADER.join(",")),
        });
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::InvalidManifest { line, message };
        let record_id: u64 = row[0].parse().map_err(|e| bad(format!("record_id: {e}")))?;
        if !seen.insert(record_id) {
            return Err(Error::DuplicateRecordId(record_id));
        }
        let labels: Vec<String> = row[2]
            .split('|')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if labels.is_empty() {
            return Err(Error::NoLabels(record_id));
        }
        let split = row[4].parse().map_err(bad)?;
        let patient_id = Some(row[5].to_string()).filter(|p| !p.is_empty());
        let content_hash = match &row[6] {
            "" => None,
            hex_str => {
                if hex_str.bytes().any(|b| b.is_ascii_uppercase()) {
                    return Err(bad("content_hash must be lowercase hex".into()));
                }
                let mut digest = [0u8; 32];
                hex::decode_to_slice(hex_str, &mut digest).map_err(|e| bad(format!("content_hash: {e}")))?;
                Some(digest)
            }
        };
        let class_kind = row[7].parse().map_err(bad)?;
        entries.push(ManifestEntry {
            record_id,
            source_path: row[1].to_string(),
            labels,
            dataset: row[3].to_string(),
            split,
            patient_id,
            content_hash,
            class_kind,
        });
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(writer: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(MANIFEST_HEADER)?;
    for e in entries {
        csv.write_record([
            e.record_id.to_string(),
            e.source_path.clone(),
            e.labels.join("|"),
            e.dataset.clone(),
            e.split.to_string(),
            e.patient_id.clone().unwrap_or_default(),
            e.content_hash.map(hex::encode).unwrap_or_default(),
            e.class_kind.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Dataset preparation

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreparationRules {
    /// Datasets in which repeated content hashes are dropped (first occurrence wins).
    pub dedup_datasets: BTreeSet<String>,
    /// Datasets whose multi-label entries are dropped.
    pub multi_label_excluded: BTreeSet<String>,
    /// Datasets that get a patient-wise validation carve-out, keyed to the val fraction.
    pub patient_split: BTreeMap<String, f64>,
    /// Label harmonization map, old name to canonical name.
    pub class_aliases: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    MultiLabel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub record_id: u64,
    pub reason: DropReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientSplitSummary {
    pub dataset: String,
    pub val_fraction: f64,
    pub seed: u64,
    pub patients: usize,
    pub val_patients: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreparationLog {
    pub input_count: usize,
    pub retained_count: usize,
    pub duplicates_dropped: usize,
    pub multi_label_dropped: usize,
    pub labels_aliased: usize,
    pub dropped: Vec<DroppedRecord>,
    pub patient_splits: Vec<PatientSplitSummary>,
}

impl PreparationLog {
    /// True when no rule changed anything.
    pub fn is_empty(&self) -> bool {
        self.duplicates_dropped == 0
            && self.multi_label_dropped == 0
            && self.labels_aliased == 0
            && self.dropped.is_empty()
            && self.patient_splits.is_empty()
    }

    pub fn dropped_ids(&self) -> HashSet<u64> {
        self.dropped.iter().map(|d| d.record_id).collect()
    }
}

/// Applies label aliases, content-hash deduplication and multi-label
/// exclusion, in that order, walking the entries in file order.
pub fn prepare_manifest(
    raw: &[ManifestEntry],
    rules: &PreparationRules,
) -> Result<(Vec<ManifestEntry>, PreparationLog)> {
    if let Some(e) = raw
        .iter()
        .find(|e| rules.dedup_datasets.contains(&e.dataset) && e.content_hash.is_none())
    {
        return Err(Error::MissingHash { record_id: e.record_id });
    }

    let mut log = PreparationLog {
        input_count: raw.len(),
        ..Default::default()
    };
    let mut seen: HashSet<(&str, [u8; 32])> = HashSet::new();
    let mut prepared = Vec::with_capacity(raw.len());

    for original in raw {
        let mut entry = original.clone();
        let aliased = harmonize_labels(&mut entry.labels, &rules.class_aliases);
        if aliased {
            log.labels_aliased += 1;
        }

        if rules.dedup_datasets.contains(&entry.dataset) {
            let hash = entry.content_hash.expect("checked above");
            if !seen.insert((original.dataset.as_str(), hash)) {
                log.duplicates_dropped += 1;
                log.dropped.push(DroppedRecord {
                    record_id: entry.record_id,
                    reason: DropReason::Duplicate,
                });
                continue;
            }
        }

        if entry.labels.len() > 1 && rules.multi_label_excluded.contains(&entry.dataset) {
            log.multi_label_dropped += 1;
            log.dropped.push(DroppedRecord {
                record_id: entry.record_id,
                reason: DropReason::MultiLabel,
            });
            continue;
        }

        prepared.push(entry);
    }
    log.retained_count = prepared.len();
    Ok((prepared, log))
}

fn harmonize_labels(labels: &mut Vec<String>, aliases: &BTreeMap<String, String>) -> bool {
    if aliases.is_empty() {
        return false;
    }
    let mut changed = false;
    let mut out: Vec<String> = Vec::with_capacity(labels.len());
    for label in labels.drain(..) {
        let canonical = match aliases.get(&label) {
            Some(c) => {
                changed = true;
                c.clone()
            }
            None => label,
        };
        if !out.contains(&canonical) {
            out.push(canonical);
        }
    }
    *labels = out;
    changed
}

/// Moves a seeded random `val_fraction` of the *patients* that have train
/// samples into the validation split, together with all of their train samples.
///
/// Entries not currently in the train split are returned untouched.
pub fn patient_wise_split(
    entries: &[ManifestEntry],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, PatientSplitSummary)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    if let Some(e) = entries.iter().find(|e| e.patient_id.is_none()) {
        return Err(Error::MissingPatientId { record_id: e.record_id });
    }

    let patients: BTreeSet<&str> = entries
        .iter()
        .filter(|e| e.split == Split::Train)
        .filter_map(|e| e.patient_id.as_deref())
        .collect();
    let mut order: Vec<&str> = patients.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let val_count = (val_fraction * order.len() as f64).round() as usize;
    let val_patients: HashSet<&str> = order[..val_count].iter().copied().collect();

    let mut out = entries.to_vec();
    let (mut train_samples, mut val_samples) = (0, 0);
    for entry in out.iter_mut().filter(|e| e.split == Split::Train) {
        if val_patients.contains(entry.patient_id.as_deref().unwrap_or_default()) {
            entry.split = Split::Val;
            val_samples += 1;
        } else {
            train_samples += 1;
        }
    }

    let summary = PatientSplitSummary {
        dataset: entries.first().map(|e| e.dataset.clone()).unwrap_or_default(),
        val_fraction,
        seed,
        patients: order.len(),
        val_patients: val_count,
        train_samples,
        val_samples,
    };
    Ok((out, summary))
}

/// Runs [`patient_wise_split`] for every dataset named in `rules.patient_split`,
/// in dataset-name order, recording a summary per dataset in `log`.
pub fn apply_patient_splits(
    entries: Vec<ManifestEntry>,
    rules: &PreparationRules,
    seed: u64,
    log: &mut PreparationLog,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = entries;
    for (dataset, &fraction) in &rules.patient_split {
        let positions: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| &e.dataset == dataset)
            .map(|(i, _)| i)
            .collect();
        let subset: Vec<ManifestEntry> = positions.iter().map(|&i| entries[i].clone()).collect();
        let (split, mut summary) = patient_wise_split(&subset, fraction, seed)?;
        summary.dataset = dataset.clone();
        for (pos, entry) in positions.into_iter().zip(split) {
            entries[pos] = entry;
        }
        log.patient_splits.push(summary);
    }
    Ok(entries)
}

// ---------------------------------------------------------------------------
// Class table

/// Bidirectional class-name / class-id map. Ids follow sorted name order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ClassTable {
    names: Vec<String>,
    kinds: Vec<ClassKind>,
    by_name: HashMap<String, ClassId>,
}

impl ClassTable {
    pub fn from_manifest(entries: &[ManifestEntry]) -> Result<Self> {
        let mut classes: BTreeMap<&str, ClassKind> = BTreeMap::new();
        for entry in entries {
            for label in &entry.labels {
                match classes.get(label.as_str()) {
                    Some(&kind) if kind != entry.class_kind => return Err(Error::ConflictingClassKind(label.clone())),
                    Some(_) => {}
                    None => {
                        classes.insert(label, entry.class_kind);
                    }
                }
            }
        }
        let (names, kinds) = classes.into_iter().map(|(n, k)| (n.to_string(), k)).unzip();
        Self::from_parts(names, kinds)
    }

    pub fn from_parts(names: Vec<String>, kinds: Vec<ClassKind>) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: kinds.len(),
            });
        }
        let mut by_name = HashMap::with_capacity(names.len());
        for (id, name) in names.iter().enumerate() {
            if by_name.insert(name.clone(), id as ClassId).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate class name {name:?}")));
            }
        }
        Ok(Self { names, kinds, by_name })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id as usize]
    }

    pub fn kind(&self, id: ClassId) -> ClassKind {
        self.kinds[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ClassKind] {
        &self.kinds
    }
}

// ---------------------------------------------------------------------------
// Vector index

/// Finalized, immutable collection of unit-norm vectors with aligned labels
/// and record ids. Share it by reference (or clone the `Arc`'d class table
/// through [`VectorIndex::subset`]); nothing mutates it after construction.
#[derive(Clone, Debug)]
pub struct VectorIndex {
    dimension: usize,
    vectors: Vec<f32>,
    labels: Vec<ClassId>,
    record_ids: Vec<u64>,
    classes: Arc<ClassTable>,
    positions: HashMap<u64, usize>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dimension == other.dimension
            && self.labels == other.labels
            && self.record_ids == other.record_ids
            && *self.classes == *other.classes
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl VectorIndex {
    /// Assembles an index from already-normalized rows, checking every norm.
    pub fn from_normalized(
        dimension: usize,
        vectors: Vec<f32>,
        labels: Vec<ClassId>,
        record_ids: Vec<u64>,
        classes: Arc<ClassTable>,
    ) -> Result<Self> {
        let index = Self::assemble(dimension, vectors, labels, record_ids, classes)?;
        for row in 0..index.len() {
            index.check_row_norm(row)?;
        }
        Ok(index)
    }

    /// Like [`Self::from_normalized`] but only checks the given rows' norms.
    pub(crate) fn assemble_spot_checked(
        dimension: usize,
        vectors: Vec<f32>,
        labels: Vec<ClassId>,
        record_ids: Vec<u64>,
        classes: Arc<ClassTable>,
        rows: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let index = Self::assemble(dimension, vectors, labels, record_ids, classes)?;
        for row in rows {
            index.check_row_norm(row)?;
        }
        Ok(index)
    }

    fn assemble(
        dimension: usize,
        vectors: Vec<f32>,
        labels: Vec<ClassId>,
        record_ids: Vec<u64>,
        classes: Arc<ClassTable>,
    ) -> Result<Self> {
        let count = record_ids.len();
        if labels.len() != count {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: count,
            });
        }
        if count > 0 && dimension == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if vectors.len() != count * dimension {
            return Err(Error::DimensionMismatch {
                expected: count * dimension,
                found: vectors.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes.len()) {
            return Err(Error::UnknownClass(format!("class id {bad}")));
        }
        let mut positions = HashMap::with_capacity(count);
        for (row, &id) in record_ids.iter().enumerate() {
            if positions.insert(id, row).is_some() {
                return Err(Error::DuplicateRecordId(id));
            }
        }
        Ok(Self {
            dimension,
            vectors,
            labels,
            record_ids,
            classes,
            positions,
        })
    }

    fn check_row_norm(&self, row: usize) -> Result<()> {
        let norm = norm_f64(self.vector(row));
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE || !norm.is_finite() {
            return Err(Error::NormViolation { row, norm });
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dimension..(row + 1) * self.dimension]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn label(&self, row: usize) -> ClassId {
        self.labels[row]
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn record_id(&self, row: usize) -> u64 {
        self.record_ids[row]
    }

    pub fn record_ids(&self) -> &[u64] {
        &self.record_ids
    }

    pub fn classes(&self) -> &ClassTable {
        &self.classes
    }

    pub fn shared_classes(&self) -> Arc<ClassTable> {
        Arc::clone(&self.classes)
    }

    pub fn row_of(&self, record_id: u64) -> Option<usize> {
        self.positions.get(&record_id).copied()
    }

    /// `(record_id, vector)` pairs in row order, the shape batch search takes.
    pub fn queries(&self) -> Vec<(u64, &[f32])> {
        (0..self.len()).map(|r| (self.record_ids[r], self.vector(r))).collect()
    }

    /// Number of stored rows per class id, indexed by class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Rows of each class in ascending row order, indexed by class id.
    pub fn rows_by_class(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.classes.len()];
        for (row, &l) in self.labels.iter().enumerate() {
            rows[l as usize].push(row);
        }
        rows
    }

    /// A new index holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut vectors = Vec::with_capacity(rows.len() * self.dimension);
        for &r in rows {
            vectors.extend_from_slice(self.vector(r));
        }
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        let record_ids: Vec<u64> = rows.iter().map(|&r| self.record_ids[r]).collect();
        let positions = record_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self {
            dimension: self.dimension,
            vectors,
            labels,
            record_ids,
            classes: Arc::clone(&self.classes),
            positions,
        }
    }
}

/// Builds the index of all records whose manifest split equals `split_filter`.
///
/// The class table is derived from the whole manifest, so indexes built for
/// different splits of the same manifest share class ids.
pub fn build_index<I>(embeddings: I, manifest: &[ManifestEntry], split_filter: Split) -> Result<VectorIndex>
where
    I: IntoIterator<Item = EmbeddingRecord>,
{
    let classes = Arc::new(ClassTable::from_manifest(manifest)?);
    let by_id: HashMap<u64, &ManifestEntry> = manifest.iter().map(|e| (e.record_id, e)).collect();

    let mut dimension = None;
    let mut seen = HashSet::new();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut record_ids = Vec::new();

    for record in embeddings {
        let d = *dimension.get_or_insert(record.vector.len());
        if record.vector.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: record.vector.len(),
            });
        }
        let entry = by_id
            .get(&record.record_id)
            .ok_or(Error::UnknownRecordId(record.record_id))?;
        if !seen.insert(record.record_id) {
            return Err(Error::DuplicateRecordId(record.record_id));
        }
        if entry.split != split_filter {
            continue;
        }
        let [label] = entry.labels.as_slice() else {
            return Err(Error::MultiLabel(record.record_id));
        };
        let unit = l2_normalize(&record.vector).map_err(|e| e.with_record(record.record_id))?;
        vectors.extend_from_slice(&unit);
        labels.push(classes.id(label).expect("class table covers manifest labels"));
        record_ids.push(record.record_id);
    }

    VectorIndex::from_normalized(dimension.unwrap_or(0), vectors, labels, record_ids, classes)
}
