//! One function per subcommand. Each reads its inputs from the config,
//! writes its reports into the output directory and returns the payload.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use cbir_core::ablation::{run_ablation, AblationCurve};
use cbir_core::eval::{evaluate, MetricsReport};
use cbir_core::format::{load_index, save_index, EmbeddingFile, MAGIC};
use cbir_core::probe::{run_probe, ProbeReport};
use cbir_core::similarity::{batch_top_n, top_n};
use cbir_core::store::{
    apply_patient_splits, build_index, l2_normalize, prepare_manifest, read_manifest, write_manifest, ManifestEntry,
    PreparationLog, Split, VectorIndex,
};
use cbir_core::synth::gaussian_clusters;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{hash_file, Provenance, Report};

pub const PREPARED_MANIFEST: &str = "prepared_manifest.csv";
pub const PREPARATION_LOG: &str = "preparation_log.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const PER_CLASS_CSV: &str = "per_class.csv";
pub const PROBE_JSON: &str = "probe_report.json";
pub const LINEAR_HISTORY_CSV: &str = "linear_history.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation_summary.json";
pub const INDEX_JSON: &str = "index_summary.json";

/// Default number of hits printed by `query`.
pub const DEFAULT_QUERY_N: usize = 6;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn output_dir(config: &RunConfig) -> Result<&Path> {
    let dir = &config.paths.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn raw_manifest_path(config: &RunConfig) -> Result<&Path> {
    config
        .paths
        .manifest
        .as_deref()
        .ok_or(CliError::PathNotConfigured("manifest"))
}

fn read_manifest_file(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = File::open(path).map_err(|e| CliError::missing_or_io("manifest", path, e))?;
    Ok(read_manifest(BufReader::new(file))?)
}

fn load_embeddings(config: &RunConfig) -> Result<(PathBuf, EmbeddingFile)> {
    let path = config
        .paths
        .embeddings
        .as_deref()
        .ok_or(CliError::PathNotConfigured("embeddings"))?;
    if !path.exists() {
        return Err(CliError::MissingInput {
            what: "embeddings",
            path: path.to_path_buf(),
        });
    }
    Ok((path.to_path_buf(), EmbeddingFile::load(path)?))
}

fn load_index_file(config: &RunConfig) -> Result<(PathBuf, VectorIndex)> {
    let path = config.index_path();
    if !path.exists() {
        return Err(CliError::MissingInput { what: "index", path });
    }
    let index = load_index(&path)?;
    Ok((path, index))
}

// ---------------------------------------------------------------------------
// ingest

/// Applies the preparation rules and the patient-wise splits, then writes
/// the prepared manifest and the preparation log.
pub fn cmd_ingest(config: &RunConfig) -> Result<PreparationLog> {
    let manifest_path = raw_manifest_path(config)?;
    let raw = read_manifest_file(manifest_path)?;
    let (prepared, mut log) = prepare_manifest(&raw, &config.preparation)?;
    let prepared = apply_patient_splits(prepared, &config.preparation, config.seed, &mut log)?;

    let dir = output_dir(config)?;
    let out = dir.join(PREPARED_MANIFEST);
    let mut w = create(&out)?;
    write_manifest(&mut w, &prepared)?;
    w.flush().map_err(io_err(&out))?;

    let inputs = BTreeMap::from([("manifest".to_string(), hash_file("manifest", manifest_path)?)]);
    Report::new("ingest", Provenance::new(config, inputs), &log).write(&dir.join(PREPARATION_LOG))?;
    Ok(log)
}

/// Manifest and embeddings as used after ingestion: the prepared manifest
/// when `ingest` has run, else the raw one; embeddings of records that
/// ingestion dropped are skipped.
struct Inputs {
    manifest_path: PathBuf,
    manifest: Vec<ManifestEntry>,
    embeddings_path: PathBuf,
    embeddings: EmbeddingFile,
    dropped: HashSet<u64>,
}

impl Inputs {
    fn load(config: &RunConfig) -> Result<Self> {
        let prepared = config.output_path(PREPARED_MANIFEST);
        let manifest_path = if prepared.exists() {
            prepared
        } else {
            raw_manifest_path(config)?.to_path_buf()
        };
        let manifest = read_manifest_file(&manifest_path)?;
        let dropped = read_dropped(&config.output_path(PREPARATION_LOG))?;
        let (embeddings_path, embeddings) = load_embeddings(config)?;
        Ok(Self {
            manifest_path,
            manifest,
            embeddings_path,
            embeddings,
            dropped,
        })
    }

    fn split(&self, split: Split) -> Result<VectorIndex> {
        let records = self
            .embeddings
            .records
            .iter()
            .filter(|r| !self.dropped.contains(&r.record_id))
            .cloned();
        Ok(build_index(records, &self.manifest, split)?)
    }

    fn hashes(&self) -> Result<BTreeMap<String, String>> {
        Ok(BTreeMap::from([
            (
                "embeddings".to_string(),
                hash_file("embeddings", &self.embeddings_path)?,
            ),
            ("manifest".to_string(), hash_file("manifest", &self.manifest_path)?),
        ]))
    }
}

fn read_dropped(path: &Path) -> Result<HashSet<u64>> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let report: Report<PreparationLog> =
        serde_json::from_str(&text).map_err(|e| CliError::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(report.report.dropped_ids())
}

// ---------------------------------------------------------------------------
// build-index

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub split: Split,
    pub dimension: usize,
    pub entries: usize,
    pub classes: usize,
    /// Entries per class, by class name.
    pub class_counts: BTreeMap<String, usize>,
}

pub fn cmd_build_index(config: &RunConfig) -> Result<IndexSummary> {
    let inputs = Inputs::load(config)?;
    let index = inputs.split(config.index_split)?;
    output_dir(config)?;
    let path = config.index_path();
    save_index(&index, &path)?;

    let classes = index.classes();
    let summary = IndexSummary {
        split: config.index_split,
        dimension: index.dimension(),
        entries: index.len(),
        classes: classes.len(),
        class_counts: index
            .class_counts()
            .into_iter()
            .enumerate()
            .map(|(c, n)| (classes.name(c as u32).to_string(), n))
            .collect(),
    };
    Report::new("build-index", Provenance::new(config, inputs.hashes()?), &summary)
        .write(&config.output_path(INDEX_JSON))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// query

#[derive(Clone, Debug)]
pub enum QuerySource {
    RecordId(u64),
    /// Binary embedding file (first record is used) or a JSON array of numbers.
    VectorFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QueryHit {
    pub rank: usize,
    pub record_id: u64,
    pub source_path: String,
    pub label: String,
    pub similarity: f32,
}

pub fn cmd_query(config: &RunConfig, source: &QuerySource, n: usize) -> Result<Vec<QueryHit>> {
    let (_, index) = load_index_file(config)?;
    let vector = match source {
        QuerySource::RecordId(id) => query_vector_by_id(config, &index, *id)?,
        QuerySource::VectorFile(path) => l2_normalize(&read_vector_file(path)?)?,
    };
    let result = top_n(&vector, &index, n, None)?;

    let paths: HashMap<u64, String> = query_manifest(config)
        .into_iter()
        .map(|e| (e.record_id, e.source_path))
        .collect();
    Ok(result
        .hits
        .iter()
        .enumerate()
        .map(|(i, hit)| {
            let row = index.row_of(hit.record_id).expect("hit comes from the index");
            QueryHit {
                rank: i + 1,
                record_id: hit.record_id,
                source_path: paths.get(&hit.record_id).cloned().unwrap_or_else(|| "-".into()),
                label: index.classes().name(index.label(row)).to_string(),
                similarity: hit.similarity,
            }
        })
        .collect())
}

/// Source paths are best effort: missing manifests only blank that column.
fn query_manifest(config: &RunConfig) -> Vec<ManifestEntry> {
    let prepared = config.output_path(PREPARED_MANIFEST);
    let path = if prepared.exists() {
        Some(prepared)
    } else {
        config.paths.manifest.clone()
    };
    path.and_then(|p| read_manifest_file(&p).ok()).unwrap_or_default()
}

fn query_vector_by_id(config: &RunConfig, index: &VectorIndex, id: u64) -> Result<Vec<f32>> {
    if let Some(row) = index.row_of(id) {
        return Ok(index.vector(row).to_vec());
    }
    if config.paths.embeddings.is_some() {
        let (_, file) = load_embeddings(config)?;
        if let Some(r) = file.records.iter().find(|r| r.record_id == id) {
            return Ok(l2_normalize(&r.vector).map_err(|e| cbir_core::Error::Query {
                record_id: id,
                source: Box::new(e),
            })?);
        }
    }
    Err(CliError::InvalidInput(format!(
        "record {id} is neither in the index nor in the embedding file"
    )))
}

fn read_vector_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::missing_or_io("vector file", path, e))?;
    if bytes.starts_with(&MAGIC) {
        let file = EmbeddingFile::from_bytes(&bytes)?;
        return file
            .records
            .into_iter()
            .next()
            .map(|r| r.vector)
            .ok_or_else(|| CliError::InvalidInput(format!("{}: embedding file has no records", path.display())));
    }
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::InvalidInput(format!("{}: expected a JSON array of numbers ({e})", path.display())))
}

pub fn format_hits(hits: &[QueryHit]) -> String {
    let mut out = format!(
        "{:>4}  {:>10}  {:>10}  {:<24}  {}\n",
        "rank", "record_id", "similarity", "label", "source_path"
    );
    for h in hits {
        out.push_str(&format!(
            "{:>4}  {:>10}  {:>10.6}  {:<24}  {}\n",
            h.rank, h.record_id, h.similarity, h.label, h.source_path
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// evaluate

pub fn cmd_evaluate(config: &RunConfig) -> Result<MetricsReport> {
    let inputs = Inputs::load(config)?;
    let (index_path, index) = load_index_file(config)?;
    let queries = inputs.split(config.query_split)?;
    check_same_classes(&index, &queries)?;
    if queries.is_empty() {
        return Err(cbir_core::Error::EmptyQuerySet.into());
    }
    let max_n = *config.n_values.iter().max().expect("validated non-empty");
    if index.len() < max_n {
        return Err(CliError::InsufficientIndex {
            required: max_n,
            found: index.len(),
        });
    }

    let results = batch_top_n(&queries.queries(), &index, max_n, false)?;
    let metrics = evaluate(&results, queries.labels(), &index, &config.n_values)?;

    let dir = output_dir(config)?;
    let mut hashes = inputs.hashes()?;
    hashes.insert("index".into(), hash_file("index", &index_path)?);
    Report::new("evaluate", Provenance::new(config, hashes), &metrics).write(&dir.join(METRICS_JSON))?;
    let csv_path = dir.join(METRICS_CSV);
    metrics.write_csv(create(&csv_path)?)?;
    let per_class = dir.join(PER_CLASS_CSV);
    metrics.write_per_class_csv(create(&per_class)?)?;
    Ok(metrics)
}

fn check_same_classes(index: &VectorIndex, other: &VectorIndex) -> Result<()> {
    if index.classes().names() != other.classes().names() {
        return Err(CliError::InvalidInput(
            "the index was built from a manifest with different classes; rebuild it".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// probe

pub fn cmd_probe(config: &RunConfig) -> Result<ProbeReport> {
    let inputs = Inputs::load(config)?;
    let train = inputs.split(config.index_split)?;
    let val = inputs.split(Split::Val)?;
    let test = inputs.split(config.query_split)?;
    let knn = config.knn.clipped_to(train.len());
    let report = run_probe(&train, &val, &test, &knn, &config.linear)?;

    let dir = output_dir(config)?;
    Report::new("probe", Provenance::new(config, inputs.hashes()?), &report).write(&dir.join(PROBE_JSON))?;
    let history = dir.join(LINEAR_HISTORY_CSV);
    report.linear.write_history_csv(create(&history)?)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// ablate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    #[serde(flatten)]
    pub curve: AblationCurve,
    /// Smallest N whose mean, and every later one, is within 0.02 of the largest N's.
    pub saturation_n: Option<usize>,
}

pub fn cmd_ablate(config: &RunConfig) -> Result<AblationSummary> {
    let inputs = Inputs::load(config)?;
    let pool = inputs.split(config.index_split)?;
    let queries = inputs.split(config.query_split)?;
    let curve = run_ablation(&pool, &queries, &config.ablation)?;
    let summary = AblationSummary {
        saturation_n: curve.saturation_point(0.02),
        curve,
    };

    let dir = output_dir(config)?;
    let csv_path = dir.join(ABLATION_CSV);
    summary.curve.write_csv(create(&csv_path)?)?;
    Report::new("ablate", Provenance::new(config, inputs.hashes()?), &summary).write(&dir.join(ABLATION_JSON))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// synth

pub const SYNTH_EMBEDDINGS: &str = "embeddings.bin";
pub const SYNTH_MANIFEST: &str = "manifest.csv";

/// Writes a seeded Gaussian-cluster corpus (embedding file plus manifest)
/// into the output directory. Returns the two paths.
pub fn cmd_synth(config: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let corpus = gaussian_clusters(&config.synth);
    let dir = output_dir(config)?;
    let emb = dir.join(SYNTH_EMBEDDINGS);
    EmbeddingFile::new(corpus.dimension, corpus.embeddings)?.save(&emb)?;
    let man = dir.join(SYNTH_MANIFEST);
    let mut w = create(&man)?;
    write_manifest(&mut w, &corpus.manifest)?;
    w.flush().map_err(io_err(&man))?;
    Ok((emb, man))
}
