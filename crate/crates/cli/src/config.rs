//! Run configuration: one JSON document, overridable key by key.

use std::path::{Path, PathBuf};

use cbir_core::ablation::AblationConfig;
use cbir_core::eval::DEFAULT_N_VALUES;
use cbir_core::probe::{KnnConfig, LinearProbeConfig};
use cbir_core::store::{PreparationRules, Split};
use cbir_core::synth::ClusterSpec;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Binary embedding file.
    pub embeddings: Option<PathBuf>,
    /// Raw manifest CSV, as handed to `ingest`.
    pub manifest: Option<PathBuf>,
    /// Defaults to `<output_dir>/index.cbir`.
    pub index: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            embeddings: None,
            manifest: None,
            index: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub n_values: Vec<usize>,
    /// Split that forms the search index (and the probe / ablation pool).
    pub index_split: Split,
    /// Split whose records are used as queries.
    pub query_split: Split,
    pub preparation: PreparationRules,
    pub knn: KnnConfig,
    pub linear: LinearProbeConfig,
    pub ablation: AblationConfig,
    pub synth: ClusterSpec,
    /// The one seed of a run. Copied into every seeded step on load.
    pub seed: u64,
    /// Thread count; falls back to `CBIR_WORKERS`, then to all cores.
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            n_values: DEFAULT_N_VALUES.to_vec(),
            index_split: Split::Train,
            query_split: Split::Test,
            preparation: PreparationRules::default(),
            knn: KnnConfig::default(),
            linear: LinearProbeConfig::default(),
            ablation: AblationConfig::default(),
            synth: ClusterSpec::default(),
            seed: 0,
            workers: None,
        }
    }
}

/// Command-line values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, then the file, then each `--set`, then the dedicated flags.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::missing_or_io("config", path, e))?;
            let file: Value =
                serde_json::from_str(&text).map_err(|e| CliError::InvalidConfig(format!("{}: {e}", path.display())))?;
            merge(&mut doc, file);
        }
        for set in &overrides.sets {
            apply_set(&mut doc, set)?;
        }
        let mut config: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            config.workers = Some(workers);
        }
        if let Some(out) = &overrides.output {
            config.paths.output_dir = out.clone();
        }
        config.linear.seed = config.seed;
        config.ablation.seed = config.seed;
        config.synth.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(CliError::InvalidConfig(
                "n_values must be non-empty and positive".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(CliError::InvalidConfig("workers must be at least 1".into()));
        }
        if self.index_split == self.query_split {
            return Err(CliError::InvalidConfig(
                "index_split and query_split must differ".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything that affects results.
    /// Worker count and file locations are left out; input contents are
    /// hashed separately.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut doc {
            map.remove("workers");
            map.remove("paths");
        }
        crate::report::sha256_hex(doc.to_string().as_bytes())
    }

    pub fn output_path(&self, file: &str) -> PathBuf {
        self.paths.output_dir.join(file)
    }

    pub fn index_path(&self) -> PathBuf {
        self.paths
            .index
            .clone()
            .unwrap_or_else(|| self.output_path("index.cbir"))
    }
}

/// Recursive object merge; non-objects replace.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`. The value is parsed as JSON when possible, else taken as a string.
fn apply_set(doc: &mut Value, set: &str) -> Result<()> {
    let (key, raw) = set
        .split_once('=')
        .ok_or_else(|| CliError::InvalidConfig(format!("--set expects KEY=VALUE, got `{set}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = doc;
    for part in key.split('.') {
        let map = slot
            .as_object_mut()
            .ok_or_else(|| CliError::InvalidConfig(format!("--set {key}: `{part}` is not inside an object")))?;
        slot = map.entry(part).or_insert(Value::Null);
    }
    *slot = value;
    Ok(())
}
