//! Subcommands end to end, in-process and through the binary.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use cbir_cli::commands::{self, QuerySource};
use cbir_cli::config::{Overrides, RunConfig};
use cbir_core::ablation::run_ablation;
use cbir_core::format::EmbeddingFile;
use cbir_core::store::{read_manifest, write_manifest, ClassKind, EmbeddingRecord, ManifestEntry, Split};
use cbir_core::synth::{gaussian_clusters, random_unit_vectors, ClusterSpec};
use serde_json::Value;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Self { _dir: dir, root }
    }

    fn write_corpus(&self, manifest: &[ManifestEntry], embeddings: Vec<EmbeddingRecord>, dim: usize) {
        let mut buf = Vec::new();
        write_manifest(&mut buf, manifest).unwrap();
        std::fs::write(self.root.join("manifest.csv"), buf).unwrap();
        EmbeddingFile::new(dim, embeddings)
            .unwrap()
            .save(self.root.join("emb.bin"))
            .unwrap();
    }

    fn synth(&self, spec: &ClusterSpec) {
        let c = gaussian_clusters(spec);
        self.write_corpus(&c.manifest, c.embeddings, c.dimension);
    }

    fn config(&self, sets: &[&str]) -> RunConfig {
        let mut all = vec![
            format!("paths.manifest={}", self.root.join("manifest.csv").display()),
            format!("paths.embeddings={}", self.root.join("emb.bin").display()),
            format!("paths.output_dir={}", self.root.join("out").display()),
        ];
        all.extend(sets.iter().map(|s| s.to_string()));
        RunConfig::load(
            None,
            &Overrides {
                sets: all,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn out(&self, file: &str) -> PathBuf {
        self.root.join("out").join(file)
    }
}

fn separated() -> ClusterSpec {
    ClusterSpec {
        classes: 6,
        dimension: 32,
        train_per_class: 40,
        val_per_class: 10,
        test_per_class: 10,
        noise: 0.2,
        seed: 1,
        ..Default::default()
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn no_op_ingest_keeps_the_manifest() {
    let ws = Workspace::new();
    ws.synth(&separated());
    let config = ws.config(&[]);
    let log = commands::cmd_ingest(&config).unwrap();
    assert!(log.is_empty());
    let original = read_manifest(std::fs::File::open(ws.root.join("manifest.csv")).unwrap()).unwrap();
    let prepared = read_manifest(std::fs::File::open(ws.out("prepared_manifest.csv")).unwrap()).unwrap();
    assert_eq!(original, prepared);
    let report = read_json(&ws.out("preparation_log.json"));
    assert_eq!(report["command"], "ingest");
    assert!(report["provenance"]["inputs"]["manifest"].is_string());
}

#[test]
fn patient_split_ninety_ten_is_logged() {
    let ws = Workspace::new();
    ws.synth(&ClusterSpec {
        val_per_class: 0,
        train_per_class: 100,
        ..separated()
    });
    let config = ws.config(&[r#"preparation.patient_split={"synthetic":0.1}"#]);
    let log = commands::cmd_ingest(&config).unwrap();
    let s = &log.patient_splits[0];
    assert_eq!(s.dataset, "synthetic");
    assert_eq!(s.patients, 300);
    assert_eq!(s.val_patients, 30);
    // Two samples per synthetic patient.
    assert_eq!((s.train_samples, s.val_samples), (540, 60));
    let prepared = read_manifest(std::fs::File::open(ws.out("prepared_manifest.csv")).unwrap()).unwrap();
    let val: BTreeSet<_> = prepared
        .iter()
        .filter(|e| e.split == Split::Val)
        .map(|e| e.patient_id.clone())
        .collect();
    let train: BTreeSet<_> = prepared
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.patient_id.clone())
        .collect();
    assert!(val.is_disjoint(&train));
}

#[test]
fn separated_clusters_score_perfectly_and_outputs_exist() {
    let ws = Workspace::new();
    ws.synth(&separated());
    let config = ws.config(&[]);
    commands::cmd_build_index(&config).unwrap();
    let m = commands::cmd_evaluate(&config).unwrap();
    assert!(m
        .p_at_n_micro
        .values()
        .chain(m.p_at_n_macro.values())
        .all(|&p| p == 1.0));
    for f in [
        "index.cbir",
        "index_summary.json",
        "metrics.json",
        "metrics.csv",
        "per_class.csv",
    ] {
        assert!(ws.out(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(ws.out("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("metric,n,averaging,value"));
    assert_eq!(csv.lines().count(), 1 + 8);
}

#[test]
fn single_class_corpus_scores_one() {
    let ws = Workspace::new();
    ws.synth(&ClusterSpec {
        classes: 1,
        noise: 3.0,
        ..separated()
    });
    let config = ws.config(&[]);
    commands::cmd_build_index(&config).unwrap();
    let m = commands::cmd_evaluate(&config).unwrap();
    assert!(m
        .p_at_n_micro
        .values()
        .chain(m.p_at_n_macro.values())
        .all(|&p| p == 1.0));
}

/// Random 1,000-vector instance against a pipeline written from scratch:
/// f64 cosine, full sort, label comparison, averaging by hand.
#[test]
fn evaluate_matches_end_to_end_reference() {
    let dim = 16;
    let classes = ["a", "b", "c", "d"];
    let sizes = [500, 250, 150, 100];
    let vectors = random_unit_vectors(1000 + 120, dim, 5);
    let mut manifest = Vec::new();
    let mut embeddings = Vec::new();
    let mut id = 0u64;
    let mut push = |label: &str, split: Split, v: &[f32], manifest: &mut Vec<ManifestEntry>| {
        manifest.push(ManifestEntry {
            record_id: id,
            source_path: format!("img/{id}.png"),
            labels: vec![label.into()],
            dataset: "r".into(),
            split,
            patient_id: None,
            content_hash: None,
            class_kind: ClassKind::Pathological,
        });
        // Stored unnormalized on purpose: the pipeline normalizes.
        embeddings.push(EmbeddingRecord {
            record_id: id,
            vector: v.iter().map(|x| x * 3.0).collect(),
        });
        id += 1;
    };
    let mut row = 0;
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            push(
                classes[c],
                Split::Train,
                &vectors[row * dim..(row + 1) * dim],
                &mut manifest,
            );
            row += 1;
        }
    }
    for q in 0..120 {
        push(
            classes[q % 3],
            Split::Test,
            &vectors[row * dim..(row + 1) * dim],
            &mut manifest,
        );
        row += 1;
    }
    let ws = Workspace::new();
    ws.write_corpus(&manifest, embeddings, dim);
    let config = ws.config(&[]);
    commands::cmd_build_index(&config).unwrap();
    let report = commands::cmd_evaluate(&config).unwrap();

    let train: Vec<(usize, &[f32])> = (0..1000)
        .map(|r| (class_of(r, &sizes), &vectors[r * dim..(r + 1) * dim]))
        .collect();
    for n in [1usize, 3, 5, 10] {
        let mut per_query = Vec::new();
        for q in 0..120 {
            let qv = &vectors[(1000 + q) * dim..(1001 + q) * dim];
            let mut scored: Vec<(f64, u64, usize)> = train
                .iter()
                .enumerate()
                .map(|(r, (c, v))| {
                    let s: f64 = qv.iter().zip(*v).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
                    (s, r as u64, *c)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let hits = scored[..n].iter().filter(|s| s.2 == q % 3).count();
            per_query.push((q % 3, hits as f64 / n as f64));
        }
        let micro = per_query.iter().map(|p| p.1).sum::<f64>() / 120.0;
        let macro_ = (0..3)
            .map(|c| {
                let mine: Vec<f64> = per_query.iter().filter(|p| p.0 == c).map(|p| p.1).collect();
                mine.iter().sum::<f64>() / mine.len() as f64
            })
            .sum::<f64>()
            / 3.0;
        assert!((report.p_at_n_micro[&n] - micro).abs() < 1e-12, "micro P@{n}");
        assert!((report.p_at_n_macro[&n] - macro_).abs() < 1e-12, "macro P@{n}");
    }
}

fn class_of(row: usize, sizes: &[usize]) -> usize {
    let mut start = 0;
    for (c, &s) in sizes.iter().enumerate() {
        if row < start + s {
            return c;
        }
        start += s;
    }
    unreachable!()
}

#[test]
fn too_small_index_names_the_required_size() {
    let ws = Workspace::new();
    ws.synth(&ClusterSpec {
        classes: 2,
        train_per_class: 3,
        ..separated()
    });
    let config = ws.config(&["n_values=[1,10]"]);
    commands::cmd_build_index(&config).unwrap();
    let err = commands::cmd_evaluate(&config).unwrap_err();
    assert_eq!(err.code(), "insufficient_hits");
    assert!(err.to_string().contains("at least 10"), "{err}");
}

#[test]
fn query_defaults_to_six_hits_and_finds_itself() {
    let ws = Workspace::new();
    ws.synth(&separated());
    let config = ws.config(&[]);
    commands::cmd_build_index(&config).unwrap();
    let hits = commands::cmd_query(&config, &QuerySource::RecordId(7), commands::DEFAULT_QUERY_N).unwrap();
    assert_eq!(hits.len(), 6);
    assert_eq!(hits[0].record_id, 7);
    assert!((hits[0].similarity - 1.0).abs() <= 1e-6);
    assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    assert!(hits[0].source_path.ends_with("00000007.png"));

    // The same vector, scaled, from a JSON file.
    let corpus = gaussian_clusters(&separated());
    let v: Vec<f32> = corpus.embeddings[7].vector.iter().map(|x| x * 5.0).collect();
    let path = ws.root.join("q.json");
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let hits = commands::cmd_query(&config, &QuerySource::VectorFile(path), 3).unwrap();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0].record_id, 7);
    assert!((hits[0].similarity - 1.0).abs() <= 1e-6);
    let table = commands::format_hits(&hits);
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn ablate_csv_matches_in_process_run() {
    let ws = Workspace::new();
    let spec = ClusterSpec {
        classes: 4,
        train_per_class: 30,
        noise: 1.5,
        ..separated()
    };
    ws.synth(&spec);
    let config = ws.config(&[
        "ablation.min_class_size=25",
        "ablation.n_schedule=[2,10,25]",
        "ablation.queries_per_class=8",
        "seed=5",
    ]);
    let summary = commands::cmd_ablate(&config).unwrap();
    let corpus = gaussian_clusters(&ClusterSpec { seed: 1, ..spec });
    let expected = run_ablation(
        &corpus.index(Split::Train).unwrap(),
        &corpus.index(Split::Test).unwrap(),
        &config.ablation,
    )
    .unwrap();
    assert_eq!(summary.curve, expected);

    let csv = std::fs::read_to_string(ws.out("ablation.csv")).unwrap();
    let mut sums = std::collections::BTreeMap::<usize, (f64, usize)>::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e = sums.entry(f[0].parse().unwrap()).or_default();
        e.0 += f[2].parse::<f64>().unwrap();
        e.1 += 1;
    }
    for m in &expected.means {
        let (s, c) = sums[&m.n];
        assert!((s / c as f64 - m.mean).abs() < 1e-12);
    }
    assert!(ws.out("ablation_summary.json").exists());
}

#[test]
fn probe_writes_report_and_history() {
    let ws = Workspace::new();
    ws.synth(&separated());
    let config = ws.config(&[
        "linear.epochs=15",
        "linear.early_stopping_patience=5",
        "linear.learning_rate=0.01",
    ]);
    let report = commands::cmd_probe(&config).unwrap();
    assert_eq!(report.knn.scores.f1_macro, 1.0);
    assert!(report.linear.scores.auprc_macro > 0.99);
    let history = std::fs::read_to_string(ws.out("linear_history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(history.lines().count(), 1 + report.linear.history.len());
    let json = read_json(&ws.out("probe_report.json"));
    assert_eq!(json["report"]["knn"]["best_k"], report.knn.best_k);
}

#[test]
fn ingest_drops_duplicates_and_build_index_skips_them() {
    let ws = Workspace::new();
    let c = gaussian_clusters(&separated());
    let mut manifest = c.manifest.clone();
    // Record 1 repeats record 0's content.
    manifest[1].content_hash = manifest[0].content_hash;
    ws.write_corpus(&manifest, c.embeddings.clone(), c.dimension);
    let config = ws.config(&[r#"preparation.dedup_datasets=["synthetic"]"#]);
    let log = commands::cmd_ingest(&config).unwrap();
    assert_eq!(log.duplicates_dropped, 1);
    let summary = commands::cmd_build_index(&config).unwrap();
    assert_eq!(summary.entries, 6 * 40 - 1);
}

fn cbir() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cbir"))
}

fn error_code(stderr: &[u8]) -> String {
    let v: Value = serde_json::from_slice(stderr).expect("stderr is one JSON record");
    v["error"]["code"].as_str().unwrap().to_string()
}

#[test]
fn binary_reports_missing_manifest_as_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cbir()
        .args(["ingest", "--set", "paths.manifest=does/not/exist.csv", "--output"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(error_code(&out.stderr), "missing_input");

    let out = cbir().arg("ingest").arg("--output").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(error_code(&out.stderr), "missing_input");

    let out = cbir().args(["evaluate", "--set", "n_values=[0]"]).output().unwrap();
    assert!(!out.status.success());
    assert_eq!(error_code(&out.stderr), "invalid_config");
}

#[test]
fn binary_runs_the_whole_pipeline_from_a_config_file() {
    let ws = Workspace::new();
    ws.synth(&separated());
    let config = serde_json::json!({
        "paths": {
            "manifest": ws.root.join("manifest.csv"),
            "embeddings": ws.root.join("emb.bin"),
            "output_dir": ws.root.join("out"),
        },
        "n_values": [1, 5],
    });
    let path = ws.root.join("run.json");
    std::fs::write(&path, config.to_string()).unwrap();
    for cmd in ["ingest", "build-index", "evaluate"] {
        let out = cbir()
            .arg(cmd)
            .arg("--config")
            .arg(&path)
            .env("CBIR_WORKERS", "2")
            .output()
            .unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stderr.is_empty());
    }
    let out = cbir()
        .args(["query", "--id", "0", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    // Header plus the default six hits.
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 7);
    let metrics = read_json(&ws.out("metrics.json"));
    assert_eq!(metrics["report"]["p_at_n_micro"]["5"], 1.0);
    assert!(metrics["metadata"]["timestamp_unix"].is_u64());
}
