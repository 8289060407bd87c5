//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Runs under `cargo test` with its own `main`.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use cbir_cli::commands;
use cbir_cli::config::{Overrides, RunConfig};
use cbir_cli::with_workers;
use cbir_core::ablation::{run_ablation, AblationConfig, DEFAULT_N_SCHEDULE};
use cbir_core::eval::{evaluate, precision_at_n_macro, precision_at_n_micro, RelevanceJudgment};
use cbir_core::format::{load_index, EmbeddingFile};
use cbir_core::probe::linear::{loss_and_gradient, LinearModel, Samples};
use cbir_core::probe::scores::{average_precision, f1_scores};
use cbir_core::similarity::{batch_top_n, cosine_similarity, Hit};
use cbir_core::store::{write_manifest, ClassId, ClassKind, ClassTable, Split, VectorIndex};
use cbir_core::synth::{gaussian_clusters, random_unit_vectors, ClusterSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("metric identities", metric_identities),
        ("hand cases", hand_cases),
        ("gradient check", gradient_check),
        ("index-size saturation", saturation),
        ("determinism", determinism),
        ("performance", performance),
        ("format round trip", format_round_trip),
    ];
    // Optional substring filters, e.g. `cargo test --test acceptance -- perf`.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria
        .into_iter()
        .filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for &(name, f) in &selected {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<22} {detail} [{secs:.1}s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name:<22} {reason} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn single_class_index(dim: usize, vectors: Vec<f32>, ids: Vec<u64>) -> VectorIndex {
    let classes = Arc::new(ClassTable::from_parts(vec!["x".into()], vec![ClassKind::Anatomical]).unwrap());
    let m = ids.len();
    VectorIndex::from_normalized(dim, vectors, vec![0; m], ids, classes).unwrap()
}

/// Every hit list of an instance against a full sort of pairwise scores.
fn oracle_equivalence() -> Outcome {
    let (m, dim, q, n) = (1000, 64, 50, 10);
    let start = Instant::now();
    let mut ties_seen = 0;
    for instance in 0..20u64 {
        let base = random_unit_vectors(m - 100, dim, instance);
        // 100 planted duplicates of earlier rows under larger ids.
        let mut vectors = base.clone();
        for r in 0..100 {
            vectors.extend_from_slice(&base[r * dim..(r + 1) * dim]);
        }
        let ids: Vec<u64> = (0..m as u64).map(|i| (i * 7919) % 10007).collect();
        let index = single_class_index(dim, vectors, ids);
        // Half the queries are stored rows, so duplicates tie at the top.
        let mut queries = random_unit_vectors(q / 2, dim, 1000 + instance);
        for r in 0..q / 2 {
            queries.extend_from_slice(index.vector(r * 4));
        }
        let refs: Vec<(u64, &[f32])> = queries.chunks(dim).enumerate().map(|(i, v)| (i as u64, v)).collect();
        let results = batch_top_n(&refs, &index, n, false).map_err(|e| e.to_string())?;
        for ((qid, qv), result) in refs.iter().zip(&results) {
            let mut all: Vec<Hit> = (0..m)
                .map(|r| Hit {
                    record_id: index.record_id(r),
                    similarity: cosine_similarity(qv, index.vector(r)).unwrap(),
                })
                .collect();
            all.sort_by(|a, b| {
                b.similarity
                    .total_cmp(&a.similarity)
                    .then(a.record_id.cmp(&b.record_id))
            });
            all.truncate(n);
            let same = all.len() == result.hits.len()
                && all
                    .iter()
                    .zip(&result.hits)
                    .all(|(a, b)| a.record_id == b.record_id && a.similarity.to_bits() == b.similarity.to_bits());
            check(same, || {
                format!("instance {instance}, query {qid}: hits differ from full sort")
            })?;
            ties_seen += all.windows(2).filter(|w| w[0].similarity == w[1].similarity).count();
        }
    }
    let elapsed = start.elapsed();
    check(ties_seen > 0, || "no ties were exercised".into())?;
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "20 instances, {ties_seen} tied pairs, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn random_labelled_index(m: usize, dim: usize, classes: usize, seed: u64) -> VectorIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    let table = Arc::new(ClassTable::from_parts(names, vec![ClassKind::Pathological; classes]).unwrap());
    let labels = (0..m).map(|_| rng.random_range(0..classes as ClassId)).collect();
    VectorIndex::from_normalized(
        dim,
        random_unit_vectors(m, dim, seed),
        labels,
        (0..m as u64).collect(),
        table,
    )
    .unwrap()
}

fn metric_identities() -> Outcome {
    let mut max_gap = 0.0f64;
    for instance in 0..10u64 {
        let classes = 2 + instance as usize % 5;
        let dim = 8 + instance as usize;
        let index = random_labelled_index(400, dim, classes, instance);
        // Balanced: the same number of queries in every class.
        let per_class = 7;
        let query_vectors = random_unit_vectors(classes * per_class, dim, 500 + instance);
        let query_classes: Vec<ClassId> = (0..classes * per_class).map(|i| (i % classes) as ClassId).collect();
        let refs: Vec<(u64, &[f32])> = query_vectors
            .chunks(dim)
            .enumerate()
            .map(|(i, v)| (10_000 + i as u64, v))
            .collect();
        let results = batch_top_n(&refs, &index, 5, false).map_err(|e| e.to_string())?;
        let report = evaluate(&results, &query_classes, &index, &[1, 5]).map_err(|e| e.to_string())?;

        // 1-NN accuracy from an exhaustive argmax.
        let mut correct = 0usize;
        for ((_, qv), &qc) in refs.iter().zip(&query_classes) {
            let best = (0..index.len())
                .map(|r| (cosine_similarity(qv, index.vector(r)).unwrap(), r))
                .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
                .unwrap()
                .1;
            correct += usize::from(index.label(best) == qc);
        }
        let accuracy = correct as f64 / refs.len() as f64;
        check(report.p_at_n_micro[&1] == accuracy, || {
            format!(
                "instance {instance}: P@1 micro {} != 1-NN accuracy {accuracy}",
                report.p_at_n_micro[&1]
            )
        })?;
        for n in [1, 5] {
            let gap = (report.p_at_n_micro[&n] - report.p_at_n_macro[&n]).abs();
            max_gap = max_gap.max(gap);
            check(gap <= 1e-12, || {
                format!("instance {instance}: balanced macro/micro gap {gap:e} at n={n}")
            })?;
        }
    }
    Ok(format!("10 instances, max balanced macro-micro gap {max_gap:e}"))
}

fn judgment(class: ClassId, rel: &[u8]) -> RelevanceJudgment {
    RelevanceJudgment {
        query_record_id: None,
        query_class: class,
        rel: rel.iter().map(|&r| r == 1).collect(),
    }
}

fn hand_cases() -> Outcome {
    let e = |e: cbir_core::Error| e.to_string();
    let p3 = precision_at_n_micro(&[judgment(0, &[1, 0, 1]), judgment(0, &[0, 0, 0])], 3).map_err(e)?;
    check(p3 == 1.0 / 3.0, || format!("P@3 = {p3}, expected 1/3"))?;

    let grouped = [judgment(0, &[1]), judgment(0, &[1]), judgment(1, &[0])];
    let macro_ = precision_at_n_macro(&grouped, 1).map_err(e)?;
    let micro = precision_at_n_micro(&grouped, 1).map_err(e)?;
    check(macro_ == 0.5 && micro == 2.0 / 3.0, || {
        format!("macro {macro_}, micro {micro}")
    })?;

    // Positives at ranks 1 and 3: (1 + 2/3) / 2, evaluated in that order.
    let ap = average_precision(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).ok_or("no positives")?;
    check(
        ap == (1.0 + 2.0 / 3.0) / 2.0 && (ap - 5.0 / 6.0).abs() <= f64::EPSILON,
        || format!("AP = {ap}, expected 5/6"),
    )?;

    let (f1_micro, f1_macro) = f1_scores(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).map_err(e)?;
    check(
        f1_micro == 0.75 && (f1_macro - 11.0 / 15.0).abs() <= f64::EPSILON,
        || format!("F1 micro {f1_micro}, macro {f1_macro}"),
    )?;
    Ok("P@3 = 1/3, AP = 5/6, macro 0.5 vs micro 2/3, F1 macro 11/15".into())
}

/// Relative L2 error of the analytic gradient against central differences.
fn gradient_error(classes: usize, dim: usize, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LinearModel::zeros(classes, dim);
    model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    model.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let vectors: Vec<f32> = (0..count * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<ClassId> = (0..count).map(|_| rng.random_range(0..classes as ClassId)).collect();
    let samples = Samples::new(dim, &vectors, &labels).unwrap();
    let rows: Vec<usize> = (0..count).collect();
    let (_, grad) = loss_and_gradient(&model, &samples, &rows);
    let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();

    let h = 1e-2f32;
    let params = classes * dim + classes;
    let (mut num, mut den) = (0.0, 0.0);
    for (p, &a) in analytic.iter().enumerate().take(params) {
        let nudged = |delta: f32| {
            let mut m = model.clone();
            let slot = if p < classes * dim {
                &mut m.weights[p]
            } else {
                &mut m.bias[p - classes * dim]
            };
            *slot += delta;
            let value = *slot;
            (loss_and_gradient(&m, &samples, &rows).0, value)
        };
        let (up, x_up) = nudged(h);
        let (down, x_down) = nudged(-h);
        let fd = (up - down) / (f64::from(x_up) - f64::from(x_down));
        num += (fd - a).powi(2);
        den += a * a;
    }
    (num / den.max(1e-30)).sqrt()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for instance in 0..10u64 {
        let classes = rng.random_range(2..=5);
        let dim = rng.random_range(1..=16);
        let count = rng.random_range(1..=12);
        let err = gradient_error(classes, dim, count, instance);
        worst = worst.max(err);
        check(err < 1e-4, || {
            format!("instance {instance} (C={classes}, D={dim}): relative error {err:e}")
        })?;
    }
    Ok(format!("10 instances, worst relative error {worst:e}"))
}

/// Separation for the saturation corpus: noise norm relative to unit centers.
const SATURATION_NOISE: f32 = 1.5;

fn saturation() -> Outcome {
    let start = Instant::now();
    // Eligibility is strictly above min_class_size, so 3,000 needs 3,001.
    let corpus = gaussian_clusters(&ClusterSpec {
        classes: 64,
        dimension: 64,
        train_per_class: 3001,
        val_per_class: 0,
        test_per_class: 40,
        noise: SATURATION_NOISE,
        size_decay: 1.0,
        anatomical_fraction: 0.25,
        seed: 3,
    });
    let pool = corpus.index(Split::Train).map_err(|e| e.to_string())?;
    let queries = corpus.index(Split::Test).map_err(|e| e.to_string())?;
    let refs = queries.queries();
    let results = batch_top_n(&refs, &pool, 1, false).map_err(|e| e.to_string())?;
    let full = evaluate(&results, queries.labels(), &pool, &[1])
        .map_err(|e| e.to_string())?
        .p_at_n_micro[&1];
    check(full > 0.95, || format!("full-index P@1 {full:.4} is not above 0.95"))?;

    let config = AblationConfig {
        min_class_size: 3000,
        queries_per_class: 38,
        n_schedule: DEFAULT_N_SCHEDULE.to_vec(),
        repetitions: 3,
        seed: 11,
        independent_draws: false,
    };
    let curve = run_ablation(&pool, &queries, &config).map_err(|e| e.to_string())?;
    let means: Vec<(usize, f64)> = curve.means.iter().map(|m| (m.n, m.mean)).collect();
    for w in means.windows(2) {
        check(w[1].1 >= w[0].1 - 0.02, || {
            format!(
                "mean drops from {:.4} at N={} to {:.4} at N={}",
                w[0].1, w[0].0, w[1].1, w[1].0
            )
        })?;
    }
    let at = |n| curve.mean_at(n).ok_or(format!("N={n} missing from the curve"));
    let (m1000, m3000) = (at(1000)?, at(3000)?);
    check((m1000 - m3000).abs() <= 0.02, || {
        format!("mean {m1000:.4} at N=1000 vs {m3000:.4} at N=3000")
    })?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(600), || format!("took {elapsed:?}"))?;
    let shape: Vec<String> = means.iter().map(|(n, m)| format!("{n}:{m:.3}")).collect();
    Ok(format!("full P@1 {full:.3}; means {}", shape.join(" ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let corpus = gaussian_clusters(&ClusterSpec {
        classes: 12,
        dimension: 48,
        train_per_class: 600,
        val_per_class: 0,
        test_per_class: 60,
        noise: 1.4,
        size_decay: 0.85,
        anatomical_fraction: 0.25,
        seed: 8,
    });
    let mut manifest = Vec::new();
    write_manifest(&mut manifest, &corpus.manifest).map_err(|e| e.to_string())?;
    std::fs::write(root.join("manifest.csv"), manifest).map_err(|e| e.to_string())?;
    EmbeddingFile::new(corpus.dimension, corpus.embeddings)
        .and_then(|f| f.save(root.join("emb.bin")))
        .map_err(|e| e.to_string())?;

    let run = |label: &str, workers: usize| -> Result<Vec<String>, String> {
        let out = root.join(label);
        let config = RunConfig::load(
            None,
            &Overrides {
                sets: vec![
                    format!("paths.manifest={}", root.join("manifest.csv").display()),
                    format!("paths.embeddings={}", root.join("emb.bin").display()),
                    "seed=21".into(),
                ],
                workers: Some(workers),
                output: Some(out.clone()),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        with_workers(&config, || {
            commands::cmd_build_index(&config)?;
            commands::cmd_evaluate(&config)
        })
        .and_then(|r| r)
        .map_err(|e| e.to_string())?;
        let mut payloads = vec![payload_without_metadata(&out.join(commands::METRICS_JSON))?];
        for f in [commands::METRICS_CSV, commands::PER_CLASS_CSV] {
            payloads.push(std::fs::read_to_string(out.join(f)).map_err(|e| e.to_string())?);
        }
        Ok(payloads)
    };
    let one = run("w1", 1)?;
    let one_again = run("w1b", 1)?;
    let eight = run("w8", 8)?;
    check(one == one_again, || "two single-worker runs differ".into())?;
    check(one == eight, || "1-worker and 8-worker reports differ".into())?;
    Ok("metrics.json (minus metadata), metrics.csv, per_class.csv identical for 1, 1, 8 workers".into())
}

fn payload_without_metadata(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    doc.as_object_mut().ok_or("report is not an object")?.remove("metadata");
    Ok(doc.to_string())
}

fn performance() -> Outcome {
    let (m, dim, n, q) = (100_000, 512, 10, 400);
    let index = single_class_index(dim, random_unit_vectors(m, dim, 77), (0..m as u64).collect());
    let queries = random_unit_vectors(q, dim, 78);
    let refs: Vec<(u64, &[f32])> = queries.chunks(dim).enumerate().map(|(i, v)| (i as u64, v)).collect();
    let start = Instant::now();
    let results = batch_top_n(&refs, &index, n, false).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(results.iter().all(|r| r.hits.len() == n), || "short hit list".into())?;
    let rate = q as f64 / secs;
    let threads = rayon::current_num_threads();
    check(rate >= 100.0, || format!("{rate:.1} queries/s on {threads} thread(s)"))?;
    Ok(format!(
        "{rate:.1} queries/s at M=100k, D=512, n=10 on {threads} thread(s)"
    ))
}

const GOLDEN: &[u8] = include_bytes!("../../core/tests/fixtures/golden_embeddings.bin");

const GOLDEN_RECORDS: [(u64, [u32; 4]); 3] = [
    (7, [0x3F80_0000, 0x0000_0000, 0x8000_0000, 0x3DCC_CCCD]),
    (42, [0xBFA0_0000, 0x0000_0001, 0x7F7F_FFFF, 0x3EAA_AAAB]),
    (u64::MAX, [0x3F00_0000, 0xC049_0FDB, 0x33D6_BF95, 0x0080_0000]),
];

fn format_round_trip() -> Outcome {
    let golden = EmbeddingFile::from_bytes(GOLDEN).map_err(|e| e.to_string())?;
    check(golden.dimension == 4 && golden.records.len() == 3, || {
        "golden header misread".into()
    })?;
    for (rec, (id, bits)) in golden.records.iter().zip(GOLDEN_RECORDS) {
        let got: Vec<u32> = rec.vector.iter().map(|x| x.to_bits()).collect();
        check(rec.record_id == id && got == bits, || {
            format!("golden record {id} differs")
        })?;
    }
    check(golden.to_bytes().map_err(|e| e.to_string())? == GOLDEN, || {
        "golden rewrite differs".into()
    })?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = gaussian_clusters(&ClusterSpec {
        classes: 9,
        dimension: 96,
        train_per_class: 120,
        size_decay: 0.8,
        ..Default::default()
    });
    let index = corpus.index(Split::Train).map_err(|e| e.to_string())?;
    let path = dir.path().join("index.cbir");
    cbir_core::format::save_index(&index, &path).map_err(|e| e.to_string())?;
    let loaded = load_index(&path).map_err(|e| e.to_string())?;
    let bits = |v: &VectorIndex| v.vectors().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    check(bits(&loaded) == bits(&index), || "vector bits differ".into())?;
    check(
        loaded.labels() == index.labels() && loaded.record_ids() == index.record_ids(),
        || "labels or ids differ".into(),
    )?;
    check(
        loaded.classes().names() == index.classes().names() && loaded.classes().kinds() == index.classes().kinds(),
        || "class table differs".into(),
    )?;
    Ok(format!(
        "golden fixture bit-exact; {}-row index identical after save/load",
        index.len()
    ))
}
