//! Browser demo over the retrieval core, compiled to WebAssembly.
//!
//! Three operations, each on a seeded synthetic corpus:
//! a 2-D retrieval explorer, an index-size ablation curve, and micro vs
//! macro P@N under class imbalance. Results cross into JavaScript as JSON.

use cbir_core::ablation::{run_ablation, AblationConfig, AblationCurve};
use cbir_core::eval::{evaluate, MetricsReport};
use cbir_core::similarity::{batch_top_n, top_n};
use cbir_core::store::{l2_normalize, Split, VectorIndex};
use cbir_core::synth::{gaussian_clusters, ClusterSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct Point {
    pub record_id: u64,
    pub x: f32,
    pub y: f32,
    pub class: u32,
}

#[derive(Debug, Serialize)]
pub struct ExplorerHit {
    pub record_id: u64,
    pub similarity: f32,
    pub class: u32,
}

/// A 2-D clustered corpus. Points are drawn where they were generated;
/// search sees only their directions.
#[wasm_bindgen]
pub struct Explorer {
    index: VectorIndex,
    points: Vec<Point>,
}

impl Explorer {
    pub fn build(classes: usize, per_class: usize, noise: f32, seed: u64) -> Result<Self, String> {
        let corpus = gaussian_clusters(&ClusterSpec {
            classes: classes.max(1),
            dimension: 2,
            train_per_class: per_class.max(1),
            val_per_class: 0,
            test_per_class: 0,
            noise,
            seed,
            ..Default::default()
        });
        let index = corpus.index(Split::Train).map_err(|e| e.to_string())?;
        let points = corpus
            .embeddings
            .iter()
            .map(|e| {
                let row = index.row_of(e.record_id).expect("every record is indexed");
                Point {
                    record_id: e.record_id,
                    x: e.vector[0],
                    y: e.vector[1],
                    class: index.label(row),
                }
            })
            .collect();
        Ok(Self { index, points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// The `n` nearest records to the direction of `(x, y)`.
    pub fn search(&self, x: f32, y: f32, n: usize) -> Result<Vec<ExplorerHit>, String> {
        let query = l2_normalize(&[x, y]).map_err(|e| e.to_string())?;
        let n = n.clamp(1, self.index.len());
        let result = top_n(&query, &self.index, n, None).map_err(|e| e.to_string())?;
        Ok(result
            .hits
            .iter()
            .map(|h| ExplorerHit {
                record_id: h.record_id,
                similarity: h.similarity,
                class: self
                    .index
                    .label(self.index.row_of(h.record_id).expect("hit is indexed")),
            })
            .collect())
    }
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, per_class: usize, noise: f32, seed: u32) -> Result<Explorer, JsError> {
        Self::build(classes, per_class, noise, u64::from(seed)).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = pointsJson)]
    pub fn points_json(&self) -> String {
        to_json(&self.points)
    }

    #[wasm_bindgen(js_name = searchJson)]
    pub fn search_json(&self, x: f32, y: f32, n: usize) -> Result<String, JsError> {
        self.search(x, y, n).map(|h| to_json(&h)).map_err(|e| JsError::new(&e))
    }
}

/// Mean P@1 against index size on `classes` clusters in `dimension` dims.
pub fn ablation(classes: usize, dimension: usize, noise: f32, seed: u64) -> Result<AblationCurve, String> {
    let schedule = vec![1, 2, 5, 10, 20, 50, 100, 200];
    let corpus = gaussian_clusters(&ClusterSpec {
        classes,
        dimension,
        train_per_class: 201,
        val_per_class: 0,
        test_per_class: 20,
        noise,
        seed,
        ..Default::default()
    });
    let pool = corpus.index(Split::Train).map_err(|e| e.to_string())?;
    let queries = corpus.index(Split::Test).map_err(|e| e.to_string())?;
    let config = AblationConfig {
        min_class_size: 200,
        queries_per_class: 20,
        n_schedule: schedule,
        repetitions: 3,
        seed,
        independent_draws: false,
    };
    run_ablation(&pool, &queries, &config).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = ablationJson)]
pub fn ablation_json(classes: usize, dimension: usize, noise: f32, seed: u32) -> Result<String, JsError> {
    ablation(classes, dimension, noise, u64::from(seed))
        .map(|c| to_json(&c))
        .map_err(|e| JsError::new(&e))
}

/// Micro and macro P@N when class `c` has `decay^c` times the samples of
/// class 0, in both the index and the queries.
pub fn imbalance(decay: f64, noise: f32, seed: u64) -> Result<MetricsReport, String> {
    let corpus = gaussian_clusters(&ClusterSpec {
        classes: 10,
        dimension: 8,
        train_per_class: 300,
        val_per_class: 0,
        test_per_class: 100,
        noise,
        size_decay: decay,
        seed,
        ..Default::default()
    });
    let index = corpus.index(Split::Train).map_err(|e| e.to_string())?;
    let queries = corpus.index(Split::Test).map_err(|e| e.to_string())?;
    let n_values = [1, 3, 5, 10];
    let results = batch_top_n(&queries.queries(), &index, 10, false).map_err(|e| e.to_string())?;
    evaluate(&results, queries.labels(), &index, &n_values).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = imbalanceJson)]
pub fn imbalance_json(decay: f64, noise: f32, seed: u32) -> Result<String, JsError> {
    imbalance(decay, noise, u64::from(seed))
        .map(|r| to_json(&r))
        .map_err(|e| JsError::new(&e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo values serialize")
}
