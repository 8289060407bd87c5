use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::scores::f1_scores;
use crate::similarity::{batch_top_n, top_n, Hit};
use crate::store::{ClassId, VectorIndex};

pub const DEFAULT_K_GRID: [usize; 7] = [1, 3, 5, 11, 21, 51, 101];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k_grid: Vec<usize>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k_grid: DEFAULT_K_GRID.to_vec(),
        }
    }
}

impl KnnConfig {
    pub fn validate(&self, index_len: usize) -> Result<()> {
        if self.k_grid.is_empty() || self.k_grid[0] == 0 {
            return Err(Error::InvalidConfig("k_grid must be non-empty and positive".into()));
        }
        if self.k_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("k_grid must be strictly increasing".into()));
        }
        let k_max = *self.k_grid.last().unwrap();
        if k_max > index_len {
            return Err(Error::KTooLarge {
                k: k_max,
                count: index_len,
            });
        }
        Ok(())
    }

    /// The grid without entries larger than `index_len`.
    pub fn clipped_to(&self, index_len: usize) -> Self {
        Self {
            k_grid: self.k_grid.iter().copied().filter(|&k| k <= index_len).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnnPrediction {
    pub class: ClassId,
    /// Per-class share of the neighbours' vote weight; sums to 1.
    pub scores: Vec<f64>,
}

/// Majority vote over the first `k` hits.
///
/// Ties in vote count go to the class with the larger summed similarity, then
/// to the lower class id. Scores weight each neighbour by `(1 + s) / 2`, which
/// maps cosine similarity onto `[0, 1]`, and are normalized to sum to 1.
pub fn vote(hits: &[Hit], index: &VectorIndex) -> KnnPrediction {
    let classes = index.classes().len();
    let mut votes = vec![0usize; classes];
    let mut sim_sum = vec![0f64; classes];
    let mut weight = vec![0f64; classes];
    for hit in hits {
        let row = index.row_of(hit.record_id).expect("hit comes from this index");
        let c = index.label(row) as usize;
        votes[c] += 1;
        sim_sum[c] += f64::from(hit.similarity);
        weight[c] += (1.0 + f64::from(hit.similarity)) / 2.0;
    }
    let mut best = 0;
    for c in 1..classes {
        let better = votes[c] > votes[best] || (votes[c] == votes[best] && sim_sum[c] > sim_sum[best]);
        if better {
            best = c;
        }
    }
    let total: f64 = weight.iter().sum();
    let scores = if total > 0.0 {
        weight.iter().map(|w| w / total).collect()
    } else {
        votes.iter().map(|&v| v as f64 / hits.len().max(1) as f64).collect()
    };
    KnnPrediction {
        class: best as ClassId,
        scores,
    }
}

pub fn knn_classify(query: &[f32], index: &VectorIndex, k: usize) -> Result<KnnPrediction> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if k > index.len() {
        return Err(Error::KTooLarge { k, count: index.len() });
    }
    let result = top_n(query, index, k, None)?;
    Ok(vote(&result.hits, index))
}

/// Classifies every row of `queries` for each `k` in `ks`, with one search at
/// `max(ks)` whose prefixes serve the smaller values.
pub fn knn_predict_all(queries: &VectorIndex, index: &VectorIndex, ks: &[usize]) -> Result<Vec<Vec<KnnPrediction>>> {
    let k_max = ks
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::InvalidConfig("no k given".into()))?;
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k_max > index.len() {
        return Err(Error::KTooLarge {
            k: k_max,
            count: index.len(),
        });
    }
    let results = batch_top_n(&queries.queries(), index, k_max, false)?;
    Ok(ks
        .iter()
        .map(|&k| results.iter().map(|r| vote(&r.hits[..k], index)).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KScore {
    pub k: usize,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub scores: Vec<KScore>,
}

/// Picks the `k` with the highest validation macro F1; ties keep the smaller `k`.
pub fn select_k(index: &VectorIndex, validation: &VectorIndex, config: &KnnConfig) -> Result<KSelection> {
    if validation.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    config.validate(index.len())?;
    let predictions = knn_predict_all(validation, index, &config.k_grid)?;
    let mut scores = Vec::with_capacity(config.k_grid.len());
    let mut best: Option<KScore> = None;
    for (&k, preds) in config.k_grid.iter().zip(&predictions) {
        let classes: Vec<ClassId> = preds.iter().map(|p| p.class).collect();
        let (_, macro_f1) = f1_scores(&classes, validation.labels(), index.classes().len())?;
        let score = KScore { k, macro_f1 };
        if best.as_ref().is_none_or(|b| macro_f1 > b.macro_f1) {
            best = Some(score.clone());
        }
        scores.push(score);
    }
    Ok(KSelection {
        best_k: best.expect("non-empty grid").k,
        scores,
    })
}
