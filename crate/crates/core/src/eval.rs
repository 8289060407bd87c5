//! Precision@N with micro and macro averaging.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::RetrievalResult;
use crate::store::{ClassId, ClassKind, VectorIndex};

pub const DEFAULT_N_VALUES: [usize; 4] = [1, 3, 5, 10];

/// Binary relevance of the first `rel.len()` hits of one query.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_record_id: Option<u64>,
    pub query_class: ClassId,
    pub rel: Vec<bool>,
}

impl RelevanceJudgment {
    /// Precision over the first `n` positions.
    pub fn precision_at(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        if self.rel.len() < n {
            return Err(Error::InsufficientHits {
                required: n,
                found: self.rel.len(),
            });
        }
        let relevant = self.rel[..n].iter().filter(|&&r| r).count();
        Ok(relevant as f64 / n as f64)
    }
}

/// A hit is relevant when its index label equals the query's class.
pub fn judge(
    result: &RetrievalResult,
    query_class: ClassId,
    index: &VectorIndex,
    n: usize,
) -> Result<RelevanceJudgment> {
    if result.hits.len() < n {
        return Err(Error::InsufficientHits {
            required: n,
            found: result.hits.len(),
        });
    }
    let rel = result.hits[..n]
        .iter()
        .map(|hit| {
            index
                .row_of(hit.record_id)
                .map(|row| index.label(row) == query_class)
                .ok_or(Error::UnknownRecordId(hit.record_id))
        })
        .collect::<Result<_>>()?;
    Ok(RelevanceJudgment {
        query_record_id: result.query_record_id,
        query_class,
        rel,
    })
}

/// Mean over all queries of the per-query precision at `n`.
pub fn precision_at_n_micro(judgments: &[RelevanceJudgment], n: usize) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut sum = 0.0;
    for j in judgments {
        sum += j.precision_at(n)?;
    }
    Ok(sum / judgments.len() as f64)
}

/// Mean over query classes of the per-class mean precision at `n`.
/// Classes without queries do not take part.
pub fn precision_at_n_macro(judgments: &[RelevanceJudgment], n: usize) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut per_class: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for j in judgments {
        let slot = per_class.entry(j.query_class).or_default();
        slot.0 += j.precision_at(n)?;
        slot.1 += 1;
    }
    let class_means: f64 = per_class.values().map(|&(sum, count)| sum / count as f64).sum();
    Ok(class_means / per_class.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class_id: ClassId,
    pub class_name: String,
    pub class_kind: ClassKind,
    pub query_count: usize,
    pub index_count: usize,
    pub p_at_1: f64,
}

/// One row per query class, sorted by index count (then class id).
pub fn per_class_report(judgments: &[RelevanceJudgment], index: &VectorIndex) -> Result<Vec<ClassRow>> {
    let counts = index.class_counts();
    let mut per_class: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
    for j in judgments {
        let slot = per_class.entry(j.query_class).or_default();
        slot.0 += j.precision_at(1)?;
        slot.1 += 1;
    }
    let classes = index.classes();
    let mut rows: Vec<ClassRow> = per_class
        .into_iter()
        .map(|(class_id, (sum, query_count))| ClassRow {
            class_id,
            class_name: classes.name(class_id).to_string(),
            class_kind: classes.kind(class_id),
            query_count,
            index_count: counts.get(class_id as usize).copied().unwrap_or(0),
            p_at_1: sum / query_count as f64,
        })
        .collect();
    rows.sort_by_key(|r| (r.index_count, r.class_id));
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub query_count: usize,
    pub index_count: usize,
    pub p_at_n_micro: BTreeMap<usize, f64>,
    pub p_at_n_macro: BTreeMap<usize, f64>,
    pub per_class: Vec<ClassRow>,
}

/// Judges every result at `max(n_values)` and reports micro/macro P@N for
/// each requested N. `query_classes[i]` is the class of `results[i]`.
pub fn evaluate(
    results: &[RetrievalResult],
    query_classes: &[ClassId],
    index: &VectorIndex,
    n_values: &[usize],
) -> Result<MetricsReport> {
    if results.len() != query_classes.len() {
        return Err(Error::LengthMismatch {
            left: results.len(),
            right: query_classes.len(),
        });
    }
    let max_n = match n_values.iter().max() {
        Some(&n) if n > 0 && !n_values.contains(&0) => n,
        _ => return Err(Error::InvalidConfig("n_values must be non-empty and positive".into())),
    };
    let judgments = results
        .iter()
        .zip(query_classes)
        .map(|(r, &c)| judge(r, c, index, max_n))
        .collect::<Result<Vec<_>>>()?;

    let mut micro = BTreeMap::new();
    let mut macro_ = BTreeMap::new();
    for &n in n_values {
        micro.insert(n, precision_at_n_micro(&judgments, n)?);
        macro_.insert(n, precision_at_n_macro(&judgments, n)?);
    }
    Ok(MetricsReport {
        query_count: judgments.len(),
        index_count: index.len(),
        p_at_n_micro: micro,
        p_at_n_macro: macro_,
        per_class: per_class_report(&judgments, index)?,
    })
}

impl MetricsReport {
    /// `metric,n,averaging,value` rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["metric", "n", "averaging", "value"])?;
        for (averaging, values) in [("micro", &self.p_at_n_micro), ("macro", &self.p_at_n_macro)] {
            for (n, value) in values {
                csv.write_record(["precision", &n.to_string(), averaging, &value.to_string()])?;
            }
        }
        csv.flush()?;
        Ok(())
    }

    pub fn write_per_class_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "class_id",
            "class_name",
            "class_kind",
            "query_count",
            "index_count",
            "p_at_1",
        ])?;
        for row in &self.per_class {
            csv.write_record([
                row.class_id.to_string(),
                row.class_name.clone(),
                row.class_kind.to_string(),
                row.query_count.to_string(),
                row.index_count.to_string(),
                row.p_at_1.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }
}
