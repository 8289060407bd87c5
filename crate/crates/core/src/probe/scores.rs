//! F1 and average precision for single-label multi-class predictions.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::store::ClassId;

#[derive(Clone, Copy, Debug, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl Counts {
    fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Returns `(micro F1, macro F1)`.
///
/// Macro F1 averages over classes that occur in either `truths` or
/// `predictions`. Micro F1 pools TP/FP/FN over all classes.
pub fn f1_scores(predictions: &[ClassId], truths: &[ClassId], classes: usize) -> Result<(f64, f64)> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut counts = vec![Counts::default(); classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p as usize >= classes || t as usize >= classes {
            return Err(Error::UnknownClass(format!("class id {}", p.max(t))));
        }
        if p == t {
            counts[t as usize].tp += 1;
        } else {
            counts[p as usize].fp += 1;
            counts[t as usize].fn_ += 1;
        }
    }
    let present: Vec<&Counts> = counts.iter().filter(|c| c.tp + c.fp + c.fn_ > 0).collect();
    let macro_f1 = present.iter().map(|c| c.f1()).sum::<f64>() / present.len() as f64;
    let pooled = counts.iter().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    Ok((pooled.f1(), macro_f1))
}

/// Non-interpolated average precision: the mean, over positives, of the
/// precision at each positive's rank. Items are ranked by descending score,
/// ties by ascending position. `None` when there is no positive.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positives.len());
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Returns `(micro AUPRC, macro AUPRC)` from one-vs-rest average precision.
///
/// `scores[i][c]` is sample `i`'s score for class `c`. Macro averages the
/// per-class AP over classes with at least one positive; micro is the AP of
/// all `(sample, class)` pairs flattened sample-major.
pub fn auprc_scores(scores: &[Vec<f64>], truths: &[ClassId], classes: usize) -> Result<(f64, f64)> {
    if scores.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truths.len(),
        });
    }
    if let Some(row) = scores.iter().find(|r| r.len() != classes) {
        return Err(Error::DimensionMismatch {
            expected: classes,
            found: row.len(),
        });
    }
    let mut per_class = Vec::new();
    let mut column = Vec::with_capacity(scores.len());
    let mut positives = Vec::with_capacity(scores.len());
    for c in 0..classes {
        column.clear();
        positives.clear();
        for (row, &t) in scores.iter().zip(truths) {
            column.push(row[c]);
            positives.push(t as usize == c);
        }
        if let Some(ap) = average_precision(&column, &positives) {
            per_class.push(ap);
        }
    }
    if per_class.is_empty() {
        return Err(Error::NoPositives);
    }
    let macro_ap = per_class.iter().sum::<f64>() / per_class.len() as f64;

    let flat_scores: Vec<f64> = scores.iter().flatten().copied().collect();
    let flat_pos: Vec<bool> = truths
        .iter()
        .flat_map(|&t| (0..classes).map(move |c| t as usize == c))
        .collect();
    let micro_ap = average_precision(&flat_scores, &flat_pos).ok_or(Error::NoPositives)?;
    Ok((micro_ap, macro_ap))
}
