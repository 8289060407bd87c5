//! Embedding-space probes: kNN classification and a linear classifier,
//! both scored with F1 and AUPRC.

pub mod knn;
pub mod linear;
pub mod scores;

use serde::{Deserialize, Serialize};

pub use knn::{knn_classify, select_k, KSelection, KnnConfig, KnnPrediction};
pub use linear::{
    linear_predict, train_linear_probe, EpochLoss, LinearModel, LinearProbeConfig, Samples, TrainedProbe,
};
pub use scores::{auprc_scores, average_precision, f1_scores};

use crate::error::Result;
use crate::store::{ClassId, VectorIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationScores {
    pub auprc_micro: f64,
    pub auprc_macro: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
}

impl ClassificationScores {
    pub fn compute(predictions: &[ClassId], scores: &[Vec<f64>], truths: &[ClassId], classes: usize) -> Result<Self> {
        let (f1_micro, f1_macro) = f1_scores(predictions, truths, classes)?;
        let (auprc_micro, auprc_macro) = auprc_scores(scores, truths, classes)?;
        Ok(Self {
            auprc_micro,
            auprc_macro,
            f1_micro,
            f1_macro,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub best_k: usize,
    pub k_selection: Vec<knn::KScore>,
    #[serde(flatten)]
    pub scores: ClassificationScores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearReport {
    pub best_epoch: usize,
    #[serde(flatten)]
    pub scores: ClassificationScores,
    pub history: Vec<EpochLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub knn: KnnReport,
    pub linear: LinearReport,
}

/// kNN with `k` chosen on `val`, then a linear probe early-stopped on `val`;
/// both are scored on `test`.
pub fn run_probe(
    train: &VectorIndex,
    val: &VectorIndex,
    test: &VectorIndex,
    knn_config: &KnnConfig,
    linear_config: &LinearProbeConfig,
) -> Result<ProbeReport> {
    let classes = train.classes().len();

    let selection = select_k(train, val, knn_config)?;
    let preds = knn::knn_predict_all(test, train, &[selection.best_k])?.remove(0);
    let knn_classes: Vec<ClassId> = preds.iter().map(|p| p.class).collect();
    let knn_scores: Vec<Vec<f64>> = preds.into_iter().map(|p| p.scores).collect();
    let knn = KnnReport {
        best_k: selection.best_k,
        k_selection: selection.scores,
        scores: ClassificationScores::compute(&knn_classes, &knn_scores, test.labels(), classes)?,
    };

    let trained = train_linear_probe(&train.into(), &val.into(), classes, linear_config)?;
    let probs = linear_predict(&trained.model, test.vectors())?;
    let linear_classes: Vec<ClassId> = probs.iter().map(|row| linear::argmax(row)).collect();
    let linear = LinearReport {
        best_epoch: trained.best_epoch,
        scores: ClassificationScores::compute(&linear_classes, &probs, test.labels(), classes)?,
        history: trained.history,
    };

    Ok(ProbeReport { knn, linear })
}

impl LinearReport {
    /// `epoch,train_loss,val_loss` rows.
    pub fn write_history_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "train_loss", "val_loss"])?;
        for h in &self.history {
            csv.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}
