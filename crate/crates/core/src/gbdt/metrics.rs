use serde::Serialize;

use crate::error::{Error, Result};

/// Confusion counts with "bad" as the positive class. Rates whose
/// denominator is zero are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationMetrics {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// `tn / (tn + fp)`: recall of the negative (good) class.
    pub complementary_sensitivity: Option<f64>,
    /// `fp / (tp + fp)`: misplaced share of the predicted-bad column.
    pub fn_share_of_bad: Option<f64>,
    /// `fn / (tn + fp)`: misplaced calls measured against the good row.
    pub fp_share_of_good: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion_metrics(tp: u64, tn: u64, fp: u64, fn_: u64) -> Result<ClassificationMetrics> {
    let total = tp + tn + fp + fn_;
    if total == 0 {
        return Err(Error::Dataset("empty confusion matrix".into()));
    }
    Ok(ClassificationMetrics {
        tp,
        tn,
        fp,
        fn_,
        accuracy: ratio(tp + tn, total),
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        complementary_sensitivity: ratio(tn, tn + fp),
        fn_share_of_bad: ratio(fp, tp + fp),
        fp_share_of_good: ratio(fn_, tn + fp),
    })
}

impl ClassificationMetrics {
    /// Tallies predicted vs actual labels (`true` = bad).
    pub fn from_labels(predicted: &[bool], actual: &[bool]) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::Dataset(format!("{} predictions for {} labels", predicted.len(), actual.len())));
        }
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        confusion_metrics(tp, tn, fp, fn_)
    }

    pub fn csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        format!(
            "tp,tn,fp,fn,accuracy,precision,recall,complementary_sensitivity\n{},{},{},{},{},{},{},{}\n",
            self.tp,
            self.tn,
            self.fp,
            self.fn_,
            f(self.accuracy),
            f(self.precision),
            f(self.recall),
            f(self.complementary_sensitivity)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
}

pub fn regression_metrics(predictions: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Dataset(format!("{} predictions for {} targets", predictions.len(), targets.len())));
    }
    let n = targets.len() as f64;
    let mse = mse(predictions, targets);
    let mae = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    Ok(RegressionMetrics { mse, rmse: mse.sqrt(), mae })
}

pub fn mse(predictions: &[f64], targets: &[f64]) -> f64 {
    predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / targets.len() as f64
}

/// Mean binary cross-entropy of probabilities against 0/1 targets.
pub fn log_loss(probabilities: &[f64], targets: &[f64]) -> f64 {
    const EPS: f64 = 1e-15;
    probabilities
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let p = p.clamp(EPS, 1.0 - EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / targets.len() as f64
}
