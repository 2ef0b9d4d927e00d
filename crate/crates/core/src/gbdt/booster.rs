use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::tree::{grow, presort, DecisionTree, TreeParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Logistic,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub learning_rate: f64,
    pub n_trees: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams { num_leaves: 31, min_data_in_leaf: 20, lambda_l1: 0.0, lambda_l2: 0.0, learning_rate: 0.1, n_trees: 100 }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.num_leaves >= 2
            && self.min_data_in_leaf >= 1
            && self.lambda_l1 >= 0.0
            && self.lambda_l2 >= 0.0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.n_trees >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid GBDT parameters {self:?}")))
        }
    }

    fn tree(&self) -> TreeParams {
        TreeParams {
            num_leaves: self.num_leaves,
            min_data_in_leaf: self.min_data_in_leaf,
            lambda_l1: self.lambda_l1,
            lambda_l2: self.lambda_l2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub objective: Objective,
    pub params: GbdtParams,
    pub n_features: usize,
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl GbdtModel {
    /// Raw additive score: `base_score` plus `learning_rate` times each tree.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::WidthMismatch { expected: self.n_features, got: x.len() });
        }
        let mut f = self.base_score;
        for t in &self.trees {
            f += self.params.learning_rate * t.predict(x);
        }
        Ok(f)
    }

    /// Regression value, or the positive-class probability for logistic.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let raw = self.predict_raw(x)?;
        Ok(match self.objective {
            Objective::Squared => raw,
            Objective::Logistic => sigmoid(raw),
        })
    }

    pub fn predict_all(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.n_rows()).map(|i| self.predict(data.row(i))).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(text)?;
        m.params.validate()?;
        Ok(m)
    }
}

fn loss(objective: Objective, raw: &[f64], y: &[f64]) -> f64 {
    let n = raw.len() as f64;
    match objective {
        Objective::Squared => raw.iter().zip(y).map(|(f, t)| 0.5 * (f - t) * (f - t)).sum::<f64>() / n,
        // log(1 + e^f) - y f, written to stay finite for large |f|.
        Objective::Logistic => {
            raw.iter().zip(y).map(|(f, t)| f.max(0.0) + (-f.abs()).exp().ln_1p() - t * f).sum::<f64>() / n
        }
    }
}

/// Trains and also returns the mean training loss before the first round
/// and after each round.
pub fn train_with_trace(data: &Dataset, params: &GbdtParams, objective: Objective) -> Result<(GbdtModel, Vec<f64>)> {
    fit(data, params, objective, true)
}

pub fn train(data: &Dataset, params: &GbdtParams, objective: Objective) -> Result<GbdtModel> {
    fit(data, params, objective, false).map(|(m, _)| m)
}

fn fit(data: &Dataset, params: &GbdtParams, objective: Objective, traced: bool) -> Result<(GbdtModel, Vec<f64>)> {
    params.validate()?;
    let n = data.n_rows();
    if n < params.min_data_in_leaf {
        return Err(Error::Dataset(format!("{n} rows is fewer than min_data_in_leaf {}", params.min_data_in_leaf)));
    }
    let y = data.targets();
    let first = y[0];
    let mean = first + y.iter().map(|t| t - first).sum::<f64>() / n as f64;
    let base_score = match objective {
        Objective::Squared => mean,
        Objective::Logistic => {
            if y.iter().any(|t| *t != 0.0 && *t != 1.0) {
                return Err(Error::Dataset("logistic targets must be 0 or 1".into()));
            }
            if mean <= 0.0 || mean >= 1.0 {
                return Err(Error::Dataset("logistic training needs both classes".into()));
            }
            (mean / (1.0 - mean)).ln()
        }
    };
    let tp = params.tree();
    let sorted = presort(data);
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trace = Vec::new();
    if traced {
        trace.push(loss(objective, &raw, y));
    }
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        for i in 0..n {
            match objective {
                Objective::Squared => {
                    grad[i] = raw[i] - y[i];
                    hess[i] = 1.0;
                }
                Objective::Logistic => {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = p * (1.0 - p);
                }
            }
        }
        let tree = grow(&sorted, &grad, &hess, &tp);
        for (i, f) in raw.iter_mut().enumerate() {
            *f += params.learning_rate * tree.predict(data.row(i));
        }
        if traced {
            trace.push(loss(objective, &raw, y));
        }
        trees.push(tree);
    }
    Ok((GbdtModel { objective, params: *params, n_features: data.n_features(), base_score, trees }, trace))
}
