use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::booster::{train, GbdtParams, Objective};
use super::dataset::Dataset;
use super::metrics::{log_loss, mse};
use crate::error::{Error, Result};

/// Fold index per row: a seeded shuffle dealt round-robin into `k` folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, row) in perm.into_iter().enumerate() {
        fold[row] = pos % k;
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    /// Mean validation metric: MSE for squared, log loss for logistic.
    pub mean: f64,
    pub folds: Vec<f64>,
}

pub fn cross_validate(data: &Dataset, params: &GbdtParams, objective: Objective, k: usize, seed: u64) -> Result<CvResult> {
    if k < 2 {
        return Err(Error::Config("k-fold needs k >= 2".into()));
    }
    if k > data.n_rows() {
        return Err(Error::Config(format!("k = {k} exceeds {} rows", data.n_rows())));
    }
    let assignment = fold_assignment(data.n_rows(), k, seed);
    let folds = (0..k)
        .into_par_iter()
        .map(|f| {
            let (val, tr): (Vec<usize>, Vec<usize>) = (0..data.n_rows()).partition(|i| assignment[*i] == f);
            let model = train(&data.subset(&tr)?, params, objective)?;
            let vd = data.subset(&val)?;
            let pred = model.predict_all(&vd)?;
            Ok(match objective {
                Objective::Squared => mse(&pred, vd.targets()),
                Objective::Logistic => log_loss(&pred, vd.targets()),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvResult { mean: folds.iter().sum::<f64>() / k as f64, folds })
}

/// Candidate values of the four tuned hyperparameters. An empty list keeps
/// the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamGrid {
    pub num_leaves: Vec<usize>,
    pub min_data_in_leaf: Vec<usize>,
    pub lambda_l1: Vec<f64>,
    pub lambda_l2: Vec<f64>,
}

impl ParamGrid {
    pub fn points(&self, base: &GbdtParams) -> Result<Vec<GbdtParams>> {
        if self.num_leaves.is_empty() && self.min_data_in_leaf.is_empty() && self.lambda_l1.is_empty() && self.lambda_l2.is_empty() {
            return Err(Error::Config("empty hyperparameter grid".into()));
        }
        fn or<T: Copy>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for nl in or(&self.num_leaves, base.num_leaves) {
            for md in or(&self.min_data_in_leaf, base.min_data_in_leaf) {
                for l1 in or(&self.lambda_l1, base.lambda_l1) {
                    for l2 in or(&self.lambda_l2, base.lambda_l2) {
                        let p = GbdtParams { num_leaves: nl, min_data_in_leaf: md, lambda_l1: l1, lambda_l2: l2, ..*base };
                        p.validate()?;
                        out.push(p);
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub best: GbdtParams,
    pub best_score: f64,
    /// Every grid point with its CV outcome, in enumeration order.
    pub evaluated: Vec<(GbdtParams, CvResult)>,
}

/// Exhaustive search scored by `k`-fold CV. Ties go to fewer leaves, then to
/// a larger minimum leaf size.
pub fn grid_search(
    data: &Dataset,
    base: &GbdtParams,
    grid: &ParamGrid,
    objective: Objective,
    k: usize,
    seed: u64,
) -> Result<GridResult> {
    let points = grid.points(base)?;
    let evaluated = points
        .par_iter()
        .map(|p| cross_validate(data, p, objective, k, seed).map(|cv| (*p, cv)))
        .collect::<Result<Vec<_>>>()?;
    let (best, cv) = evaluated
        .iter()
        .min_by(|(pa, a), (pb, b)| {
            a.mean
                .total_cmp(&b.mean)
                .then(pa.num_leaves.cmp(&pb.num_leaves))
                .then(pb.min_data_in_leaf.cmp(&pa.min_data_in_leaf))
        })
        .expect("grid has points");
    Ok(GridResult { best: *best, best_score: cv.mean, evaluated })
}
