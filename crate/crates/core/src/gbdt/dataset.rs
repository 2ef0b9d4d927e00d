use crate::error::{Error, Result};

/// Row-major feature matrix with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Dataset("no rows".into()));
        }
        if rows.len() != targets.len() {
            return Err(Error::Dataset(format!("{} rows but {} targets", rows.len(), targets.len())));
        }
        let n_features = rows[0].len();
        let mut features = Vec::with_capacity(rows.len() * n_features);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_features {
                return Err(Error::WidthMismatch { expected: n_features, got: r.len() });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("non-finite feature in row {i}")));
            }
            features.extend_from_slice(r);
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::Dataset("non-finite target".into()));
        }
        Ok(Dataset { n_features, features, targets })
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.features[row * self.n_features + feature]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::Dataset("empty subset".into()));
        }
        let mut features = Vec::with_capacity(rows.len() * self.n_features);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Ok(Dataset { n_features: self.n_features, features, targets: rows.iter().map(|r| self.targets[*r]).collect() })
    }

    /// Same features, new targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset> {
        if targets.len() != self.n_rows() {
            return Err(Error::Dataset(format!("{} rows but {} targets", self.n_rows(), targets.len())));
        }
        Ok(Dataset { n_features: self.n_features, features: self.features.clone(), targets })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 1.0]).is_err());
        assert!(Dataset::new(vec![vec![f64::NAN]], vec![0.0]).is_err());
        let d = Dataset::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![5.0, 6.0]).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.subset(&[1]).unwrap().targets(), &[6.0]);
    }
}
