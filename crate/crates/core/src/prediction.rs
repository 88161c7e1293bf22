use nalgebra::{DMatrix, DVector};

/// Joint predictive distribution of one output at a set of queries, in
/// original response units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl Prediction {
    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }
}

/// Per-query marginal means and variances, `n_queries x N_op`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPredictions {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

/// Root mean squared error between two equally shaped columns.
pub fn rmse(pred: impl IntoIterator<Item = f64>, truth: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (a, b) in pred.into_iter().zip(truth) {
        sum += (a - b).powi(2);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}
