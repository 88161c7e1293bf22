//! Gaussian correlation on transformed inputs and covariance assembly.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel hyperparameters. Positive quantities are stored as natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    /// Constant prior mean.
    pub beta: f64,
    /// `ln σ²`, process variance.
    pub log_sigma2: f64,
    /// `ln φ_d` for each quantitative variable.
    pub log_phi: Vec<f64>,
    /// `ln` of the latent-coordinate scales, `q * g` entries.
    pub log_phi_z: Vec<f64>,
}

impl KernelParams {
    /// Unit variance, unit scales, zero mean.
    pub fn unit(p: usize, latent_width: usize) -> Self {
        KernelParams {
            beta: 0.0,
            log_sigma2: 0.0,
            log_phi: vec![0.0; p],
            log_phi_z: vec![0.0; latent_width],
        }
    }

    pub fn sigma2(&self) -> f64 {
        self.log_sigma2.exp()
    }

    /// Width of the transformed input this kernel acts on.
    pub fn width(&self) -> usize {
        self.log_phi.len() + self.log_phi_z.len()
    }

    /// Per-coordinate weights `[φ, φ_z]` of the squared distance.
    pub fn weights(&self) -> Vec<f64> {
        self.log_phi
            .iter()
            .chain(&self.log_phi_z)
            .map(|v| v.exp())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.beta)
            .chain(std::iter::once(&self.log_sigma2))
            .chain(&self.log_phi)
            .chain(&self.log_phi_z);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("kernel parameters".into()));
        }
        Ok(())
    }
}

/// `exp(-Σ_d w_d (s_d - s'_d)²)`.
pub fn gaussian_correlation(s: &[f64], s_prime: &[f64], params: &KernelParams) -> Result<f64> {
    if s.len() != s_prime.len() || s.len() != params.width() {
        return Err(Error::DimensionMismatch(format!(
            "correlation of widths {} and {} under a kernel of width {}",
            s.len(),
            s_prime.len(),
            params.width()
        )));
    }
    Ok(correlation(s, s_prime, &params.weights()))
}

#[inline]
pub(crate) fn correlation(s: &[f64], s_prime: &[f64], weights: &[f64]) -> f64 {
    let mut d2 = 0.0;
    for ((a, b), w) in s.iter().zip(s_prime).zip(weights) {
        let d = a - b;
        d2 += w * d * d;
    }
    (-d2).exp()
}

/// `σ² r(A_i, B_j)` for every row pair.
pub fn cross_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    if a.ncols() != params.width() || b.ncols() != params.width() {
        return Err(Error::DimensionMismatch(format!(
            "covariance of widths {} and {} under a kernel of width {}",
            a.ncols(),
            b.ncols(),
            params.width()
        )));
    }
    Ok(covariance(a, b, params.sigma2(), &params.weights()))
}

pub(crate) fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma2: f64, weights: &[f64]) -> DMatrix<f64> {
    let width = weights.len();
    let mut out = DMatrix::zeros(a.nrows(), b.nrows());
    // Column-major points make the inner loop contiguous.
    let at = a.transpose();
    let bt = b.transpose();
    for j in 0..b.nrows() {
        let bj = &bt.as_slice()[j * width..(j + 1) * width];
        for i in 0..a.nrows() {
            let ai = &at.as_slice()[i * width..(i + 1) * width];
            out[(i, j)] = sigma2 * correlation(ai, bj, weights);
        }
    }
    out
}

/// Covariance of a point set with itself, exactly symmetric with diagonal `σ²`.
pub(crate) fn self_covariance(a: &DMatrix<f64>, sigma2: f64, weights: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let width = weights.len();
    let at = a.transpose();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..n {
        out[(j, j)] = sigma2;
        let aj = &at.as_slice()[j * width..(j + 1) * width];
        for i in (j + 1)..n {
            let ai = &at.as_slice()[i * width..(i + 1) * width];
            let v = sigma2 * correlation(ai, aj, weights);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Accumulated derivatives of a scalar through covariance entries.
#[derive(Debug, Clone)]
pub(crate) struct KernelGrad {
    pub log_sigma2: f64,
    /// Per-coordinate `∂/∂ ln w_d`.
    pub log_weights: Vec<f64>,
}

impl KernelGrad {
    pub fn zeros(width: usize) -> Self {
        KernelGrad {
            log_sigma2: 0.0,
            log_weights: vec![0.0; width],
        }
    }
}

/// Back-propagates `upstream = ∂F/∂K` through `K = σ² r(A, B)`.
///
/// `cov` must be the covariance evaluated at `(a, b)`. Gradients with respect
/// to the point coordinates are added to `d_a` and `d_b` when given.
pub(crate) fn backprop_covariance(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cov: &DMatrix<f64>,
    upstream: &DMatrix<f64>,
    weights: &[f64],
    grad: &mut KernelGrad,
    d_a: Option<&mut DMatrix<f64>>,
    d_b: Option<&mut DMatrix<f64>>,
) {
    let width = weights.len();
    let at = a.transpose();
    let bt = b.transpose();
    let mut da_t = d_a.as_ref().map(|_| DMatrix::<f64>::zeros(width, a.nrows()));
    let mut db_t = d_b.as_ref().map(|_| DMatrix::<f64>::zeros(width, b.nrows()));
    let mut dlogw = vec![0.0; width];
    let mut dls = 0.0;
    for j in 0..b.nrows() {
        let bj = &bt.as_slice()[j * width..(j + 1) * width];
        for i in 0..a.nrows() {
            let e = upstream[(i, j)] * cov[(i, j)];
            if e == 0.0 {
                continue;
            }
            dls += e;
            let ai = &at.as_slice()[i * width..(i + 1) * width];
            for d in 0..width {
                let delta = ai[d] - bj[d];
                let wd = weights[d] * delta;
                dlogw[d] -= e * wd * delta;
                let ds = 2.0 * e * wd;
                if let Some(m) = da_t.as_mut() {
                    m[(d, i)] -= ds;
                }
                if let Some(m) = db_t.as_mut() {
                    m[(d, j)] += ds;
                }
            }
        }
    }
    grad.log_sigma2 += dls;
    for (g, v) in grad.log_weights.iter_mut().zip(&dlogw) {
        *g += v;
    }
    if let (Some(out), Some(m)) = (d_a, da_t) {
        *out += m.transpose();
    }
    if let (Some(out), Some(m)) = (d_b, db_t) {
        *out += m.transpose();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn correlation_examples() {
        let p = KernelParams {
            beta: 0.0,
            log_sigma2: 0.0,
            log_phi: vec![2f64.ln()],
            log_phi_z: vec![],
        };
        assert_eq!(gaussian_correlation(&[0.3], &[0.3], &p).unwrap(), 1.0);
        assert_relative_eq!(gaussian_correlation(&[0.0], &[1.0], &p).unwrap(), (-2f64).exp(), epsilon = 1e-15);

        let latent = KernelParams::unit(0, 2);
        let d = (2f64.ln() / 2.0).sqrt();
        assert_relative_eq!(gaussian_correlation(&[0.0, 0.0], &[d, d], &latent).unwrap(), 0.5, epsilon = 1e-14);
        assert!(matches!(
            gaussian_correlation(&[0.0], &[0.0, 1.0], &latent),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn covariance_examples() {
        let mut p = KernelParams::unit(1, 0);
        p.log_sigma2 = 3f64.ln();
        let one = DMatrix::from_row_slice(1, 1, &[0.4]);
        assert_relative_eq!(cross_covariance(&one, &one, &p).unwrap()[(0, 0)], 3.0, epsilon = 1e-14);

        let dup = DMatrix::from_row_slice(2, 1, &[0.4, 0.4]);
        let k = cross_covariance(&dup, &dup, &p).unwrap();
        assert!(k.iter().all(|v| (v - 3.0).abs() < 1e-14));

        let p = KernelParams {
            beta: 0.0,
            log_sigma2: 0.0,
            log_phi: vec![2f64.ln()],
            log_phi_z: vec![],
        };
        let pts = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let k = cross_covariance(&pts, &pts, &p).unwrap();
        let e = (-2f64).exp();
        assert_relative_eq!(k, DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]), epsilon = 1e-15);
        assert_eq!(self_covariance(&pts, 1.0, &p.weights()), k);
    }
}
