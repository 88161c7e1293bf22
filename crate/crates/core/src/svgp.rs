//! Sparse variational GP on the latent-variable transformed input space.
//!
//! The variational posterior over the zero-mean residual at the inducing
//! locations is `N(μ, Σ)` with `Σ = L Lᵀ`. For a Gaussian likelihood the
//! expected log-likelihood of a point has the closed form
//!
//! ```text
//! ℓ_i = ln N(y_i; β + a_iᵀμ, σ_n²) − (a_iᵀ Σ a_i + b_ii) / (2σ_n²)
//! ```
//!
//! with `a_i = K_II⁻¹ k_I(s_i)` and `b_ii = k(s_i, s_i) − k_I(s_i)ᵀ a_i`. The
//! ELBO scales the batch sum by `n / |batch|` and subtracts the KL divergence
//! from the prior `N(0, K_II)`. `B` is only ever needed through its diagonal.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelGrad, KernelParams};
use crate::latent_map::{LatentMap, MixedPoint, MixedSchema, NormalizedData, Normalization};
use crate::numerics::{cholesky_with_jitter, CholFactor, SeededRng};
use crate::params::{Cursor, Layout, ParamGroup};
use crate::prediction::{PointPredictions, Prediction};

/// Inducing locations in the transformed space, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    pub points: DMatrix<f64>,
}

impl InducingSet {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.points.ncols()
    }
}

/// `N(μ, L Lᵀ)` over the inducing residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalGaussian {
    pub mu: DVector<f64>,
    pub sigma_lower: DMatrix<f64>,
}

impl VariationalGaussian {
    pub fn new(mu: DVector<f64>, sigma_lower: DMatrix<f64>) -> Result<Self> {
        let v = VariationalGaussian { mu, sigma_lower };
        v.validate()?;
        Ok(v)
    }

    /// Mean zero, covariance equal to the prior `K_II`.
    pub fn from_prior(k_chol: &CholFactor) -> Self {
        VariationalGaussian {
            mu: DVector::zeros(k_chol.order()),
            sigma_lower: k_chol.lower().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.sigma_lower * self.sigma_lower.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.mu.len();
        if self.sigma_lower.nrows() != m || self.sigma_lower.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "variational mean of length {m} with a {}x{} covariance factor",
                self.sigma_lower.nrows(),
                self.sigma_lower.ncols()
            )));
        }
        if self.mu.iter().chain(self.sigma_lower.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("variational parameters".into()));
        }
        for i in 0..m {
            let d = self.sigma_lower[(i, i)];
            if d <= 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "variational covariance factor has diagonal entry {i} = {d}"
                )));
            }
            for j in (i + 1)..m {
                if self.sigma_lower[(i, j)] != 0.0 {
                    return Err(Error::InvariantViolation(
                        "variational covariance factor is not lower triangular".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn factor(&self) -> Result<CholFactor> {
        CholFactor::from_lower(self.sigma_lower.clone())
    }
}

/// Terms of the ELBO on one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub elbo: f64,
    /// Scaled expected log-likelihood.
    pub lt: f64,
    pub kl: f64,
}

/// Gradients of the ELBO.
#[derive(Debug, Clone)]
pub struct SparseGradient {
    /// In the model's hyperparameter layout order.
    pub hyper: Vec<f64>,
    /// `∂ELBO/∂μ` per latent function.
    pub mu: Vec<DVector<f64>>,
    /// Symmetric `∂ELBO/∂Σ` per latent function.
    pub sigma: Vec<DMatrix<f64>>,
}

impl SparseGradient {
    /// `∂ELBO/∂L` for `Σ = L Lᵀ`, lower triangle only.
    pub fn sigma_lower(&self, var: &[VariationalGaussian]) -> Vec<DMatrix<f64>> {
        self.sigma
            .iter()
            .zip(var)
            .map(|(g, v)| (g * &v.sigma_lower * 2.0).lower_triangle())
            .collect()
    }
}

/// `KL(N(μ, Σ) ‖ N(0, K_II))`.
pub fn kl_term(var: &VariationalGaussian, k_chol: &CholFactor) -> Result<f64> {
    let m = var.len();
    if k_chol.order() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} variational values against an inducing covariance of order {}",
            k_chol.order()
        )));
    }
    let s_chol = var.factor()?;
    // tr(K⁻¹Σ) = ‖L_K⁻¹ L_Σ‖²_F
    let v = k_chol.solve_lower(&var.sigma_lower)?;
    let trace = v.norm_squared();
    let w = k_chol.solve_lower(&DMatrix::from_column_slice(m, 1, var.mu.as_slice()))?;
    let quad = w.norm_squared();
    Ok(0.5 * (k_chol.logdet() - s_chol.logdet() - m as f64 + trace + quad))
}

/// Forward quantities for one latent function on one batch.
pub(crate) struct Block {
    pub kii: DMatrix<f64>,
    pub chol: CholFactor,
    pub kix: DMatrix<f64>,
    /// `K_II⁻¹ K_IX`, one column per batch point.
    pub a: DMatrix<f64>,
    /// `a_iᵀ μ`.
    pub h: DVector<f64>,
    /// `a_iᵀ Σ a_i + b_ii`.
    pub q: DVector<f64>,
    pub kl: f64,
    sigma: DMatrix<f64>,
    sigma2: f64,
}

pub(crate) fn block_forward(
    s_ind: &DMatrix<f64>,
    s_batch: &DMatrix<f64>,
    sigma2: f64,
    weights: &[f64],
    var: &VariationalGaussian,
) -> Result<Block> {
    let kii = kernels::self_covariance(s_ind, sigma2, weights);
    let chol = cholesky_with_jitter(&kii, 0.0)?;
    let kix = kernels::covariance(s_ind, s_batch, sigma2, weights);
    let a = chol.solve(&kix)?;
    let h = a.tr_mul(&var.mu);
    let sigma = var.sigma();
    let lta = var.sigma_lower.transpose() * &a;
    let nb = s_batch.nrows();
    let mut q = DVector::zeros(nb);
    for i in 0..nb {
        let b = sigma2 - kix.column(i).dot(&a.column(i));
        q[i] = lta.column(i).norm_squared() + b.max(0.0);
    }
    let kl = kl_term(var, &chol)?;
    Ok(Block {
        kii,
        chol,
        kix,
        a,
        h,
        q,
        kl,
        sigma,
        sigma2,
    })
}

pub(crate) struct BlockGrad {
    pub kernel: KernelGrad,
    pub d_ind: DMatrix<f64>,
    pub d_batch: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Back-propagates `F = Σ_i ρ_i h_i − κ Σ_i q_i − KL` through one block.
///
/// `ρ_i = ∂F/∂h_i` and `κ = −∂F/∂q_i` (the same for every batch point).
pub(crate) fn block_backward(
    blk: &Block,
    s_ind: &DMatrix<f64>,
    s_batch: &DMatrix<f64>,
    weights: &[f64],
    var: &VariationalGaussian,
    rho: &DVector<f64>,
    kappa: f64,
) -> Result<BlockGrad> {
    let kinv = blk.chol.inverse();
    let alpha = &kinv * &var.mu;
    let a = &blk.a;
    let kinv_sigma = &kinv * &blk.sigma;
    let m_mat = &kinv_sigma * a;
    let a_rho = a * rho;

    // ∂F/∂K_IX
    let mut g_kx = &m_mat - a;
    g_kx *= -2.0 * kappa;
    g_kx.ger(1.0, &alpha, rho, 1.0);

    // ∂F/∂K_II, data part then KL part
    let aat = a * a.transpose();
    let amt = a * m_mat.transpose();
    let mut g_k = (&amt + amt.transpose() - &aat) * kappa;
    g_k.ger(-1.0, &a_rho, &alpha, 1.0);
    let kinv_sigma_kinv = &kinv_sigma * &kinv;
    let mut kl_k = &kinv - &kinv_sigma_kinv;
    kl_k.ger(-1.0, &alpha, &alpha, 1.0);
    g_k -= kl_k * 0.5;

    let s_inv = var.factor()?.inverse();
    let g_mu = &a_rho - &alpha;
    let mut g_sigma = (&kinv - &s_inv) * -0.5 - aat * kappa;
    crate::numerics::symmetrize(&mut g_sigma);

    let width = weights.len();
    let mut kg = KernelGrad::zeros(width);
    let mut d_ind = DMatrix::zeros(s_ind.nrows(), width);
    let mut d_ind_b = DMatrix::zeros(s_ind.nrows(), width);
    let mut d_batch = DMatrix::zeros(s_batch.nrows(), width);
    kernels::backprop_covariance(
        s_ind,
        s_ind,
        &blk.kii,
        &g_k,
        weights,
        &mut kg,
        Some(&mut d_ind),
        Some(&mut d_ind_b),
    );
    kernels::backprop_covariance(
        s_ind,
        s_batch,
        &blk.kix,
        &g_kx,
        weights,
        &mut kg,
        Some(&mut d_ind_b),
        Some(&mut d_batch),
    );
    d_ind += d_ind_b;
    // the k(s_i, s_i) = σ² term inside every b_ii
    kg.log_sigma2 -= kappa * blk.sigma2 * s_batch.nrows() as f64;

    Ok(BlockGrad {
        kernel: kg,
        d_ind,
        d_batch,
        mu: g_mu,
        sigma: g_sigma,
    })
}

/// Single-output sparse variational LVGP.
#[derive(Debug, Clone, PartialEq)]
pub struct SVModel {
    pub schema: MixedSchema,
    pub normalization: Normalization,
    pub kernel: KernelParams,
    pub log_noise: f64,
    pub map: LatentMap,
    pub inducing: InducingSet,
    pub var: VariationalGaussian,
}

/// `n_I` distinct training points, encoded with latent copy `copy`.
pub fn init_inducing(
    data: &NormalizedData,
    map: &LatentMap,
    copy: usize,
    n_inducing: usize,
    rng: &mut SeededRng,
) -> Result<InducingSet> {
    if n_inducing == 0 || n_inducing > data.len() {
        return Err(Error::InvalidConfig(format!(
            "{n_inducing} inducing points requested from {} training points",
            data.len()
        )));
    }
    let rows = rng.sample_indices(data.len(), n_inducing);
    Ok(InducingSet {
        points: data.encode_rows(map, copy, &rows),
    })
}

impl SVModel {
    /// Random latent vectors, unit scales, prior variational state, inducing
    /// points drawn from the training data.
    pub fn initialize(
        data: &NormalizedData,
        normalization: Normalization,
        n_inducing: usize,
        latent_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let schema = data.schema.clone();
        let map = LatentMap::random(
            &schema.levels,
            latent_dim,
            crate::latent_map::LatentStructure::Shared,
            1,
            rng,
        );
        let y = data.y.column(0);
        let mean = y.mean();
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let var = if var > 0.0 { var } else { 1.0 };
        let mut kernel = KernelParams::unit(schema.p, schema.q() * latent_dim);
        kernel.beta = mean;
        kernel.log_sigma2 = var.ln();
        let inducing = init_inducing(data, &map, 0, n_inducing, rng)?;
        let kii = kernels::self_covariance(&inducing.points, kernel.sigma2(), &kernel.weights());
        let chol = cholesky_with_jitter(&kii, 0.0)?;
        Ok(SVModel {
            schema,
            normalization,
            log_noise: (1e-2 * var).ln(),
            kernel,
            map,
            inducing,
            var: VariationalGaussian::from_prior(&chol),
        })
    }

    /// Puts the inducing points on the encoded training inputs `rows` under
    /// the current latent map and resets `q` to the prior.
    pub fn anchor_inducing(&mut self, data: &NormalizedData, rows: &[usize]) -> Result<()> {
        self.inducing = InducingSet {
            points: data.encode_rows(&self.map, 0, rows),
        };
        let kii = kernels::self_covariance(&self.inducing.points, self.kernel.sigma2(), &self.kernel.weights());
        self.var = VariationalGaussian::from_prior(&cholesky_with_jitter(&kii, 0.0)?);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.kernel.validate()?;
        self.map.validate()?;
        self.var.validate()?;
        let width = self.schema.p + self.map.width();
        if self.kernel.width() != width || self.inducing.width() != width {
            return Err(Error::InvariantViolation(format!(
                "transformed width {width}, kernel width {}, inducing width {}",
                self.kernel.width(),
                self.inducing.width()
            )));
        }
        if self.inducing.len() != self.var.len() || self.inducing.is_empty() {
            return Err(Error::InvariantViolation(format!(
                "{} inducing points with {} variational values",
                self.inducing.len(),
                self.var.len()
            )));
        }
        if !self.log_noise.is_finite() || self.inducing.points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sparse model parameters".into()));
        }
        Ok(())
    }

    /// `[β, ln σ², ln φ, ln φ_z, Z, S_I (row-major), ln σ_n²]`.
    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        l.push(ParamGroup::Beta, 1, true);
        l.push(ParamGroup::LogSigma2, 1, true);
        l.push(ParamGroup::LogPhi, self.kernel.log_phi.len(), true);
        l.push(ParamGroup::LogPhiZ, self.kernel.log_phi_z.len(), false);
        l.push(ParamGroup::Latent, self.map.values().len(), true);
        l.push(ParamGroup::Inducing, self.inducing.points.len(), true);
        l.push(ParamGroup::LogNoise, 1, true);
        l
    }

    pub fn hyper(&self) -> Vec<f64> {
        let mut v = vec![self.kernel.beta, self.kernel.log_sigma2];
        v.extend(&self.kernel.log_phi);
        v.extend(&self.kernel.log_phi_z);
        v.extend(self.map.values());
        v.extend(self.inducing.points.transpose().iter());
        v.push(self.log_noise);
        v
    }

    pub fn set_hyper(&mut self, v: &[f64]) {
        let mut c = Cursor::new(v);
        self.kernel.beta = c.scalar();
        self.kernel.log_sigma2 = c.scalar();
        let n = self.kernel.log_phi.len();
        self.kernel.log_phi.copy_from_slice(c.take(n));
        let n = self.kernel.log_phi_z.len();
        self.kernel.log_phi_z.copy_from_slice(c.take(n));
        let n = self.map.values().len();
        self.map.values_mut().copy_from_slice(c.take(n));
        let (m, d) = self.inducing.points.shape();
        self.inducing.points = DMatrix::from_row_slice(m, d, c.take(m * d));
        self.log_noise = c.scalar();
        debug_assert!(c.finished());
    }

    /// ELBO and its gradient on `batch`, scaled to a dataset of `n_total` points.
    pub fn elbo_gradient(
        &self,
        data: &NormalizedData,
        batch: &[usize],
        n_total: usize,
    ) -> Result<(ElboParts, SparseGradient)> {
        check_batch(batch, n_total)?;
        let s_batch = data.encode_rows(&self.map, 0, batch);
        let weights = self.kernel.weights();
        let sigma2 = self.kernel.sigma2();
        let blk = block_forward(&self.inducing.points, &s_batch, sigma2, &weights, &self.var)?;
        let noise = self.log_noise.exp();
        let c = n_total as f64 / batch.len() as f64;
        let nb = batch.len();
        let mut rho = DVector::zeros(nb);
        let mut lt = 0.0;
        let mut d_noise = 0.0;
        for (r, &i) in batch.iter().enumerate() {
            let res = data.y[(i, 0)] - self.kernel.beta - blk.h[r];
            let sq = res * res + blk.q[r];
            lt += -0.5 * (2.0 * PI * noise).ln() - sq / (2.0 * noise);
            rho[r] = c * res / noise;
            d_noise += c * (-0.5 + sq / (2.0 * noise));
        }
        lt *= c;
        let elbo = lt - blk.kl;
        if !elbo.is_finite() {
            return Err(Error::NonFinite("elbo".into()));
        }
        let kappa = c / (2.0 * noise);
        let bg = block_backward(&blk, &self.inducing.points, &s_batch, &weights, &self.var, &rho, kappa)?;

        let p = self.schema.p;
        let mut hyper = vec![rho.sum(), bg.kernel.log_sigma2];
        hyper.extend(&bg.kernel.log_weights);
        let mut zgrad = vec![0.0; self.map.values().len()];
        crate::exact_gp::scatter_latent_grad(&bg.d_batch, data, batch, &self.map, 0, p, &mut zgrad);
        hyper.extend(zgrad);
        hyper.extend(bg.d_ind.transpose().iter());
        hyper.push(d_noise);
        Ok((
            ElboParts { elbo, lt, kl: blk.kl },
            SparseGradient {
                hyper,
                mu: vec![bg.mu],
                sigma: vec![bg.sigma],
            },
        ))
    }

    fn encode_queries(&self, queries: &[MixedPoint]) -> Result<DMatrix<f64>> {
        let width = self.schema.p + self.map.width();
        let mut out = DMatrix::zeros(queries.len(), width);
        let mut row = vec![0.0; width];
        for (i, q) in queries.iter().enumerate() {
            self.schema.check_point(q)?;
            self.map.encode_into(&self.normalization.apply_point(q), 0, &mut row);
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Mean and latent covariance at transformed points, training units.
    pub fn predict_normalized(&self, s: &DMatrix<f64>, full_cov: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (h, cov) = sparse_posterior(
            &self.inducing.points,
            s,
            self.kernel.sigma2(),
            &self.kernel.weights(),
            &self.var,
            full_cov,
        )?;
        Ok((h.add_scalar(self.kernel.beta), cov))
    }
}

/// Posterior of the zero-mean residual at `s`: `(K_*I K_II⁻¹ μ, covariance)`.
///
/// The covariance is full when `full_cov`, otherwise a single column of
/// marginal variances. Variances are floored at zero.
pub(crate) fn sparse_posterior(
    s_ind: &DMatrix<f64>,
    s: &DMatrix<f64>,
    sigma2: f64,
    weights: &[f64],
    var: &VariationalGaussian,
    full_cov: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let kii = kernels::self_covariance(s_ind, sigma2, weights);
    let chol = cholesky_with_jitter(&kii, 0.0)?;
    let kis = kernels::covariance(s_ind, s, sigma2, weights);
    let a = chol.solve(&kis)?;
    let mean = a.tr_mul(&var.mu);
    let lta = var.sigma_lower.transpose() * &a;
    let cov = if full_cov {
        let mut c = lta.transpose() * &lta + kernels::self_covariance(s, sigma2, weights) - kis.transpose() * &a;
        crate::numerics::symmetrize(&mut c);
        for i in 0..c.nrows() {
            c[(i, i)] = c[(i, i)].max(0.0);
        }
        c
    } else {
        let mut c = DMatrix::zeros(s.nrows(), 1);
        for i in 0..s.nrows() {
            let v = lta.column(i).norm_squared() + sigma2 - kis.column(i).dot(&a.column(i));
            c[(i, 0)] = v.max(0.0);
        }
        c
    };
    Ok((mean, cov))
}

pub(crate) fn check_batch(batch: &[usize], n_total: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if n_total == 0 {
        return Err(Error::InvalidConfig("n_total must be positive".into()));
    }
    Ok(())
}

/// Minibatch ELBO: `(n_total / |batch|) Σ_batch ℓ_i − KL`.
pub fn elbo(model: &SVModel, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<ElboParts> {
    check_batch(batch, n_total)?;
    let kp = &model.kernel;
    let sigma2 = kp.sigma2();
    let weights = kp.weights();
    let kii = kernels::self_covariance(&model.inducing.points, sigma2, &weights);
    let chol = cholesky_with_jitter(&kii, 0.0)?;
    let s_batch = data.encode_rows(&model.map, 0, batch);
    let kix = kernels::covariance(&model.inducing.points, &s_batch, sigma2, &weights);
    let a = chol.solve(&kix)?;
    let sigma = model.var.sigma();
    let noise = model.log_noise.exp();
    let mut sum = 0.0;
    for (r, &i) in batch.iter().enumerate() {
        let ai = a.column(r);
        let mean = kp.beta + ai.dot(&model.var.mu);
        let res = data.y[(i, 0)] - mean;
        let b_ii = (sigma2 - kix.column(r).dot(&ai)).max(0.0);
        let quad = (ai.transpose() * &sigma * ai)[(0, 0)];
        sum += -0.5 * (2.0 * PI * noise).ln() - res * res / (2.0 * noise) - (quad + b_ii) / (2.0 * noise);
    }
    let lt = sum * n_total as f64 / batch.len() as f64;
    let kl = kl_term(&model.var, &chol)?;
    let elbo = lt - kl;
    if !elbo.is_finite() {
        return Err(Error::NonFinite("elbo".into()));
    }
    Ok(ElboParts { elbo, lt, kl })
}

/// Predictive mean and latent covariance at `queries`, original units.
pub fn predict(model: &SVModel, queries: &[MixedPoint]) -> Result<Prediction> {
    let s = model.encode_queries(queries)?;
    let (mean, cov) = model.predict_normalized(&s, true)?;
    let norm = &model.normalization;
    Ok(Prediction {
        mean: mean.map(|m| norm.denormalize_mean(0, m)),
        cov: cov.map(|c| norm.denormalize_var(0, c)),
    })
}

pub fn predict_marginal(model: &SVModel, queries: &[MixedPoint]) -> Result<PointPredictions> {
    let s = model.encode_queries(queries)?;
    let (mean, var) = model.predict_normalized(&s, false)?;
    let norm = &model.normalization;
    Ok(PointPredictions {
        mean: DMatrix::from_iterator(mean.len(), 1, mean.iter().map(|m| norm.denormalize_mean(0, *m))),
        variance: var.map(|v| norm.denormalize_var(0, v)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_var(mu: f64, sigma: f64) -> VariationalGaussian {
        VariationalGaussian::new(DVector::from_element(1, mu), DMatrix::from_element(1, 1, sigma.sqrt())).unwrap()
    }

    #[test]
    fn kl_examples() {
        let k = cholesky_with_jitter(&DMatrix::identity(1, 1), 0.0).unwrap();
        assert!(kl_term(&scalar_var(0.0, 1.0), &k).unwrap().abs() < 1e-15);
        assert_relative_eq!(kl_term(&scalar_var(2.0, 1.0), &k).unwrap(), 2.0, epsilon = 1e-14);
        let e = std::f64::consts::E;
        assert_relative_eq!(kl_term(&scalar_var(0.0, e), &k).unwrap(), 0.5 * (e - 2.0), epsilon = 1e-14);
        assert_relative_eq!(0.5 * (e - 2.0), 0.3591409142295225, epsilon = 1e-15);
    }

    #[test]
    fn kl_of_prior_is_zero() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0]);
        let k = cholesky_with_jitter(&m, 0.0).unwrap();
        let var = VariationalGaussian::from_prior(&k);
        assert!(kl_term(&var, &k).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let k = cholesky_with_jitter(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert!(matches!(kl_term(&scalar_var(0.0, 1.0), &k), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn variational_validation() {
        let bad = VariationalGaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, -0.2]));
        assert!(matches!(bad, Err(Error::InvariantViolation(_))));
        let upper = VariationalGaussian::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]));
        assert!(matches!(upper, Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let s_ind = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let var = VariationalGaussian::new(
            DVector::from_vec(vec![0.7, -0.2]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, 0.2]),
        )
        .unwrap();
        let far = DMatrix::from_row_slice(1, 1, &[1e4]);
        let (m, c) = sparse_posterior(&s_ind, &far, 2.5, &[1.0], &var, true).unwrap();
        assert!(m[0].abs() < 1e-300);
        assert_relative_eq!(c[(0, 0)], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn inducing_location_with_collapsed_covariance() {
        let s_ind = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let var = VariationalGaussian::new(
            DVector::from_vec(vec![0.7, -0.2]),
            DMatrix::from_row_slice(2, 2, &[1e-9, 0.0, 0.0, 1e-9]),
        )
        .unwrap();
        let (m, c) = sparse_posterior(&s_ind, &s_ind, 1.0, &[1.0], &var, false).unwrap();
        assert_relative_eq!(m[0], 0.7, epsilon = 1e-10);
        assert_relative_eq!(m[1], -0.2, epsilon = 1e-10);
        assert!(c.iter().all(|v| *v < 1e-9));
    }
}
