//! Dense GP / LVGP with constant mean, fitted by maximum likelihood.
//!
//! The covariance of the observations is `K = σ² R + σ_n² I`. This model is
//! `O(n³)` and exists as the small-n reference for the sparse models.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelGrad, KernelParams};
use crate::latent_map::{
    Dataset, LatentMap, LatentStructure, MixedPoint, MixedSchema, NormalizedData, Normalization,
    DEFAULT_LATENT_DIM,
};
use crate::numerics::{cholesky_with_jitter, CholFactor, SeededRng};
use crate::params::{Cursor, Layout, ParamGroup};
use crate::prediction::{PointPredictions, Prediction};
use crate::training::{Adam, AdamConfig, StopReason, TraceRecord, TrainingTrace};

pub const DEFAULT_DENSE_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExactConfig {
    pub latent_dim: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub dense_cap: usize,
    /// Pin `σ_n²` to `1e-8 · var(y)` instead of learning it.
    pub noise_free: bool,
    /// Iterations per convergence window; 0 disables the check.
    pub window: usize,
    pub tolerance: f64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig {
            latent_dim: DEFAULT_LATENT_DIM,
            restarts: 8,
            max_iters: 1000,
            adam: AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            seed: 0,
            dense_cap: DEFAULT_DENSE_CAP,
            noise_free: false,
            window: 50,
            tolerance: 1e-7,
        }
    }
}

/// Trainable state of the dense model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactParams {
    pub kernel: KernelParams,
    pub log_noise: f64,
    pub map: LatentMap,
}

impl ExactParams {
    /// `[β, ln σ², ln φ, ln φ_z, Z, ln σ_n²]`.
    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        l.push(ParamGroup::Beta, 1, true);
        l.push(ParamGroup::LogSigma2, 1, true);
        l.push(ParamGroup::LogPhi, self.kernel.log_phi.len(), true);
        l.push(ParamGroup::LogPhiZ, self.kernel.log_phi_z.len(), false);
        l.push(ParamGroup::Latent, self.map.values().len(), true);
        l.push(ParamGroup::LogNoise, 1, true);
        l
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.kernel.beta, self.kernel.log_sigma2];
        v.extend(&self.kernel.log_phi);
        v.extend(&self.kernel.log_phi_z);
        v.extend(self.map.values());
        v.push(self.log_noise);
        v
    }

    pub fn set_from(&mut self, v: &[f64]) {
        let mut c = Cursor::new(v);
        self.kernel.beta = c.scalar();
        self.kernel.log_sigma2 = c.scalar();
        let p = self.kernel.log_phi.len();
        self.kernel.log_phi.copy_from_slice(c.take(p));
        let pz = self.kernel.log_phi_z.len();
        self.kernel.log_phi_z.copy_from_slice(c.take(pz));
        let nz = self.map.values().len();
        self.map.values_mut().copy_from_slice(c.take(nz));
        self.log_noise = c.scalar();
        debug_assert!(c.finished());
    }
}

struct Factorized {
    s: DMatrix<f64>,
    kf: DMatrix<f64>,
    chol: CholFactor,
}

fn factorize(params: &ExactParams, data: &NormalizedData) -> Result<Factorized> {
    params.kernel.validate()?;
    if !params.log_noise.is_finite() {
        return Err(Error::NonFinite("log noise".into()));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    let s = data.encode_rows(&params.map, 0, &rows);
    if s.ncols() != params.kernel.width() {
        return Err(Error::DimensionMismatch(format!(
            "encoded width {} vs kernel width {}",
            s.ncols(),
            params.kernel.width()
        )));
    }
    let kf = kernels::self_covariance(&s, params.kernel.sigma2(), &params.kernel.weights());
    let mut k = kf.clone();
    let noise = params.log_noise.exp();
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    let chol = cholesky_with_jitter(&k, 0.0)?;
    Ok(Factorized { s, kf, chol })
}

fn response(data: &NormalizedData) -> DVector<f64> {
    data.y.column(0).into_owned()
}

/// `½ ln|K| + ½ (y − β)ᵀ K⁻¹ (y − β)` on the first response column.
pub fn neg_log_likelihood(params: &ExactParams, data: &NormalizedData) -> Result<f64> {
    let f = factorize(params, data)?;
    let r = response(data).add_scalar(-params.kernel.beta);
    let alpha = f.chol.solve_vec(&r)?;
    Ok(0.5 * f.chol.logdet() + 0.5 * r.dot(&alpha))
}

/// `ln p(y)` including the `−n/2 ln 2π` constant.
pub fn log_marginal_likelihood(params: &ExactParams, data: &NormalizedData) -> Result<f64> {
    Ok(-neg_log_likelihood(params, data)? - 0.5 * data.len() as f64 * (2.0 * PI).ln())
}

/// Generalized least-squares estimate of `β` for the current covariance.
pub fn gls_beta(params: &ExactParams, data: &NormalizedData) -> Result<f64> {
    let f = factorize(params, data)?;
    gls_from_factor(&f.chol, &response(data))
}

fn gls_from_factor(chol: &CholFactor, y: &DVector<f64>) -> Result<f64> {
    let ones = DVector::from_element(y.len(), 1.0);
    let kinv_one = chol.solve_vec(&ones)?;
    Ok(kinv_one.dot(y) / kinv_one.sum())
}

/// Negative log-likelihood and its gradient in [`ExactParams::layout`] order.
///
/// With `profile_beta`, `β` is first replaced by its GLS estimate; the
/// returned `β` gradient is then zero up to rounding.
pub fn nll_gradient(
    params: &mut ExactParams,
    data: &NormalizedData,
    profile_beta: bool,
) -> Result<(f64, Vec<f64>)> {
    let f = factorize(params, data)?;
    let y = response(data);
    if profile_beta {
        params.kernel.beta = gls_from_factor(&f.chol, &y)?;
    }
    let r = y.add_scalar(-params.kernel.beta);
    let alpha = f.chol.solve_vec(&r)?;
    let nll = 0.5 * f.chol.logdet() + 0.5 * r.dot(&alpha);
    if !nll.is_finite() {
        return Err(Error::NonFinite("negative log-likelihood".into()));
    }

    // ∂NLL/∂K = ½ (K⁻¹ − α αᵀ)
    let mut upstream = f.chol.inverse();
    upstream.ger(-1.0, &alpha, &alpha, 1.0);
    upstream *= 0.5;

    let weights = params.kernel.weights();
    let mut kg = KernelGrad::zeros(weights.len());
    let mut ds_a = DMatrix::zeros(f.s.nrows(), f.s.ncols());
    let mut ds_b = DMatrix::zeros(f.s.nrows(), f.s.ncols());
    kernels::backprop_covariance(
        &f.s,
        &f.s,
        &f.kf,
        &upstream,
        &weights,
        &mut kg,
        Some(&mut ds_a),
        Some(&mut ds_b),
    );
    ds_a += ds_b;

    let p = params.kernel.log_phi.len();
    let mut grad = vec![-alpha.sum(), kg.log_sigma2];
    grad.extend(&kg.log_weights);
    let mut zgrad = vec![0.0; params.map.values().len()];
    let rows: Vec<usize> = (0..data.len()).collect();
    scatter_latent_grad(&ds_a, data, &rows, &params.map, 0, p, &mut zgrad);
    grad.extend(zgrad);
    grad.push(params.log_noise.exp() * upstream.trace());
    Ok((nll, grad))
}

/// Adds the latent columns of `ds` (rows aligned with `rows`) into `out`.
pub(crate) fn scatter_latent_grad(
    ds: &DMatrix<f64>,
    data: &NormalizedData,
    rows: &[usize],
    map: &LatentMap,
    copy: usize,
    p: usize,
    out: &mut [f64],
) {
    let g = map.g;
    for (r, &i) in rows.iter().enumerate() {
        for (j, &t) in data.points[i].t.iter().enumerate() {
            let o = map.offset(copy, j, t - 1);
            for d in 0..g {
                out[o + d] += ds[(r, p + j * g + d)];
            }
        }
    }
}

/// A fitted dense model with its training snapshot.
#[derive(Debug, Clone)]
pub struct ExactModel {
    pub schema: MixedSchema,
    pub normalization: Normalization,
    pub params: ExactParams,
    /// Training points in training units.
    pub train: NormalizedData,
    train_s: DMatrix<f64>,
    chol: CholFactor,
    alpha: DVector<f64>,
}

impl ExactModel {
    pub fn new(
        schema: MixedSchema,
        normalization: Normalization,
        params: ExactParams,
        train: NormalizedData,
    ) -> Result<Self> {
        let f = factorize(&params, &train)?;
        let r = response(&train).add_scalar(-params.kernel.beta);
        let alpha = f.chol.solve_vec(&r)?;
        Ok(ExactModel {
            schema,
            normalization,
            params,
            train,
            train_s: f.s,
            chol: f.chol,
            alpha,
        })
    }

    /// Cholesky factor of the training covariance (including noise and jitter).
    pub fn factor(&self) -> &CholFactor {
        &self.chol
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        log_marginal_likelihood(&self.params, &self.train)
    }

    fn encode_queries(&self, queries: &[MixedPoint]) -> Result<DMatrix<f64>> {
        let pts = queries
            .iter()
            .map(|q| {
                self.schema.check_point(q)?;
                Ok(self.normalization.apply_point(q))
            })
            .collect::<Result<Vec<_>>>()?;
        crate::latent_map::encode_batch(&pts, &self.params.map, 0).map(|m| {
            if pts.is_empty() {
                DMatrix::zeros(0, self.params.kernel.width())
            } else {
                m
            }
        })
    }

    /// Predictive mean and latent covariance in training units.
    pub fn predict_normalized(&self, s: &DMatrix<f64>, full_cov: bool) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let kp = &self.params.kernel;
        let weights = kp.weights();
        let k_star = kernels::covariance(&self.train_s, s, kp.sigma2(), &weights);
        let mean = (k_star.transpose() * &self.alpha).add_scalar(kp.beta);
        let v = self.chol.solve_lower(&k_star)?;
        let cov = if full_cov {
            let mut c = kernels::self_covariance(s, kp.sigma2(), &weights) - v.transpose() * &v;
            for i in 0..c.nrows() {
                c[(i, i)] = c[(i, i)].max(0.0);
            }
            c
        } else {
            let mut c = DMatrix::zeros(s.nrows(), 1);
            for i in 0..s.nrows() {
                c[(i, 0)] = (kp.sigma2() - v.column(i).norm_squared()).max(0.0);
            }
            c
        };
        Ok((mean, cov))
    }
}

/// Mean and covariance of the latent response at `queries`, original units.
pub fn predict(model: &ExactModel, queries: &[MixedPoint]) -> Result<Prediction> {
    let s = model.encode_queries(queries)?;
    let (mean, cov) = model.predict_normalized(&s, true)?;
    let norm = &model.normalization;
    Ok(Prediction {
        mean: mean.map(|m| norm.denormalize_mean(0, m)),
        cov: cov.map(|c| norm.denormalize_var(0, c)),
    })
}

pub fn predict_marginal(model: &ExactModel, queries: &[MixedPoint]) -> Result<PointPredictions> {
    let s = model.encode_queries(queries)?;
    let (mean, var) = model.predict_normalized(&s, false)?;
    let norm = &model.normalization;
    Ok(PointPredictions {
        mean: DMatrix::from_iterator(mean.len(), 1, mean.iter().map(|m| norm.denormalize_mean(0, *m))),
        variance: var.map(|v| norm.denormalize_var(0, v)),
    })
}

fn initial_params(schema: &MixedSchema, cfg: &ExactConfig, restart: usize, rng: &mut SeededRng) -> ExactParams {
    let g = cfg.latent_dim;
    let map = LatentMap::random(&schema.levels, g, LatentStructure::Shared, 1, rng);
    let mut kernel = KernelParams::unit(schema.p, schema.q() * g);
    if restart > 0 {
        for v in kernel.log_phi.iter_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
    }
    let log_noise = if cfg.noise_free { 1e-8f64.ln() } else { 1e-2f64.ln() };
    ExactParams {
        kernel,
        log_noise,
        map,
    }
}

/// One restart of Adam on the profiled negative log-likelihood.
fn fit_restart(
    data: &NormalizedData,
    cfg: &ExactConfig,
    restart: usize,
) -> Result<(ExactParams, f64, TrainingTrace)> {
    let mut rng = SeededRng::with_stream(cfg.seed, restart as u64);
    let mut params = initial_params(&data.schema, cfg, restart, &mut rng);
    let mut layout = params.layout();
    layout.set_trainable(ParamGroup::Beta, false);
    layout.set_trainable(ParamGroup::LogNoise, !cfg.noise_free);
    if data.schema.q() == 0 {
        layout.set_trainable(ParamGroup::Latent, false);
    }
    let mask = layout.mask();
    let mut adam = Adam::new(cfg.adam.clone(), layout.len());
    let mut trace = TrainingTrace::default();
    let const_term = 0.5 * data.len() as f64 * (2.0 * PI).ln();
    let start = Instant::now();
    let mut best: Option<(ExactParams, f64)> = None;
    let mut theta = params.to_vec();
    trace.stop = StopReason::MaxIterations;
    for it in 0..cfg.max_iters {
        let (nll, grad) = nll_gradient(&mut params, data, true)?;
        theta[0] = params.kernel.beta;
        let lml = -nll - const_term;
        trace.records.push(TraceRecord {
            iteration: it,
            elbo: lml,
            kl: 0.0,
            lt: lml,
            seconds: start.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|(_, b)| nll < *b) {
            best = Some((params.clone(), nll));
            trace.best_iteration = it;
        }
        if trace.window_converged(cfg.window, cfg.tolerance) {
            trace.stop = StopReason::Converged;
            break;
        }
        adam.step_descent(&mut theta, &grad, &mask);
        params.set_from(&theta);
    }
    let (params, nll) = best.ok_or(Error::AllRestartsFailed(1))?;
    Ok((params, nll, trace))
}

/// Multi-start maximum-likelihood fit; returns the restart with the lowest NLL.
pub fn fit_mle(data: &Dataset, cfg: &ExactConfig) -> Result<(ExactModel, TrainingTrace)> {
    if data.len() > cfg.dense_cap {
        return Err(Error::InvalidConfig(format!(
            "{} points exceed the dense cap of {}",
            data.len(),
            cfg.dense_cap
        )));
    }
    if cfg.restarts == 0 || cfg.latent_dim == 0 {
        return Err(Error::InvalidConfig("need at least one restart and latent_dim >= 1".into()));
    }
    let data = data.single_output(0);
    let norm = Normalization::fit(&data);
    let nd = data.normalize(&norm);
    let results: Vec<_> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| fit_restart(&nd, cfg, r))
        .collect();
    let mut best: Option<(ExactParams, f64, TrainingTrace)> = None;
    for res in results {
        match res {
            Ok((p, nll, tr)) => {
                if best.as_ref().is_none_or(|(_, b, _)| nll < *b) {
                    best = Some((p, nll, tr));
                }
            }
            Err(e) => log::warn!("exact restart failed: {e}"),
        }
    }
    let (params, _, trace) = best.ok_or(Error::AllRestartsFailed(cfg.restarts))?;
    let model = ExactModel::new(data.schema.clone(), norm, params, nd)?;
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quant_data(x: &[f64], y: &[f64]) -> NormalizedData {
        NormalizedData {
            schema: MixedSchema::new(1, vec![]).unwrap(),
            points: x.iter().map(|&v| MixedPoint::new(vec![v], vec![])).collect(),
            y: DMatrix::from_column_slice(y.len(), 1, y),
        }
    }

    fn quant_params(p: usize, log_phi: f64, log_noise: f64) -> ExactParams {
        let mut kernel = KernelParams::unit(p, 0);
        kernel.log_phi.fill(log_phi);
        ExactParams {
            kernel,
            log_noise,
            map: LatentMap::zeros(&[], 2, LatentStructure::Shared, 1),
        }
    }

    #[test]
    fn single_point_at_mean_has_zero_nll() {
        let data = quant_data(&[0.3], &[0.0]);
        let params = quant_params(1, 0.0, f64::NEG_INFINITY.max(-800.0));
        assert!(neg_log_likelihood(&params, &data).unwrap().abs() < 1e-12);
    }

    #[test]
    fn two_independent_points() {
        // r ≈ 0 between the points, σ² = 1, no noise, residuals [1, 1].
        let data = quant_data(&[0.0, 1.0], &[1.0, 1.0]);
        let params = quant_params(1, 8f64.ln(), -800.0);
        assert_relative_eq!(neg_log_likelihood(&params, &data).unwrap(), 1.0, epsilon = 1e-3);
    }

    #[test]
    fn interpolation_and_prior_reversion() {
        let schema = MixedSchema::new(1, vec![]).unwrap();
        let x = [0.1, 0.4, 0.9];
        let y = [0.5, -1.0, 0.25];
        let data = quant_data(&x, &y);
        let params = quant_params(1, 1.0, 1e-12f64.ln());
        let model = ExactModel::new(schema, Normalization::identity(1, 1), params, data).unwrap();
        let q: Vec<_> = x.iter().map(|&v| MixedPoint::new(vec![v], vec![])).collect();
        let pred = predict(&model, &q).unwrap();
        for i in 0..3 {
            assert!((pred.mean[i] - y[i]).abs() < 1e-6);
            assert!(pred.cov[(i, i)] < 1e-6);
        }
        let far = predict(&model, &[MixedPoint::new(vec![1e3], vec![])]).unwrap();
        assert_relative_eq!(far.mean[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(far.cov[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gls_beta_of_constant_response_is_the_constant() {
        let data = quant_data(&[0.0, 0.3, 0.7], &[2.5, 2.5, 2.5]);
        let params = quant_params(1, 0.0, -4.0);
        assert_relative_eq!(gls_beta(&params, &data).unwrap(), 2.5, epsilon = 1e-10);
    }

    #[test]
    fn profiled_beta_gradient_vanishes() {
        let data = quant_data(&[0.0, 0.3, 0.7, 0.8], &[1.0, -0.5, 0.2, 0.9]);
        let mut params = quant_params(1, 0.5, -3.0);
        let (_, g) = nll_gradient(&mut params, &data, true).unwrap();
        assert!(g[0].abs() < 1e-9);
    }
}
