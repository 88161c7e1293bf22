//! Optimization: Adam for hyperparameters, natural-gradient steps for the
//! variational Gaussians, and the minibatch training loop.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact_gp::{self, ExactConfig, ExactModel};
use crate::latent_map::{Dataset, LatentMap, LatentStructure, MixedPoint, NormalizedData, Normalization};
use crate::lmc::{self, LmcModel, LmcOptions};
use crate::numerics::{CholFactor, SeededRng};
use crate::params::{Layout, ParamGroup};
use crate::prediction::PointPredictions;
use crate::svgp::{self, ElboParts, SVModel, SparseGradient, VariationalGaussian};

/// Lower bound on the likelihood noise variance in training units.
pub const MIN_NOISE_VARIANCE: f64 = 1e-6;
/// Step-size halvings attempted before a natural-gradient step is rejected.
pub const NATGRAD_MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction. Masked-out entries keep their values and moments.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, len: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One step downhill on `grad`.
    pub fn step_descent(&mut self, theta: &mut [f64], grad: &[f64], mask: &[bool]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..theta.len() {
            if !mask[i] {
                continue;
            }
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }

    /// One step uphill on `grad`.
    pub fn step_ascent(&mut self, theta: &mut [f64], grad: &[f64], mask: &[bool]) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.step_descent(theta, &neg, mask);
    }
}

/// Natural-gradient ascent step for `N(μ, Σ)`.
///
/// Works in natural parameters `θ₁ = Σ⁻¹μ`, `θ₂ = −½Σ⁻¹`, where the natural
/// gradient equals the ordinary gradient with respect to the expectation
/// parameters `(μ, Σ + μμᵀ)`. The step is halved until the new precision
/// factorizes.
pub fn natgrad_step(
    var: &VariationalGaussian,
    grad_mu: &DVector<f64>,
    grad_sigma: &DMatrix<f64>,
    gamma: f64,
) -> Result<VariationalGaussian> {
    if gamma == 0.0 {
        return Ok(var.clone());
    }
    let m = var.len();
    if grad_mu.len() != m || grad_sigma.shape() != (m, m) {
        return Err(Error::DimensionMismatch("natural-gradient step".into()));
    }
    let s_chol = var.factor()?;
    let precision = s_chol.inverse();
    let theta1 = s_chol.solve_vec(&var.mu)?;
    let eta1_grad = grad_mu - 2.0 * grad_sigma * &var.mu;
    let mut step = gamma;
    for _ in 0..=NATGRAD_MAX_HALVINGS {
        let mut new_prec = &precision - grad_sigma * (2.0 * step);
        crate::numerics::symmetrize(&mut new_prec);
        let new_theta1 = &theta1 + &eta1_grad * step;
        if let Some(lower) = inverse_lower_factor(&new_prec) {
            let mu = &lower * lower.tr_mul(&new_theta1);
            if let Ok(out) = VariationalGaussian::new(mu, lower) {
                return Ok(out);
            }
        }
        step *= 0.5;
    }
    Err(Error::StepRejected(NATGRAD_MAX_HALVINGS))
}

/// Lower `L` with `L Lᵀ = p⁻¹`, from the Cholesky factor of `p` with its
/// index order reversed: `J p J = U Uᵀ` gives `L = J U⁻ᵀ J`.
fn inverse_lower_factor(p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = p.nrows();
    let flipped = DMatrix::from_fn(m, m, |i, j| p[(m - 1 - i, m - 1 - j)]);
    let u = strict_cholesky(&flipped)?;
    let u_inv = u.solve_lower(&DMatrix::identity(m, m)).ok()?;
    Some(DMatrix::from_fn(m, m, |i, j| u_inv[(m - 1 - j, m - 1 - i)]))
}

fn strict_cholesky(m: &DMatrix<f64>) -> Option<CholFactor> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = nalgebra::Cholesky::new(m.clone())?;
    CholFactor::from_lower(chol.unpack()).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Minibatch ELBO (sparse models) or log marginal likelihood (dense model).
    pub elbo: f64,
    pub kl: f64,
    pub lt: f64,
    /// Wall time since the start of training; not part of the deterministic record.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    #[default]
    MaxIterations,
    Converged,
    Failed,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
    pub stop: StopReason,
    /// Iteration whose parameters were returned.
    pub best_iteration: usize,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    fn window_mean(&self, end: usize, window: usize) -> f64 {
        self.records[end - window..end].iter().map(|r| r.elbo).sum::<f64>() / window as f64
    }

    /// True when the records end on a window boundary and the last window's
    /// mean objective improved on the previous one by less than `tolerance`
    /// (relative).
    pub fn window_converged(&self, window: usize, tolerance: f64) -> bool {
        let n = self.records.len();
        if window == 0 || n < 2 * window || !n.is_multiple_of(window) {
            return false;
        }
        let cur = self.window_mean(n, window);
        let prev = self.window_mean(n - window, window);
        (cur - prev) / prev.abs().max(1e-300) < tolerance
    }

    /// Moving average of the objective over `window` records.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        if window == 0 || self.records.len() < window {
            return Vec::new();
        }
        (window..=self.records.len()).map(|e| self.window_mean(e, window)).collect()
    }

    /// `iteration,elbo,kl,lt,seconds` rows.
    pub fn write_csv<W: Write>(&self, out: W, with_seconds: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if with_seconds {
            w.write_record(["iteration", "elbo", "kl", "lt", "seconds"])?;
        } else {
            w.write_record(["iteration", "elbo", "kl", "lt"])?;
        }
        for r in &self.records {
            let mut rec = vec![r.iteration.to_string(), r.elbo.to_string(), r.kl.to_string(), r.lt.to_string()];
            if with_seconds {
                rec.push(r.seconds.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_iters: usize,
    pub adam: AdamConfig,
    /// Natural-gradient step size `γ`.
    pub natgrad_step: f64,
    /// Fraction of `max_iters` after which the latent vectors are frozen.
    pub z_freeze_fraction: f64,
    pub seed: u64,
    /// Convergence window in iterations; 0 disables early stopping.
    pub window: usize,
    /// Relative improvement between consecutive windows below which training stops.
    pub tolerance: f64,
    pub train_inducing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            max_iters: 20_000,
            adam: AdamConfig::default(),
            natgrad_step: 0.1,
            z_freeze_fraction: 0.8,
            seed: 0,
            window: 500,
            tolerance: 1e-4,
            train_inducing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(Error::InvalidConfig(format!(
                "batch size {} for {n} training points",
                self.batch_size
            )));
        }
        if !(self.adam.learning_rate > 0.0) || !(self.natgrad_step > 0.0) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.z_freeze_fraction) {
            return Err(Error::InvalidConfig("z_freeze_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// First iteration at which the latent map is frozen.
    pub fn freeze_iteration(&self) -> usize {
        (self.z_freeze_fraction * self.max_iters as f64).floor() as usize
    }
}

/// A model trained by minibatch ELBO ascent.
pub trait SparseObjective: Clone {
    fn layout(&self) -> Layout;
    fn hyper(&self) -> Vec<f64>;
    fn set_hyper(&mut self, v: &[f64]);
    fn variational(&self) -> &[VariationalGaussian];
    fn variational_mut(&mut self) -> &mut [VariationalGaussian];
    fn elbo_gradient(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<(ElboParts, SparseGradient)>;
    fn elbo(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<ElboParts>;
}

impl SparseObjective for SVModel {
    fn layout(&self) -> Layout {
        SVModel::layout(self)
    }
    fn hyper(&self) -> Vec<f64> {
        SVModel::hyper(self)
    }
    fn set_hyper(&mut self, v: &[f64]) {
        SVModel::set_hyper(self, v)
    }
    fn variational(&self) -> &[VariationalGaussian] {
        std::slice::from_ref(&self.var)
    }
    fn variational_mut(&mut self) -> &mut [VariationalGaussian] {
        std::slice::from_mut(&mut self.var)
    }
    fn elbo_gradient(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<(ElboParts, SparseGradient)> {
        SVModel::elbo_gradient(self, data, batch, n_total)
    }
    fn elbo(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<ElboParts> {
        svgp::elbo(self, data, batch, n_total)
    }
}

impl SparseObjective for LmcModel {
    fn layout(&self) -> Layout {
        LmcModel::layout(self)
    }
    fn hyper(&self) -> Vec<f64> {
        LmcModel::hyper(self)
    }
    fn set_hyper(&mut self, v: &[f64]) {
        LmcModel::set_hyper(self, v)
    }
    fn variational(&self) -> &[VariationalGaussian] {
        &self.var
    }
    fn variational_mut(&mut self) -> &mut [VariationalGaussian] {
        &mut self.var
    }
    fn elbo_gradient(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<(ElboParts, SparseGradient)> {
        LmcModel::elbo_gradient(self, data, batch, n_total)
    }
    fn elbo(&self, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<ElboParts> {
        lmc::multi_elbo(self, data, batch, n_total)
    }
}

/// A failed fit together with the trace recorded up to the failure.
#[derive(Debug)]
pub struct FitFailure {
    pub error: Error,
    pub trace: TrainingTrace,
}

impl From<FitFailure> for Error {
    fn from(f: FitFailure) -> Self {
        f.error
    }
}

const TRAIN_STREAM: u64 = 0x7472_6169_6e00;

/// Minibatch loop: natural-gradient steps on every `(μ_l, Σ_l)`, Adam on all
/// other trainable groups, latent freeze after `z_freeze_fraction`.
///
/// Returns the parameters at the end of the best convergence window.
pub fn fit_sparse<M: SparseObjective>(
    mut model: M,
    data: &NormalizedData,
    cfg: &TrainConfig,
) -> std::result::Result<(M, TrainingTrace), FitFailure> {
    let mut trace = TrainingTrace::default();
    let fail = |error: Error, mut trace: TrainingTrace| {
        trace.stop = StopReason::Failed;
        FitFailure { error, trace }
    };
    if let Err(e) = cfg.validate(data.len()) {
        return Err(fail(e, trace));
    }
    let n = data.len();
    let mut rng = SeededRng::with_stream(cfg.seed, TRAIN_STREAM);
    let mut layout = model.layout();
    if !cfg.train_inducing {
        layout.set_trainable(ParamGroup::Inducing, false);
    }
    let noise_idx: Vec<usize> = layout
        .spans()
        .iter()
        .filter(|s| s.group == ParamGroup::LogNoise)
        .flat_map(|s| s.range.clone())
        .collect();
    let mut mask = layout.mask();
    let latent_ranges: Vec<_> = layout
        .spans()
        .iter()
        .filter(|s| s.group == ParamGroup::Latent)
        .map(|s| s.range.clone())
        .collect();
    let freeze_at = cfg.freeze_iteration();
    let mut adam = Adam::new(cfg.adam.clone(), layout.len());
    let mut theta = model.hyper();
    let full: Vec<usize> = (0..n).collect();
    let min_log_noise = MIN_NOISE_VARIANCE.ln();
    let start = Instant::now();
    let mut best: Option<(f64, M, usize)> = None;

    for it in 0..cfg.max_iters {
        if it == freeze_at {
            for r in &latent_ranges {
                mask[r.clone()].fill(false);
            }
        }
        let batch = if cfg.batch_size >= n {
            full.clone()
        } else {
            rng.sample_indices(n, cfg.batch_size)
        };
        let (parts, grad) = match model.elbo_gradient(data, &batch, n) {
            Ok(v) => v,
            Err(e) => return Err(fail(e, trace)),
        };
        if let Some(i) = grad.hyper.iter().position(|g| !g.is_finite()) {
            let group = layout.group_of(i).map_or("unknown", |g| g.name());
            return Err(fail(Error::NonFinite(format!("gradient of {group}")), trace));
        }
        trace.records.push(TraceRecord {
            iteration: it,
            elbo: parts.elbo,
            kl: parts.kl,
            lt: parts.lt,
            seconds: start.elapsed().as_secs_f64(),
        });

        for (l, var) in model.variational_mut().iter_mut().enumerate() {
            match natgrad_step(var, &grad.mu[l], &grad.sigma[l], cfg.natgrad_step) {
                Ok(v) => *var = v,
                Err(e) => return Err(fail(e, trace)),
            }
        }
        adam.step_ascent(&mut theta, &grad.hyper, &mask);
        for &i in &noise_idx {
            theta[i] = theta[i].max(min_log_noise);
        }
        model.set_hyper(&theta);

        let done = it + 1;
        if cfg.window > 0 && done % cfg.window == 0 {
            let mean = trace.window_mean(done, cfg.window);
            if best.as_ref().is_none_or(|(b, _, _)| mean > *b) {
                best = Some((mean, model.clone(), it));
            }
            if trace.window_converged(cfg.window, cfg.tolerance) {
                trace.stop = StopReason::Converged;
                break;
            }
        }
    }
    trace.best_iteration = trace.records.len().saturating_sub(1);
    if let Some((_, snapshot, it)) = best {
        let n_rec = trace.records.len();
        let tail = cfg.window.min(n_rec);
        let tail_mean = trace.window_mean(n_rec, tail);
        let best_mean = trace.window_mean(it + 1, cfg.window);
        if best_mean > tail_mean {
            model = snapshot;
            trace.best_iteration = it;
        }
    }
    Ok((model, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "sv")]
    Sv,
    #[serde(rename = "lmc-sv-shared")]
    LmcShared,
    #[serde(rename = "lmc-sv-independent")]
    LmcIndependent,
}

impl ModelFamily {
    pub fn tag(self) -> &'static str {
        match self {
            ModelFamily::Exact => "exact",
            ModelFamily::Sv => "sv",
            ModelFamily::LmcShared => "lmc-sv-shared",
            ModelFamily::LmcIndependent => "lmc-sv-independent",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "exact" | "exact-lvgp" => Some(ModelFamily::Exact),
            "sv" | "sv-lvgp" => Some(ModelFamily::Sv),
            "lmc-sv-shared" | "lmc-sv-lvgp-s" => Some(ModelFamily::LmcShared),
            "lmc-sv-independent" | "lmc-sv-lvgp-i" => Some(ModelFamily::LmcIndependent),
            _ => None,
        }
    }
}

/// Everything needed to fit a model of any family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    pub n_inducing: usize,
    pub latent_dim: usize,
    /// Latent-function count for the multi-output families.
    pub functions: usize,
    pub tie_inducing: bool,
    pub train: TrainConfig,
    pub exact: ExactConfig,
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec {
            n_inducing: 50,
            latent_dim: crate::latent_map::DEFAULT_LATENT_DIM,
            functions: 2,
            tie_inducing: true,
            train: TrainConfig::default(),
            exact: ExactConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Exact(ExactModel),
    Sv(SVModel),
    Lmc(LmcModel),
}

impl FittedModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            FittedModel::Exact(_) => ModelFamily::Exact,
            FittedModel::Sv(_) => ModelFamily::Sv,
            FittedModel::Lmc(m) => match m.structure {
                LatentStructure::Shared => ModelFamily::LmcShared,
                LatentStructure::Independent => ModelFamily::LmcIndependent,
            },
        }
    }

    pub fn latent_map(&self) -> &LatentMap {
        match self {
            FittedModel::Exact(m) => &m.params.map,
            FittedModel::Sv(m) => &m.map,
            FittedModel::Lmc(m) => &m.map,
        }
    }

    pub fn schema(&self) -> &crate::latent_map::MixedSchema {
        match self {
            FittedModel::Exact(m) => &m.schema,
            FittedModel::Sv(m) => &m.schema,
            FittedModel::Lmc(m) => &m.schema,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            FittedModel::Lmc(m) => m.outputs(),
            _ => 1,
        }
    }

    pub fn predict_marginal(&self, queries: &[MixedPoint]) -> Result<PointPredictions> {
        match self {
            FittedModel::Exact(m) => exact_gp::predict_marginal(m, queries),
            FittedModel::Sv(m) => svgp::predict_marginal(m, queries),
            FittedModel::Lmc(m) => lmc::multi_predict_marginal(m, queries),
        }
    }
}

/// Fits `family` to `data` (original units); normalization is fitted here.
pub fn fit(family: ModelFamily, data: &Dataset, spec: &FitSpec) -> Result<(FittedModel, TrainingTrace)> {
    data.validate()?;
    if spec.latent_dim == 0 {
        return Err(Error::InvalidConfig("latent_dim must be at least 1".into()));
    }
    match family {
        ModelFamily::Exact => {
            let cfg = ExactConfig {
                latent_dim: spec.latent_dim,
                seed: spec.train.seed,
                ..spec.exact.clone()
            };
            let (m, t) = exact_gp::fit_mle(data, &cfg)?;
            Ok((FittedModel::Exact(m), t))
        }
        ModelFamily::Sv => {
            let data = data.single_output(0);
            let norm = Normalization::fit(&data);
            let nd = data.normalize(&norm);
            let mut rng = SeededRng::new(spec.train.seed);
            let model = SVModel::initialize(&nd, norm, spec.n_inducing, spec.latent_dim, &mut rng)?;
            let (m, t) = fit_sparse(model, &nd, &spec.train)?;
            Ok((FittedModel::Sv(m), t))
        }
        ModelFamily::LmcShared | ModelFamily::LmcIndependent => {
            let norm = Normalization::fit(data);
            let nd = data.normalize(&norm);
            let structure = if family == ModelFamily::LmcShared {
                LatentStructure::Shared
            } else {
                LatentStructure::Independent
            };
            let opts = LmcOptions {
                functions: spec.functions,
                structure,
                n_inducing: spec.n_inducing,
                latent_dim: spec.latent_dim,
                tie_inducing: spec.tie_inducing,
            };
            let mut rng = SeededRng::new(spec.train.seed);
            let model = LmcModel::initialize(&nd, norm, opts, &mut rng)?;
            let (m, t) = fit_sparse(model, &nd, &spec.train)?;
            Ok((FittedModel::Lmc(m), t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adam_first_step_is_learning_rate_times_sign() {
        let lr = AdamConfig::default().learning_rate;
        let mut adam = Adam::new(AdamConfig::default(), 3);
        // gradient of ½ Σ c_i θ_i² at θ = [1, -2, 3]
        let mut theta = vec![1.0, -2.0, 3.0];
        let grad = vec![4.0, -0.5, 30.0];
        adam.step_descent(&mut theta, &grad, &[true, true, false]);
        assert_relative_eq!(theta[0], 1.0 - lr, epsilon = 1e-9);
        assert_relative_eq!(theta[1], -2.0 + lr, epsilon = 1e-9);
        assert_eq!(theta[2], 3.0);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.05, ..Default::default() }, 2);
        let mut theta = vec![3.0, -1.5];
        for _ in 0..2000 {
            let grad = vec![2.0 * (theta[0] - 1.0), 8.0 * (theta[1] + 0.5)];
            adam.step_descent(&mut theta, &grad, &[true, true]);
        }
        assert!((theta[0] - 1.0).abs() < 1e-3);
        assert!((theta[1] + 0.5).abs() < 1e-3);
    }

    /// ELBO gradients of a single observation `y = f + ε` with prior `f ~ N(0, k)`.
    fn conjugate_grads(var: &VariationalGaussian, y: f64, k: f64, noise: f64) -> (DVector<f64>, DMatrix<f64>) {
        let mu = var.mu[0];
        let sigma = var.sigma()[(0, 0)];
        let g_mu = (y - mu) / noise - mu / k;
        let g_sigma = -0.5 / noise - 0.5 * (1.0 / k - 1.0 / sigma);
        (DVector::from_element(1, g_mu), DMatrix::from_element(1, 1, g_sigma))
    }

    #[test]
    fn natgrad_unit_step_reaches_conjugate_posterior() {
        let (y, k, noise) = (1.3, 2.0, 0.5);
        let var = VariationalGaussian::new(DVector::from_element(1, -0.4), DMatrix::from_element(1, 1, 0.7)).unwrap();
        let (gm, gs) = conjugate_grads(&var, y, k, noise);
        let post = natgrad_step(&var, &gm, &gs, 1.0).unwrap();
        let post_var = 1.0 / (1.0 / k + 1.0 / noise);
        assert_relative_eq!(post.sigma()[(0, 0)], post_var, epsilon = 1e-12);
        assert_relative_eq!(post.mu[0], post_var * y / noise, epsilon = 1e-12);
    }

    #[test]
    fn natgrad_zero_step_is_identity() {
        let var = VariationalGaussian::new(DVector::from_element(1, 0.2), DMatrix::from_element(1, 1, 0.9)).unwrap();
        let out = natgrad_step(&var, &DVector::from_element(1, 5.0), &DMatrix::from_element(1, 1, -3.0), 0.0).unwrap();
        assert_eq!(out, var);
    }

    #[test]
    fn natgrad_small_steps_decrease_kl_to_posterior() {
        let (y, k, noise) = (0.8, 1.5, 0.3);
        let post_var = 1.0 / (1.0 / k + 1.0 / noise);
        let post_mu = post_var * y / noise;
        let kl = |v: &VariationalGaussian| {
            let s = v.sigma()[(0, 0)];
            0.5 * ((post_var / s).ln() - 1.0 + s / post_var + (v.mu[0] - post_mu).powi(2) / post_var)
        };
        let mut var = VariationalGaussian::new(DVector::from_element(1, -1.0), DMatrix::from_element(1, 1, 1.2)).unwrap();
        let mut prev = kl(&var);
        for _ in 0..50 {
            let (gm, gs) = conjugate_grads(&var, y, k, noise);
            var = natgrad_step(&var, &gm, &gs, 0.1).unwrap();
            let cur = kl(&var);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn natgrad_halves_until_precision_is_valid() {
        let var = VariationalGaussian::new(DVector::from_element(1, 0.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        // precision 1 − 2γ·g must stay positive: g = 0.75 needs γ < 2/3
        let out = natgrad_step(&var, &DVector::zeros(1), &DMatrix::from_element(1, 1, 0.75), 1.0).unwrap();
        assert_relative_eq!(out.sigma()[(0, 0)], 1.0 / (1.0 - 0.75), epsilon = 1e-12);
        let err = natgrad_step(&var, &DVector::zeros(1), &DMatrix::from_element(1, 1, 1e6), 1.0).unwrap_err();
        assert!(matches!(err, Error::StepRejected(_)));
    }

    #[test]
    fn window_convergence() {
        let mut t = TrainingTrace::default();
        for i in 0..4 {
            t.records.push(TraceRecord { iteration: i, elbo: -10.0, kl: 0.0, lt: -10.0, seconds: 0.0 });
        }
        assert!(t.window_converged(2, 1e-4));
        assert!(!t.window_converged(3, 1e-4));
        t.records[3].elbo = -5.0;
        assert!(!t.window_converged(2, 1e-4));
    }
}
