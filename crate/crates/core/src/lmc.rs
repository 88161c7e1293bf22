//! Linear model of coregionalization over sparse variational latent functions.
//!
//! Outputs are `Y(u) = β + W f(s)` with `L` independent unit-variance latent
//! GPs `f_l`, each carrying its own inducing variables. The prior covariance
//! between outputs `i` and `j` is `Σ_l W_il r_l(s, s') W_jl`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelParams};
use crate::latent_map::{LatentMap, LatentStructure, MixedPoint, MixedSchema, NormalizedData, Normalization};
use crate::numerics::{cholesky_with_jitter, SeededRng};
use crate::params::{Cursor, Layout, ParamGroup};
use crate::prediction::PointPredictions;
use crate::svgp::{
    block_backward, block_forward, check_batch, init_inducing, sparse_posterior, ElboParts, InducingSet,
    SparseGradient, VariationalGaussian,
};

/// Multi-output sparse model. Per-function process variance is fixed at 1;
/// output scales live in `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmcModel {
    pub schema: MixedSchema,
    pub normalization: Normalization,
    pub structure: LatentStructure,
    /// `N_op x L` mixing matrix.
    pub w: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// `ln σ_{n,o}²` per output.
    pub log_noise: DVector<f64>,
    /// One kernel per latent function; `beta` and `log_sigma2` are unused.
    pub kernels: Vec<KernelParams>,
    pub map: LatentMap,
    /// Either one set shared by every function or one per function.
    pub inducing: Vec<InducingSet>,
    pub var: Vec<VariationalGaussian>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmcOptions {
    pub functions: usize,
    pub structure: LatentStructure,
    pub n_inducing: usize,
    pub latent_dim: usize,
    /// Shared structure only: use one inducing set for every function.
    pub tie_inducing: bool,
}

impl LmcModel {
    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn functions(&self) -> usize {
        self.w.ncols()
    }

    pub fn inducing_index(&self, function: usize) -> usize {
        if self.inducing.len() == 1 {
            0
        } else {
            function
        }
    }

    /// Identity-slice mixing plus `N(0, 0.01²)` noise, random latent vectors,
    /// prior variational states.
    pub fn initialize(
        data: &NormalizedData,
        normalization: Normalization,
        opts: LmcOptions,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let n_op = data.outputs();
        let l = opts.functions;
        if l == 0 || l > n_op {
            return Err(Error::InvalidConfig(format!(
                "{l} latent functions for {n_op} outputs (need 1 <= L <= N_op)"
            )));
        }
        let schema = data.schema.clone();
        let g = opts.latent_dim;
        let map = LatentMap::random(&schema.levels, g, opts.structure, l, rng);
        let mut w = DMatrix::zeros(n_op, l);
        for o in 0..n_op {
            for f in 0..l {
                w[(o, f)] = if o == f { 1.0 } else { 0.0 } + 0.01 * rng.normal();
            }
        }
        let mut beta = DVector::zeros(n_op);
        let mut log_noise = DVector::zeros(n_op);
        for o in 0..n_op {
            let col = data.y.column(o);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            beta[o] = mean;
            log_noise[o] = (1e-2 * if var > 0.0 { var } else { 1.0 }).ln();
        }
        let kernels = vec![KernelParams::unit(schema.p, schema.q() * g); l];
        let tied = opts.tie_inducing && opts.structure == LatentStructure::Shared;
        let sets = if tied { 1 } else { l };
        let inducing = (0..sets)
            .map(|f| init_inducing(data, &map, map.copy_for(f), opts.n_inducing, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut model = LmcModel {
            schema,
            normalization,
            structure: opts.structure,
            w,
            beta,
            log_noise,
            kernels,
            map,
            inducing,
            var: Vec::new(),
        };
        model.var = (0..l)
            .map(|f| {
                let kii = kernels::self_covariance(
                    &model.inducing[model.inducing_index(f)].points,
                    1.0,
                    &model.kernels[f].weights(),
                );
                Ok(VariationalGaussian::from_prior(&cholesky_with_jitter(&kii, 0.0)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.map.validate()?;
        let (n_op, l) = self.w.shape();
        if l == 0 || l > n_op {
            return Err(Error::InvariantViolation(format!("mixing matrix is {n_op}x{l}")));
        }
        if self.beta.len() != n_op || self.log_noise.len() != n_op || self.normalization.outputs() != n_op {
            return Err(Error::InvariantViolation("per-output vectors disagree with W".into()));
        }
        if self.kernels.len() != l || self.var.len() != l {
            return Err(Error::InvariantViolation("per-function state count disagrees with W".into()));
        }
        let expected_copies = match self.structure {
            LatentStructure::Shared => 1,
            LatentStructure::Independent => l,
        };
        if self.map.structure != self.structure || self.map.copies != expected_copies {
            return Err(Error::InvariantViolation("latent map structure disagrees with model".into()));
        }
        if !(self.inducing.len() == l
            || (self.inducing.len() == 1 && self.structure == LatentStructure::Shared))
        {
            return Err(Error::InvariantViolation(format!(
                "{} inducing sets for {l} latent functions",
                self.inducing.len()
            )));
        }
        let width = self.schema.p + self.map.width();
        for f in 0..l {
            self.kernels[f].validate()?;
            self.var[f].validate()?;
            let ind = &self.inducing[self.inducing_index(f)];
            if self.kernels[f].width() != width || ind.width() != width || ind.len() != self.var[f].len() {
                return Err(Error::InvariantViolation(format!("latent function {} widths", f + 1)));
            }
        }
        let finite = self
            .w
            .iter()
            .chain(self.beta.iter())
            .chain(self.log_noise.iter())
            .chain(self.inducing.iter().flat_map(|s| s.points.iter()))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("multi-output model parameters".into()));
        }
        Ok(())
    }

    fn phi_z_trainable(&self) -> bool {
        self.structure == LatentStructure::Shared
    }

    /// `[β (N_op), ln φ (L·p), ln φ_z (L·q·g), Z, S_I per set, ln σ_n² (N_op), W (row-major)]`.
    pub fn layout(&self) -> Layout {
        let l = self.functions();
        let mut lay = Layout::new();
        lay.push(ParamGroup::Beta, self.outputs(), true);
        lay.push(ParamGroup::LogPhi, l * self.schema.p, true);
        lay.push(ParamGroup::LogPhiZ, l * self.map.width(), self.phi_z_trainable());
        lay.push(ParamGroup::Latent, self.map.values().len(), true);
        let ind: usize = self.inducing.iter().map(|s| s.points.len()).sum();
        lay.push(ParamGroup::Inducing, ind, true);
        lay.push(ParamGroup::LogNoise, self.outputs(), true);
        lay.push(ParamGroup::Mixing, self.w.len(), true);
        lay
    }

    pub fn hyper(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.beta.iter().copied().collect();
        for k in &self.kernels {
            v.extend(&k.log_phi);
        }
        for k in &self.kernels {
            v.extend(&k.log_phi_z);
        }
        v.extend(self.map.values());
        for s in &self.inducing {
            v.extend(s.points.transpose().iter());
        }
        v.extend(self.log_noise.iter());
        v.extend(self.w.transpose().iter());
        v
    }

    pub fn set_hyper(&mut self, v: &[f64]) {
        let mut c = Cursor::new(v);
        let n_op = self.outputs();
        self.beta.copy_from_slice(c.take(n_op));
        for k in self.kernels.iter_mut() {
            let n = k.log_phi.len();
            k.log_phi.copy_from_slice(c.take(n));
        }
        for k in self.kernels.iter_mut() {
            let n = k.log_phi_z.len();
            k.log_phi_z.copy_from_slice(c.take(n));
        }
        let n = self.map.values().len();
        self.map.values_mut().copy_from_slice(c.take(n));
        for s in self.inducing.iter_mut() {
            let (m, d) = s.points.shape();
            s.points = DMatrix::from_row_slice(m, d, c.take(m * d));
        }
        self.log_noise.copy_from_slice(c.take(n_op));
        let (r, cols) = self.w.shape();
        self.w = DMatrix::from_row_slice(r, cols, c.take(r * cols));
        debug_assert!(c.finished());
    }

    /// ELBO and gradient on `batch` (all outputs observed).
    pub fn elbo_gradient(
        &self,
        data: &NormalizedData,
        batch: &[usize],
        n_total: usize,
    ) -> Result<(ElboParts, SparseGradient)> {
        check_batch(batch, n_total)?;
        if data.outputs() != self.outputs() {
            return Err(Error::DimensionMismatch(format!(
                "data has {} outputs, model {}",
                data.outputs(),
                self.outputs()
            )));
        }
        let (n_op, l) = self.w.shape();
        let nb = batch.len();
        let c = n_total as f64 / nb as f64;
        let mut s_batch = Vec::with_capacity(l);
        let mut blocks = Vec::with_capacity(l);
        for f in 0..l {
            let s = data.encode_rows(&self.map, self.map.copy_for(f), batch);
            let ind = &self.inducing[self.inducing_index(f)];
            blocks.push(block_forward(&ind.points, &s, 1.0, &self.kernels[f].weights(), &self.var[f])?);
            s_batch.push(s);
        }
        let noise: Vec<f64> = self.log_noise.iter().map(|v| v.exp()).collect();

        let mut lt = 0.0;
        let mut resid = DMatrix::zeros(n_op, nb);
        let mut d_beta = vec![0.0; n_op];
        let mut d_noise = vec![0.0; n_op];
        let mut d_w = DMatrix::zeros(n_op, l);
        for (r, &i) in batch.iter().enumerate() {
            for o in 0..n_op {
                let mut mean = self.beta[o];
                let mut var = 0.0;
                for f in 0..l {
                    mean += self.w[(o, f)] * blocks[f].h[r];
                    var += self.w[(o, f)].powi(2) * blocks[f].q[r];
                }
                let res = data.y[(i, o)] - mean;
                let sq = res * res + var;
                lt += -0.5 * (2.0 * PI * noise[o]).ln() - sq / (2.0 * noise[o]);
                resid[(o, r)] = res;
                d_beta[o] += c * res / noise[o];
                d_noise[o] += c * (-0.5 + sq / (2.0 * noise[o]));
                for f in 0..l {
                    d_w[(o, f)] += c / noise[o] * (res * blocks[f].h[r] - self.w[(o, f)] * blocks[f].q[r]);
                }
            }
        }
        lt *= c;
        let kl: f64 = blocks.iter().map(|b| b.kl).sum();
        let elbo = lt - kl;
        if !elbo.is_finite() {
            return Err(Error::NonFinite("elbo".into()));
        }

        let p = self.schema.p;
        let lw = self.map.width();
        let mut d_phi = vec![0.0; l * p];
        let mut d_phi_z = vec![0.0; l * lw];
        let mut d_z = vec![0.0; self.map.values().len()];
        let mut d_ind: Vec<DMatrix<f64>> = self
            .inducing
            .iter()
            .map(|s| DMatrix::zeros(s.points.nrows(), s.points.ncols()))
            .collect();
        let mut g_mu = Vec::with_capacity(l);
        let mut g_sigma = Vec::with_capacity(l);
        for f in 0..l {
            let mut rho = DVector::zeros(nb);
            let mut kappa = 0.0;
            for o in 0..n_op {
                let wof = self.w[(o, f)];
                kappa += c * wof * wof / (2.0 * noise[o]);
                for r in 0..nb {
                    rho[r] += c * wof * resid[(o, r)] / noise[o];
                }
            }
            let idx = self.inducing_index(f);
            let bg = block_backward(
                &blocks[f],
                &self.inducing[idx].points,
                &s_batch[f],
                &self.kernels[f].weights(),
                &self.var[f],
                &rho,
                kappa,
            )?;
            d_phi[f * p..(f + 1) * p].copy_from_slice(&bg.kernel.log_weights[..p]);
            d_phi_z[f * lw..(f + 1) * lw].copy_from_slice(&bg.kernel.log_weights[p..]);
            crate::exact_gp::scatter_latent_grad(&bg.d_batch, data, batch, &self.map, self.map.copy_for(f), p, &mut d_z);
            d_ind[idx] += &bg.d_ind;
            g_mu.push(bg.mu);
            g_sigma.push(bg.sigma);
        }

        let mut hyper = d_beta;
        hyper.extend(d_phi);
        hyper.extend(d_phi_z);
        hyper.extend(d_z);
        for d in &d_ind {
            hyper.extend(d.transpose().iter());
        }
        hyper.extend(d_noise);
        hyper.extend(d_w.transpose().iter());
        Ok((
            ElboParts { elbo, lt, kl },
            SparseGradient {
                hyper,
                mu: g_mu,
                sigma: g_sigma,
            },
        ))
    }

    fn encode_queries(&self, queries: &[MixedPoint], function: usize) -> Result<DMatrix<f64>> {
        let width = self.schema.p + self.map.width();
        let mut out = DMatrix::zeros(queries.len(), width);
        let mut row = vec![0.0; width];
        let copy = self.map.copy_for(function);
        for (i, q) in queries.iter().enumerate() {
            self.schema.check_point(q)?;
            self.map.encode_into(&self.normalization.apply_point(q), copy, &mut row);
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }

    fn function_posteriors(&self, queries: &[MixedPoint], full_cov: bool) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
        (0..self.functions())
            .map(|f| {
                let s = self.encode_queries(queries, f)?;
                sparse_posterior(
                    &self.inducing[self.inducing_index(f)].points,
                    &s,
                    1.0,
                    &self.kernels[f].weights(),
                    &self.var[f],
                    full_cov,
                )
            })
            .collect()
    }
}

/// Prior covariance between output `i` at `u` and output `j` at `u_prime`
/// (0-based outputs, training units).
pub fn coregional_cov(model: &LmcModel, i: usize, j: usize, u: &MixedPoint, u_prime: &MixedPoint) -> Result<f64> {
    let n_op = model.outputs();
    if i >= n_op || j >= n_op {
        return Err(Error::DimensionMismatch(format!("outputs {i}, {j} of {n_op}")));
    }
    model.schema.check_point(u)?;
    model.schema.check_point(u_prime)?;
    let width = model.schema.p + model.map.width();
    let (mut a, mut b) = (vec![0.0; width], vec![0.0; width]);
    let mut total = 0.0;
    for f in 0..model.functions() {
        let copy = model.map.copy_for(f);
        model.map.encode_into(&model.normalization.apply_point(u), copy, &mut a);
        model.map.encode_into(&model.normalization.apply_point(u_prime), copy, &mut b);
        let r = kernels::gaussian_correlation(&a, &b, &model.kernels[f])?;
        total += model.w[(i, f)] * r * model.w[(j, f)];
    }
    Ok(total)
}

/// Minibatch ELBO of the multi-output model.
pub fn multi_elbo(model: &LmcModel, data: &NormalizedData, batch: &[usize], n_total: usize) -> Result<ElboParts> {
    check_batch(batch, n_total)?;
    let (n_op, l) = model.w.shape();
    let mut h = Vec::with_capacity(l);
    let mut q = Vec::with_capacity(l);
    let mut kl = 0.0;
    for f in 0..l {
        let s = data.encode_rows(&model.map, model.map.copy_for(f), batch);
        let blk = block_forward(
            &model.inducing[model.inducing_index(f)].points,
            &s,
            1.0,
            &model.kernels[f].weights(),
            &model.var[f],
        )?;
        kl += blk.kl;
        h.push(blk.h);
        q.push(blk.q);
    }
    let mut sum = 0.0;
    for (r, &i) in batch.iter().enumerate() {
        for o in 0..n_op {
            let noise = model.log_noise[o].exp();
            let mean = model.beta[o] + (0..l).map(|f| model.w[(o, f)] * h[f][r]).sum::<f64>();
            let var: f64 = (0..l).map(|f| model.w[(o, f)].powi(2) * q[f][r]).sum();
            let res = data.y[(i, o)] - mean;
            sum += -0.5 * (2.0 * PI * noise).ln() - (res * res + var) / (2.0 * noise);
        }
    }
    let lt = sum * n_total as f64 / batch.len() as f64;
    let elbo = lt - kl;
    if !elbo.is_finite() {
        return Err(Error::NonFinite("elbo".into()));
    }
    Ok(ElboParts { elbo, lt, kl })
}

/// Joint multi-output prediction in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPrediction {
    /// `n_queries x N_op`.
    pub mean: DMatrix<f64>,
    /// Covariance over `(query, output)` pairs, index `query * N_op + output`.
    pub cov: DMatrix<f64>,
}

impl MultiPrediction {
    pub fn variance(&self, query: usize, output: usize) -> f64 {
        let n_op = self.mean.ncols();
        let k = query * n_op + output;
        self.cov[(k, k)]
    }
}

/// Mixes per-function sparse posteriors through `W`. With `include_noise`
/// the per-output noise variance is added on the diagonal.
pub fn multi_predict(model: &LmcModel, queries: &[MixedPoint], include_noise: bool) -> Result<MultiPrediction> {
    let posts = model.function_posteriors(queries, true)?;
    let (n_op, l) = model.w.shape();
    let nq = queries.len();
    let norm = &model.normalization;
    let mut mean = DMatrix::zeros(nq, n_op);
    let mut cov = DMatrix::zeros(nq * n_op, nq * n_op);
    for a in 0..nq {
        for o in 0..n_op {
            let mut m = model.beta[o];
            for f in 0..l {
                m += model.w[(o, f)] * posts[f].0[a];
            }
            mean[(a, o)] = norm.denormalize_mean(o, m);
            for b in 0..nq {
                for o2 in 0..n_op {
                    let mut c = 0.0;
                    for f in 0..l {
                        c += model.w[(o, f)] * model.w[(o2, f)] * posts[f].1[(a, b)];
                    }
                    if include_noise && a == b && o == o2 {
                        c += model.log_noise[o].exp();
                    }
                    cov[(a * n_op + o, b * n_op + o2)] = c * norm.y_scale[o] * norm.y_scale[o2];
                }
            }
        }
    }
    Ok(MultiPrediction { mean, cov })
}

/// Per-query marginal means and latent variances per output, original units.
pub fn multi_predict_marginal(model: &LmcModel, queries: &[MixedPoint]) -> Result<PointPredictions> {
    let posts = model.function_posteriors(queries, false)?;
    let (n_op, l) = model.w.shape();
    let nq = queries.len();
    let norm = &model.normalization;
    let mut mean = DMatrix::zeros(nq, n_op);
    let mut variance = DMatrix::zeros(nq, n_op);
    for a in 0..nq {
        for o in 0..n_op {
            let mut m = model.beta[o];
            let mut v = 0.0;
            for f in 0..l {
                m += model.w[(o, f)] * posts[f].0[a];
                v += model.w[(o, f)].powi(2) * posts[f].1[(a, 0)];
            }
            mean[(a, o)] = norm.denormalize_mean(o, m);
            variance[(a, o)] = norm.denormalize_var(o, v);
        }
    }
    Ok(PointPredictions { mean, variance })
}
