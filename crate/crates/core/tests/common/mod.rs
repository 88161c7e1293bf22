//! Random small problem instances shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use svlvgp::exact_gp::ExactParams;
use svlvgp::kernels::KernelParams;
use svlvgp::lmc::{LmcModel, LmcOptions};
use svlvgp::svgp::{SVModel, VariationalGaussian};
use svlvgp::{Dataset, LatentMap, LatentStructure, MixedPoint, MixedSchema, NormalizedData, Normalization, SeededRng};

/// Mixed data with two quantitative inputs, levels `[3, 2]` and `outputs` responses.
pub fn toy_data(n: usize, outputs: usize, seed: u64) -> NormalizedData {
    let mut rng = SeededRng::new(seed);
    let schema = MixedSchema::new(2, vec![3, 2]).unwrap();
    let inputs: Vec<MixedPoint> = (0..n)
        .map(|i| MixedPoint::new(vec![rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)], vec![1 + i % 3, 1 + (i / 3) % 2]))
        .collect();
    let y = DMatrix::from_fn(n, outputs, |i, o| {
        let p = &inputs[i];
        (3.0 * p.x[0]).sin() + (o as f64 + 1.0) * p.x[1] * p.t[0] as f64 / 3.0 - 0.4 * p.t[1] as f64 + 0.1 * rng.normal()
    });
    let data = Dataset::new(schema, inputs, y).unwrap();
    data.normalize(&Normalization::fit(&data))
}

pub fn random_var(m: usize, rng: &mut SeededRng) -> VariationalGaussian {
    let mu = DVector::from_fn(m, |_, _| 0.5 * rng.normal());
    let l = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            rng.uniform(0.3, 0.9)
        } else if i > j {
            0.2 * rng.normal()
        } else {
            0.0
        }
    });
    VariationalGaussian::new(mu, l).unwrap()
}

pub fn perturbed_kernel(p: usize, qg: usize, rng: &mut SeededRng) -> KernelParams {
    let mut k = KernelParams::unit(p, qg);
    k.beta = 0.3;
    k.log_sigma2 = 0.2;
    for v in k.log_phi.iter_mut().chain(k.log_phi_z.iter_mut()) {
        *v = rng.uniform(-0.5, 0.5);
    }
    k
}

pub fn sv_model(data: &NormalizedData, n_inducing: usize, seed: u64) -> SVModel {
    let mut rng = SeededRng::new(seed);
    let mut m = SVModel::initialize(data, Normalization::identity(2, 1), n_inducing, 2, &mut rng).unwrap();
    m.kernel = perturbed_kernel(2, m.map.width(), &mut rng);
    m.log_noise = rng.uniform(-2.5, -1.0);
    for v in m.inducing.points.iter_mut() {
        *v += 0.05 * rng.normal();
    }
    m.var = random_var(n_inducing, &mut rng);
    m
}

pub fn lmc_model(data: &NormalizedData, structure: LatentStructure, tie: bool, n_inducing: usize, seed: u64) -> LmcModel {
    let mut rng = SeededRng::new(seed);
    let opts = LmcOptions {
        functions: 2,
        structure,
        n_inducing,
        latent_dim: 2,
        tie_inducing: tie,
    };
    let mut m = LmcModel::initialize(data, Normalization::identity(2, data.outputs()), opts, &mut rng).unwrap();
    let qg = m.map.width();
    for k in m.kernels.iter_mut() {
        *k = perturbed_kernel(2, qg, &mut rng);
    }
    for v in m.w.iter_mut() {
        *v = rng.normal();
    }
    for v in m.beta.iter_mut() {
        *v = 0.2 * rng.normal();
    }
    for v in m.log_noise.iter_mut() {
        *v = rng.uniform(-2.0, -1.0);
    }
    for set in m.inducing.iter_mut() {
        for v in set.points.iter_mut() {
            *v += 0.05 * rng.normal();
        }
    }
    for v in m.var.iter_mut() {
        *v = random_var(n_inducing, &mut rng);
    }
    m
}

pub fn exact_params(seed: u64) -> ExactParams {
    let mut rng = SeededRng::new(seed);
    let map = LatentMap::random(&[3, 2], 2, LatentStructure::Shared, 1, &mut rng);
    ExactParams {
        kernel: perturbed_kernel(2, map.width(), &mut rng),
        log_noise: rng.uniform(-2.5, -1.0),
        map,
    }
}

/// Central difference of `f` at 0 with step `h`.
pub fn central(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// One analytic/numeric derivative pair.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    pub fn relative_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / scale
        }
    }
}

pub const FD_STEP: f64 = 1e-5;

fn sweep_variational(
    var: &[VariationalGaussian],
    g_mu: &[DVector<f64>],
    g_l: &[DMatrix<f64>],
    f: &dyn Fn(&[VariationalGaussian]) -> f64,
    out: &mut Vec<GradCheck>,
) {
    for l in 0..var.len() {
        let m = var[l].len();
        for i in 0..m {
            let numeric = central(FD_STEP, |d| {
                let mut v = var.to_vec();
                v[l].mu[i] += d;
                f(&v)
            });
            out.push(GradCheck { name: format!("mu[{l}][{i}]"), analytic: g_mu[l][i], numeric });
            for j in 0..=i {
                let numeric = central(FD_STEP, |d| {
                    let mut v = var.to_vec();
                    v[l].sigma_lower[(i, j)] += d;
                    f(&v)
                });
                out.push(GradCheck { name: format!("sigma_lower[{l}][{i},{j}]"), analytic: g_l[l][(i, j)], numeric });
            }
        }
    }
}

pub fn sv_checks(model: &SVModel, data: &NormalizedData, batch: &[usize]) -> Vec<GradCheck> {
    let n = data.len();
    let (_, grad) = model.elbo_gradient(data, batch, n).unwrap();
    let theta = model.hyper();
    let layout = model.layout();
    let mut out = Vec::new();
    for i in 0..theta.len() {
        let numeric = central(FD_STEP, |d| {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[i] += d;
            m.set_hyper(&t);
            svlvgp::svgp::elbo(&m, data, batch, n).unwrap().elbo
        });
        let name = format!("{}[{i}]", layout.group_of(i).unwrap().name());
        out.push(GradCheck { name, analytic: grad.hyper[i], numeric });
    }
    let g_l = grad.sigma_lower(std::slice::from_ref(&model.var));
    let f = |v: &[VariationalGaussian]| {
        let mut m = model.clone();
        m.var = v[0].clone();
        svlvgp::svgp::elbo(&m, data, batch, n).unwrap().elbo
    };
    sweep_variational(std::slice::from_ref(&model.var), &grad.mu, &g_l, &f, &mut out);
    out
}

pub fn lmc_checks(model: &LmcModel, data: &NormalizedData, batch: &[usize]) -> Vec<GradCheck> {
    let n = data.len();
    let (_, grad) = model.elbo_gradient(data, batch, n).unwrap();
    let theta = model.hyper();
    let layout = model.layout();
    let mut out = Vec::new();
    for i in 0..theta.len() {
        let numeric = central(FD_STEP, |d| {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[i] += d;
            m.set_hyper(&t);
            svlvgp::lmc::multi_elbo(&m, data, batch, n).unwrap().elbo
        });
        let name = format!("{}[{i}]", layout.group_of(i).unwrap().name());
        out.push(GradCheck { name, analytic: grad.hyper[i], numeric });
    }
    let g_l = grad.sigma_lower(&model.var);
    let f = |v: &[VariationalGaussian]| {
        let mut m = model.clone();
        m.var = v.to_vec();
        svlvgp::lmc::multi_elbo(&m, data, batch, n).unwrap().elbo
    };
    sweep_variational(&model.var, &grad.mu, &g_l, &f, &mut out);
    out
}

pub fn exact_checks(params: &ExactParams, data: &NormalizedData) -> Vec<GradCheck> {
    let mut p = params.clone();
    let (_, grad) = svlvgp::exact_gp::nll_gradient(&mut p, data, false).unwrap();
    let theta = params.to_vec();
    let layout = params.layout();
    (0..theta.len())
        .map(|i| {
            let numeric = central(FD_STEP, |d| {
                let mut q = params.clone();
                let mut t = theta.clone();
                t[i] += d;
                q.set_from(&t);
                svlvgp::exact_gp::neg_log_likelihood(&q, data).unwrap()
            });
            GradCheck { name: format!("{}[{i}]", layout.group_of(i).unwrap().name()), analytic: grad[i], numeric }
        })
        .collect()
}
