//! Synthetic benchmark generators and k-fold cross-validation.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent_map::{Dataset, MixedPoint, MixedSchema};
use crate::numerics::SeededRng;
use crate::prediction::rmse;
use crate::training::{self, FitSpec, ModelFamily};

/// Second-sine coefficient for each level of `t` in the single-response function.
pub const SINGLE_COEFFICIENTS: [f64; 5] = [1.0, 13.0, 1.5, 9.0, 4.5];
/// Levels of `t` sorted by their coefficient.
pub const SINGLE_TRUE_ORDER: [usize; 5] = [1, 3, 5, 4, 2];
pub const CATEGORY_LEVELS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sd: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { sd: 0.0, seed: 0 }
    }

    pub fn new(sd: f64, seed: u64) -> Result<Self> {
        if !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::InvalidConfig(format!("noise sd must be nonnegative, got {sd}")));
        }
        Ok(NoiseSpec { sd, seed })
    }
}

/// `n` evenly spaced points from `lo` to `hi`, both included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Noise-free single-response function; `t` in 1..=5.
pub fn single_response(x1: f64, x2: f64, t: usize) -> f64 {
    7.0 * (2.0 * PI * x1 - PI).sin() + SINGLE_COEFFICIENTS[t - 1] * (2.0 * PI * x2 - PI).sin()
}

/// Noise-free two-response function; `t` holds levels in 1..=5.
///
/// The linear term pairs `x_1` with `t_2` and `x_2` with `t_1`.
pub fn multi_response(x: [f64; 2], t: [usize; 2]) -> [f64; 2] {
    let tc = [t[0] as f64 - 3.0, t[1] as f64 - 3.0];
    let linear = (x[0] * tc[1] + x[1] * tc[0]) / 80.0;
    let mut prod1 = 1.0;
    let mut prod2 = 1.0;
    for j in 0..2 {
        let arg = x[j] / ((j + 1) as f64).sqrt();
        let cat = (50.0 * tc[j] / 2f64.sqrt()).cos();
        prod1 *= arg.cos() * cat;
        prod2 *= (arg - j as f64 * PI / 2.0).cos() * cat;
    }
    [linear + prod1, linear + prod2]
}

fn check_grid(sizes: &[usize]) -> Result<()> {
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::InvalidConfig(format!("grid sizes must be at least 2, got {sizes:?}")));
    }
    Ok(())
}

fn add_noise(y: &mut DMatrix<f64>, column: usize, noise: &NoiseSpec) {
    if noise.sd == 0.0 {
        return;
    }
    let mut rng = SeededRng::with_stream(noise.seed, column as u64);
    for v in y.column_mut(column).iter_mut() {
        *v += noise.sd * rng.normal();
    }
}

/// `n1 x n2 x 5` grid over `[0,1]² x {1..5}`, `t` varying fastest.
pub fn gen_single(n1: usize, n2: usize, noise: NoiseSpec) -> Result<Dataset> {
    check_grid(&[n1, n2])?;
    let (g1, g2) = (linspace(0.0, 1.0, n1), linspace(0.0, 1.0, n2));
    let mut inputs = Vec::with_capacity(n1 * n2 * CATEGORY_LEVELS);
    let mut y = Vec::with_capacity(inputs.capacity());
    for &x1 in &g1 {
        for &x2 in &g2 {
            for t in 1..=CATEGORY_LEVELS {
                inputs.push(MixedPoint::new(vec![x1, x2], vec![t]));
                y.push(single_response(x1, x2, t));
            }
        }
    }
    let mut y = DMatrix::from_vec(y.len(), 1, y);
    add_noise(&mut y, 0, &noise);
    Dataset::new(MixedSchema::new(2, vec![CATEGORY_LEVELS])?, inputs, y)
}

/// `n1 x n2 x 5 x 5` grid over `[-100,100]² x {1..5}²`, `t_2` varying fastest.
pub fn gen_multi(n1: usize, n2: usize, noise: [NoiseSpec; 2]) -> Result<Dataset> {
    check_grid(&[n1, n2])?;
    let (g1, g2) = (linspace(-100.0, 100.0, n1), linspace(-100.0, 100.0, n2));
    let n = n1 * n2 * CATEGORY_LEVELS * CATEGORY_LEVELS;
    let mut inputs = Vec::with_capacity(n);
    let mut y = DMatrix::zeros(n, 2);
    for &x1 in &g1 {
        for &x2 in &g2 {
            for t1 in 1..=CATEGORY_LEVELS {
                for t2 in 1..=CATEGORY_LEVELS {
                    let r = inputs.len();
                    let v = multi_response([x1, x2], [t1, t2]);
                    y[(r, 0)] = v[0];
                    y[(r, 1)] = v[1];
                    inputs.push(MixedPoint::new(vec![x1, x2], vec![t1, t2]));
                }
            }
        }
    }
    for (o, spec) in noise.iter().enumerate() {
        add_noise(&mut y, o, spec);
    }
    Dataset::new(MixedSchema::new(2, vec![CATEGORY_LEVELS; 2])?, inputs, y)
}

/// Shuffled assignment of `n` rows to `k` folds; fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || n < k {
        return Err(Error::InvalidConfig(format!("{k}-fold split of {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    SeededRng::with_stream(seed, 0x666f_6c64).shuffle(&mut perm);
    let mut folds = vec![Vec::with_capacity(n / k + 1); k];
    for (i, row) in perm.into_iter().enumerate() {
        folds[i % k].push(row);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Per-output RMSE in original units; empty when the fold failed.
    pub rmse: Vec<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    /// Per-output mean over successful folds.
    pub mean: Vec<f64>,
    /// Per-output sample standard deviation over successful folds.
    pub sd: Vec<f64>,
}

impl CVReport {
    fn assemble(k: usize, seed: u64, outputs: usize, folds: Vec<FoldResult>) -> Self {
        let ok: Vec<&FoldResult> = folds.iter().filter(|f| f.error.is_none()).collect();
        let mut mean = vec![f64::NAN; outputs];
        let mut sd = vec![f64::NAN; outputs];
        if !ok.is_empty() {
            for o in 0..outputs {
                let m = ok.iter().map(|f| f.rmse[o]).sum::<f64>() / ok.len() as f64;
                mean[o] = m;
                sd[o] = if ok.len() > 1 {
                    (ok.iter().map(|f| (f.rmse[o] - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
                } else {
                    0.0
                };
            }
        }
        CVReport { k, seed, folds, mean, sd }
    }

    pub fn failures(&self) -> usize {
        self.folds.iter().filter(|f| f.error.is_some()).count()
    }

    /// `fold,output,rmse,n_train,n_test,error[,seconds]`, one row per fold and output.
    pub fn write_csv<W: Write>(&self, out: W, with_seconds: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["fold", "output", "rmse", "n_train", "n_test", "error"];
        if with_seconds {
            header.push("seconds");
        }
        w.write_record(&header)?;
        let outputs = self.mean.len();
        for f in &self.folds {
            for o in 0..outputs {
                let r = f.rmse.get(o).map_or(String::new(), |v| v.to_string());
                let mut rec = vec![
                    f.fold.to_string(),
                    (o + 1).to_string(),
                    r,
                    f.n_train.to_string(),
                    f.n_test.to_string(),
                    f.error.clone().unwrap_or_default(),
                ];
                if with_seconds {
                    rec.push(f.seconds.to_string());
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}-fold CV (seed {}), {} of {} folds succeeded\n",
            self.k,
            self.seed,
            self.k - self.failures(),
            self.k
        );
        for o in 0..self.mean.len() {
            s.push_str(&format!("output {}: RMSE mean {:.6} sd {:.6}\n", o + 1, self.mean[o], self.sd[o]));
        }
        for f in self.folds.iter().filter(|f| f.error.is_some()) {
            s.push_str(&format!("fold {} failed: {}\n", f.fold, f.error.as_deref().unwrap_or("")));
        }
        s
    }
}

/// k-fold CV with an arbitrary fit-and-predict routine.
///
/// `predictor(fold, train, test)` returns `n_test x N_op` predictions in
/// original units. Folds run in parallel; errors are recorded per fold.
pub fn crossvalidate_with<F>(data: &Dataset, k: usize, seed: u64, predictor: F) -> Result<CVReport>
where
    F: Fn(usize, &Dataset, &Dataset) -> Result<DMatrix<f64>> + Sync,
{
    data.validate()?;
    let folds = fold_assignment(data.len(), k, seed)?;
    let outputs = data.outputs_count();
    let results: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|f| {
            let start = Instant::now();
            let test_rows = &folds[f];
            let train_rows: Vec<usize> = (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().copied()).collect();
            let mut train_rows = train_rows;
            train_rows.sort_unstable();
            let train = data.subset(&train_rows);
            let test = data.subset(test_rows);
            let outcome = predictor(f, &train, &test).and_then(|pred| {
                if pred.shape() != test.outputs.shape() {
                    return Err(Error::DimensionMismatch(format!(
                        "predictions {:?} vs test responses {:?}",
                        pred.shape(),
                        test.outputs.shape()
                    )));
                }
                Ok((0..outputs)
                    .map(|o| rmse(pred.column(o).iter().copied(), test.outputs.column(o).iter().copied()))
                    .collect::<Vec<f64>>())
            });
            let (rmse, error) = match outcome {
                Ok(r) => (r, None),
                Err(e) => (Vec::new(), Some(format!("{}: {e}", e.code()))),
            };
            FoldResult {
                fold: f,
                n_train: train_rows.len(),
                n_test: test_rows.len(),
                rmse,
                error,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect();
    Ok(CVReport::assemble(k, seed, outputs, results))
}

/// k-fold CV of a model family. Fold `f` trains with seed `spec.train.seed + f`.
pub fn crossvalidate(family: ModelFamily, spec: &FitSpec, data: &Dataset, k: usize, seed: u64) -> Result<CVReport> {
    crossvalidate_with(data, k, seed, |f, train, test| {
        let mut fold_spec = spec.clone();
        fold_spec.train.seed = spec.train.seed.wrapping_add(f as u64);
        let (model, _) = training::fit(family, train, &fold_spec)?;
        let pred = model.predict_marginal(&test.inputs)?;
        Ok(pred.mean)
    })
}
