//! Dense symmetric linear algebra and seeded randomness.
//!
//! Every covariance solve in the crate goes through [`CholFactor`]; nothing
//! calls a general-purpose matrix inverse.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Jitter is escalated by this factor after each failed factorization.
pub const JITTER_GROWTH: f64 = 10.0;
/// Largest jitter tried, relative to the mean diagonal entry.
pub const JITTER_CAP_RELATIVE: f64 = 1e-4;
/// First nonzero jitter tried when the caller passed zero.
pub const JITTER_FLOOR_RELATIVE: f64 = 1e-12;

/// Lower Cholesky factor of `m + jitter_used * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl CholFactor {
    /// Wraps an existing lower-triangular factor, checking its diagonal.
    pub fn from_lower(lower: DMatrix<f64>) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "factor is {}x{}",
                lower.nrows(),
                lower.ncols()
            )));
        }
        for i in 0..lower.nrows() {
            let d = lower[(i, i)];
            if !d.is_finite() || d <= 0.0 {
                return Err(Error::InvariantViolation(format!(
                    "factor diagonal entry {i} is {d}"
                )));
            }
        }
        Ok(CholFactor {
            lower: lower.lower_triangle(),
            jitter_used: 0.0,
        })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn into_lower(self) -> DMatrix<f64> {
        self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn order(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `(L Lᵀ) X = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        let mut xt = b.transpose();
        self.forward_rows(&mut xt, false);
        self.backward_rows(&mut xt);
        finite_transpose(xt)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(b.len())?;
        let y = self
            .lower
            .solve_lower_triangular(b)
            .ok_or_else(|| Error::NonFinite("triangular solve".into()))?;
        self.lower
            .tr_solve_lower_triangular(&y)
            .ok_or_else(|| Error::NonFinite("triangular solve".into()))
    }

    /// Solves `L X = b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        let mut xt = b.transpose();
        self.forward_rows(&mut xt, false);
        finite_transpose(xt)
    }

    /// `(L Lᵀ)⁻¹` as `L⁻ᵀ L⁻¹`, with `L⁻¹` from forward substitution on the identity.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.order();
        // columns of `u` are the rows of L⁻¹
        let mut u = DMatrix::identity(n, n);
        self.forward_rows(&mut u, true);
        let mut inv = &u * u.transpose();
        symmetrize(&mut inv);
        inv
    }

    /// Forward substitution on transposed right-hand sides: column `k` of
    /// `xt` holds row `k` of the system, so every update is a contiguous axpy.
    /// With `unit_rhs` the right-hand side is the identity and only the
    /// nonzero leading part of each column is touched.
    fn forward_rows(&self, xt: &mut DMatrix<f64>, unit_rhs: bool) {
        let l = &self.lower;
        let nb = xt.nrows();
        let data = xt.as_mut_slice();
        for k in 0..l.nrows() {
            let (done, rest) = data.split_at_mut(k * nb);
            let col_k = &mut rest[..nb];
            for j in 0..k {
                let c = l[(k, j)];
                if c != 0.0 {
                    let len = if unit_rhs { j + 1 } else { nb };
                    axpy_neg(c, &done[j * nb..j * nb + len], &mut col_k[..len]);
                }
            }
            let d = l[(k, k)];
            col_k.iter_mut().for_each(|v| *v /= d);
        }
    }

    /// Back substitution for `Lᵀ X = B` in the same transposed layout.
    fn backward_rows(&self, xt: &mut DMatrix<f64>) {
        let l = &self.lower;
        let n = l.nrows();
        let nb = xt.nrows();
        let data = xt.as_mut_slice();
        for k in (0..n).rev() {
            let (head, later) = data.split_at_mut((k + 1) * nb);
            let col_k = &mut head[k * nb..];
            for j in (k + 1)..n {
                let c = l[(j, k)];
                if c != 0.0 {
                    let off = (j - k - 1) * nb;
                    axpy_neg(c, &later[off..off + nb], col_k);
                }
            }
            let d = l[(k, k)];
            col_k.iter_mut().for_each(|v| *v /= d);
        }
    }
}

#[inline]
fn axpy_neg(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi -= c * xi;
    }
}

impl CholFactor {
    /// `ln |L Lᵀ|`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    fn check_rows(&self, rows: usize) -> Result<()> {
        if rows != self.order() {
            return Err(Error::DimensionMismatch(format!(
                "factor of order {} against right-hand side with {} rows",
                self.order(),
                rows
            )));
        }
        Ok(())
    }
}

fn finite_transpose(xt: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xt.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("triangular solve".into()));
    }
    Ok(xt.transpose())
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Tries `base_jitter` first, then multiplies by ten after every failure
/// until the jitter would exceed `1e-4 * mean(diag(m))`.
pub fn cholesky_with_jitter(m: &DMatrix<f64>, base_jitter: f64) -> Result<CholFactor> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "cholesky of {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::DimensionMismatch("cholesky of empty matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to cholesky".into()));
    }
    if !(base_jitter >= 0.0) {
        return Err(Error::InvalidConfig(format!("base jitter {base_jitter}")));
    }
    let n = m.nrows();
    let mean_diag = m.diagonal().sum() / n as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::NotPositiveDefinite { jitter: base_jitter });
    }
    let cap = JITTER_CAP_RELATIVE * mean_diag;
    let mut jitter = base_jitter;
    loop {
        if let Some(f) = try_factor(m, jitter) {
            return Ok(f);
        }
        let next = if jitter == 0.0 {
            JITTER_FLOOR_RELATIVE * mean_diag
        } else {
            jitter * JITTER_GROWTH
        };
        if next > cap * (1.0 + 1e-12) {
            return Err(Error::NotPositiveDefinite { jitter });
        }
        jitter = next;
    }
}

fn try_factor(m: &DMatrix<f64>, jitter: f64) -> Option<CholFactor> {
    let mut a = m.clone();
    if jitter > 0.0 {
        for i in 0..a.nrows() {
            a[(i, i)] += jitter;
        }
    }
    let chol = Cholesky::new(a)?;
    let lower = chol.unpack();
    let ok = lower.diagonal().iter().all(|d| d.is_finite() && *d > 0.0);
    ok.then_some(CholFactor {
        lower,
        jitter_used: jitter,
    })
}

pub fn chol_solve(f: &CholFactor, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    f.solve(b)
}

pub fn logdet(f: &CholFactor) -> f64 {
    f.logdet()
}

/// Replaces `m` with `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Seeded pseudo-random stream. The algorithm is fixed to ChaCha20 so that a
/// seed reproduces the same draws on every platform.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha20";

    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` derived from `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `k` distinct indices from `0..n`, in sampling order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        index::sample(&mut self.inner, n, k).into_vec()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = cholesky_with_jitter(&DMatrix::identity(3, 3), 0.0).unwrap();
        assert_eq!(f.lower(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(f.jitter_used(), 0.0);
    }

    #[test]
    fn two_by_two_factor() {
        let f = cholesky_with_jitter(&mat(2, 2, &[4.0, 2.0, 2.0, 3.0]), 0.0).unwrap();
        let expected = mat(2, 2, &[2.0, 0.0, 1.0, 2f64.sqrt()]);
        assert_relative_eq!(f.lower(), &expected, epsilon = 1e-14);
    }

    #[test]
    fn rank_one_needs_jitter() {
        let m = mat(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(try_factor(&m, 0.0).is_none());
        let f = cholesky_with_jitter(&m, 1e-10).unwrap();
        assert!(f.jitter_used() >= 1e-10);
    }

    #[test]
    fn jitter_exhaustion_is_an_error() {
        let m = mat(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_with_jitter(&m, 0.0),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let m = mat(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0]);
        assert!(matches!(cholesky_with_jitter(&m, 0.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn solve_examples() {
        let id = cholesky_with_jitter(&DMatrix::identity(2, 2), 0.0).unwrap();
        let b = mat(2, 1, &[3.0, -1.0]);
        assert_eq!(chol_solve(&id, &b).unwrap(), b);

        let f = cholesky_with_jitter(&mat(2, 2, &[4.0, 2.0, 2.0, 3.0]), 0.0).unwrap();
        let x = chol_solve(&f, &mat(2, 1, &[2.0, 3.0])).unwrap();
        // 4x + 2y = 2, 2x + 3y = 3  =>  x = 0, y = 1
        assert_relative_eq!(x[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);

        let d = cholesky_with_jitter(&mat(2, 2, &[2.0, 0.0, 0.0, 8.0]), 0.0).unwrap();
        let x = chol_solve(&d, &mat(2, 1, &[2.0, 8.0])).unwrap();
        assert_relative_eq!(x, mat(2, 1, &[1.0, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn solve_dimension_mismatch() {
        let id = cholesky_with_jitter(&DMatrix::identity(2, 2), 0.0).unwrap();
        assert!(matches!(
            chol_solve(&id, &DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn logdet_examples() {
        let id = cholesky_with_jitter(&DMatrix::identity(5, 5), 0.0).unwrap();
        assert_eq!(logdet(&id), 0.0);
        let d = cholesky_with_jitter(&mat(2, 2, &[2.0, 0.0, 0.0, 8.0]), 0.0).unwrap();
        assert_relative_eq!(logdet(&d), 16f64.ln(), epsilon = 1e-14);
        let f = cholesky_with_jitter(&mat(2, 2, &[4.0, 2.0, 2.0, 3.0]), 0.0).unwrap();
        assert_relative_eq!(logdet(&f), 8f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn from_lower_rejects_nonpositive_diagonal() {
        let l = mat(2, 2, &[1.0, 0.0, 0.5, -1.0]);
        assert!(matches!(
            CholFactor::from_lower(l),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn rng_streams_are_reproducible() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::with_stream(42, 1);
        let mut d = SeededRng::new(42);
        assert_ne!(c.next_u64(), d.next_u64());
    }
}
