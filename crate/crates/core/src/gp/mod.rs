//! Univariate Gaussian-process emulator.
//!
//! The process has a constant or linear trend and a squared-exponential
//! correlation `r(x, x') = exp(-sum_k (x_k - x'_k)^2 / delta_k^2)` evaluated
//! on unit-cube coordinates. The trend coefficients and the process variance
//! are integrated out under the reference prior `pi(beta, sigma^2) ~ 1/sigma^2`,
//! and the lengthscales are set to the mode of the resulting integrated
//! posterior.
//!
//! Predictions report the Gaussian-form moment pair (mean, variance); the
//! Student-t inflation of the exact posterior is not applied.

mod simplex;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, Domain};
use crate::error::{ensure_len, Error, Result};

pub use simplex::{maximize, SimplexOptions, SimplexResult};

/// Two unit-cube points closer than this are the same point.
pub const DUPLICATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendKind {
    Constant,
    Linear,
}

impl TrendKind {
    /// Number of trend coefficients for a `p`-dimensional input.
    pub fn n_coeffs(self, p: usize) -> usize {
        match self {
            TrendKind::Constant => 1,
            TrendKind::Linear => 1 + p,
        }
    }

    /// Regressors `h(u)` at a unit-cube point.
    pub fn regressors(self, u: &[f64]) -> Vec<f64> {
        match self {
            TrendKind::Constant => vec![1.0],
            TrendKind::Linear => std::iter::once(1.0).chain(u.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// One lengthscale per input, on the unit-cube scale.
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(lengthscales: Vec<f64>, nugget: f64) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive: {lengthscales:?}"
            )));
        }
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(Error::InvalidArgument(format!("nugget must be >= 0: {nugget}")));
        }
        Ok(Self { lengthscales, nugget })
    }

    /// Correlation between two unit-cube points (no nugget).
    pub fn correlation(&self, a: &[f64], b: &[f64]) -> f64 {
        let s: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), d)| (x - y) * (x - y) / (d * d))
            .sum();
        (-s).exp()
    }
}

/// Options for [`fit_gp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub starts: usize,
    pub seed: u64,
    pub nugget: f64,
    /// Nugget is escalated x10 on factorisation failure up to this value.
    pub max_nugget: f64,
    pub min_lengthscale: f64,
    pub max_lengthscale: f64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 10,
            seed: 0,
            nugget: 1e-8,
            max_nugget: 1e-4,
            min_lengthscale: 0.01,
            max_lengthscale: 10.0,
            max_evals: 1500,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.starts == 0 {
            return Err(Error::InvalidArgument("starts must be >= 1".into()));
        }
        if !(self.min_lengthscale > 0.0 && self.min_lengthscale < self.max_lengthscale) {
            return Err(Error::InvalidArgument("invalid lengthscale bounds".into()));
        }
        if !(self.nugget >= 0.0 && self.nugget <= self.max_nugget) {
            return Err(Error::InvalidArgument("invalid nugget range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    /// The query point was outside the training domain.
    pub extrapolated: bool,
}

impl Prediction {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Quantities that depend on the data and the kernel hyperparameters.
#[derive(Debug, Clone)]
struct Factors {
    chol: Cholesky<f64, Dyn>,
    /// R^-1 H
    rinv_h: DMatrix<f64>,
    /// (H^T R^-1 H)^-1
    a_inv: DMatrix<f64>,
    beta: DVector<f64>,
    alpha: DVector<f64>,
    sigma2: f64,
    log_det_r: f64,
    log_det_a: f64,
}

fn correlation_matrix(x: &DMatrix<f64>, kernel: &KernelSpec) -> DMatrix<f64> {
    let n = x.nrows();
    let inv: Vec<f64> = kernel.lengthscales.iter().map(|d| 1.0 / (d * d)).collect();
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..i {
            let s: f64 = (0..x.ncols())
                .map(|k| {
                    let d = x[(i, k)] - x[(j, k)];
                    d * d * inv[k]
                })
                .sum();
            let v = (-s).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    for i in 0..n {
        r[(i, i)] += kernel.nugget;
    }
    r
}

fn regression_matrix(x: &DMatrix<f64>, trend: TrendKind) -> DMatrix<f64> {
    let m = trend.n_coeffs(x.ncols());
    DMatrix::from_fn(x.nrows(), m, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn factorize(x: &DMatrix<f64>, f: &DVector<f64>, h: &DMatrix<f64>, kernel: &KernelSpec) -> Option<Factors> {
    let n = x.nrows();
    let m = h.ncols();
    let chol = correlation_matrix(x, kernel).cholesky()?;
    let rinv_h = chol.solve(h);
    let a = h.transpose() * &rinv_h;
    let a_chol = a.cholesky()?;
    let a_inv = a_chol.inverse();
    let rinv_f = chol.solve(f);
    let beta = &a_inv * (h.transpose() * &rinv_f);
    let resid = f - h * &beta;
    let alpha = chol.solve(&resid);
    let sigma2 = (resid.dot(&alpha) / (n - m) as f64).max(0.0);
    let log_det_r = log_det(&chol);
    let log_det_a = log_det(&a_chol);
    if !(sigma2.is_finite() && log_det_r.is_finite() && log_det_a.is_finite()) {
        return None;
    }
    Some(Factors {
        chol,
        rinv_h,
        a_inv,
        beta,
        alpha,
        sigma2,
        log_det_r,
        log_det_a,
    })
}

fn objective(fac: &Factors, n: usize, m: usize) -> f64 {
    // A zero residual (e.g. constant data) would send log sigma^2 to -inf.
    let s2 = fac.sigma2.max(f64::MIN_POSITIVE);
    -0.5 * (n - m) as f64 * s2.ln() - 0.5 * fac.log_det_r - 0.5 * fac.log_det_a
}

/// Integrated log posterior of the lengthscales (up to a constant):
/// `-(n-m)/2 log sigma2_hat - 1/2 log|R| - 1/2 log|H^T R^-1 H|`.
///
/// `x` holds unit-cube inputs row-wise. Returns `-inf` when the correlation
/// matrix cannot be factorised.
pub fn loglik_profile(x: &DMatrix<f64>, f: &[f64], trend: TrendKind, kernel: &KernelSpec) -> f64 {
    let fv = DVector::from_column_slice(f);
    let h = regression_matrix(x, trend);
    match factorize(x, &fv, &h, kernel) {
        Some(fac) => objective(&fac, x.nrows(), h.ncols()),
        None => f64::NEG_INFINITY,
    }
}

/// A fitted, immutable GP emulator.
#[derive(Debug, Clone)]
pub struct GpModel {
    domain: Domain,
    /// Training inputs in unit-cube coordinates, sorted lexicographically.
    x: DMatrix<f64>,
    f: DVector<f64>,
    h: DMatrix<f64>,
    trend: TrendKind,
    kernel: KernelSpec,
    fac: Factors,
    r_inv: DMatrix<f64>,
}

/// Sorts rows lexicographically so that a fit does not depend on the order
/// in which training runs are supplied.
fn canonical_order(x: &DMatrix<f64>, f: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let mut idx: Vec<usize> = (0..x.nrows()).collect();
    idx.sort_by(|&a, &b| {
        for k in 0..x.ncols() {
            let c = x[(a, k)].total_cmp(&x[(b, k)]);
            if c.is_ne() {
                return c;
            }
        }
        f[a].total_cmp(&f[b])
    });
    let xs = x.select_rows(&idx);
    let fs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| f[i]));
    (xs, fs)
}

fn check_duplicates(x: &DMatrix<f64>) -> Result<()> {
    for i in 0..x.nrows() {
        for j in 0..i {
            let d2: f64 = (0..x.ncols()).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
            if d2.sqrt() < DUPLICATE_TOL {
                return Err(Error::IllConditioned(format!("design points {j} and {i} coincide")));
            }
        }
    }
    Ok(())
}

fn prepare(design: &DesignMatrix, f: &[f64], trend: TrendKind) -> Result<(DMatrix<f64>, DVector<f64>)> {
    ensure_len(design.n(), f.len())?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("training outputs must be finite".into()));
    }
    let m = trend.n_coeffs(design.p());
    if design.n() < m + 2 {
        return Err(Error::InsufficientData(format!(
            "{} runs for {} trend coefficients (need at least {})",
            design.n(),
            m,
            m + 2
        )));
    }
    let (x, fv) = canonical_order(&design.unit_points(), f);
    check_duplicates(&x)?;
    Ok((x, fv))
}

/// Fits a GP, choosing lengthscales by multi-start simplex search on
/// log-lengthscales.
pub fn fit_gp(design: &DesignMatrix, f: &[f64], trend: TrendKind, opts: &FitOptions) -> Result<GpModel> {
    opts.validate()?;
    let (x, fv) = prepare(design, f, trend)?;
    let p = x.ncols();
    let h = regression_matrix(&x, trend);
    let (n, m) = (x.nrows(), h.ncols());

    let lo = vec![opts.min_lengthscale.ln(); p];
    let hi = vec![opts.max_lengthscale.ln(); p];
    let target = |theta: &[f64]| -> f64 {
        let kernel = KernelSpec {
            lengthscales: theta.iter().map(|t| t.exp()).collect(),
            nugget: opts.nugget,
        };
        match factorize(&x, &fv, &h, &kernel) {
            Some(fac) => objective(&fac, n, m),
            None => f64::NEG_INFINITY,
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let simplex = SimplexOptions {
        max_evals: opts.max_evals,
        ..SimplexOptions::default()
    };
    let mut best: Option<SimplexResult> = None;
    for s in 0..opts.starts {
        let start: Vec<f64> = if s == 0 {
            lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect()
        } else {
            lo.iter().zip(&hi).map(|(l, h)| rng.random_range(*l..*h)).collect()
        };
        let res = maximize(&target, &start, &lo, &hi, &simplex);
        if best.as_ref().is_none_or(|b| res.value > b.value) {
            best = Some(res);
        }
    }
    let best = best.expect("at least one start");
    if !best.value.is_finite() {
        log::warn!("no finite objective found during lengthscale search");
    }
    let lengthscales = best.x.iter().map(|t| t.exp()).collect();
    build(
        design.domain().clone(),
        x,
        fv,
        h,
        trend,
        lengthscales,
        opts.nugget,
        opts.max_nugget,
    )
}

/// Builds a model at fixed hyperparameters (trend and variance still fitted).
pub fn fit_gp_with_kernel(design: &DesignMatrix, f: &[f64], trend: TrendKind, kernel: &KernelSpec) -> Result<GpModel> {
    ensure_len(design.p(), kernel.lengthscales.len())?;
    let (x, fv) = prepare(design, f, trend)?;
    let h = regression_matrix(&x, trend);
    let max_nugget = kernel.nugget.max(FitOptions::default().max_nugget);
    build(
        design.domain().clone(),
        x,
        fv,
        h,
        trend,
        kernel.lengthscales.clone(),
        kernel.nugget,
        max_nugget,
    )
}

#[allow(clippy::too_many_arguments)]
fn build(
    domain: Domain,
    x: DMatrix<f64>,
    f: DVector<f64>,
    h: DMatrix<f64>,
    trend: TrendKind,
    lengthscales: Vec<f64>,
    nugget: f64,
    max_nugget: f64,
) -> Result<GpModel> {
    let mut kernel = KernelSpec::new(lengthscales, nugget)?;
    loop {
        if let Some(fac) = factorize(&x, &f, &h, &kernel) {
            let r_inv = fac.chol.inverse();
            return Ok(GpModel {
                domain,
                x,
                f,
                h,
                trend,
                kernel,
                fac,
                r_inv,
            });
        }
        let next = if kernel.nugget == 0.0 {
            1e-12
        } else {
            kernel.nugget * 10.0
        };
        if next > max_nugget * (1.0 + 1e-12) {
            return Err(Error::Numerical(format!(
                "correlation matrix not positive definite with nugget {}",
                kernel.nugget
            )));
        }
        log::debug!("escalating nugget to {next}");
        kernel.nugget = next;
    }
}

impl GpModel {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn trend(&self) -> TrendKind {
        self.trend
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.kernel.lengthscales
    }

    pub fn nugget(&self) -> f64 {
        self.kernel.nugget
    }

    /// Training inputs on the unit cube (canonically ordered rows).
    pub fn unit_inputs(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn outputs(&self) -> &DVector<f64> {
        &self.f
    }

    /// Training inputs in domain units.
    pub fn inputs(&self) -> DMatrix<f64> {
        let d = self.domain.dims();
        DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| {
            (d[j].lower + self.x[(i, j)] * d[j].width()).clamp(d[j].lower, d[j].upper)
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.fac.beta
    }

    /// `R^-1 (F - H beta)`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.fac.alpha
    }

    pub fn sigma2(&self) -> f64 {
        self.fac.sigma2
    }

    /// Inverse of the nugget-inflated correlation matrix.
    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn rinv_h(&self) -> &DMatrix<f64> {
        &self.fac.rinv_h
    }

    /// `(H^T R^-1 H)^-1`.
    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.fac.a_inv
    }

    pub fn regression_matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// Objective value at the fitted lengthscales.
    pub fn log_posterior(&self) -> f64 {
        objective(&self.fac, self.n(), self.h.ncols())
    }

    /// Cross-correlations between a unit-cube point and the training inputs.
    ///
    /// A query that coincides with a training input picks up the nugget too,
    /// so the emulator interpolates its own runs exactly.
    pub fn cross_correlation(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.n(), |t, _| {
            let row: Vec<f64> = self.x.row(t).iter().copied().collect();
            let mut r = self.kernel.correlation(u, &row);
            let d2: f64 = u.iter().zip(&row).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < DUPLICATE_TOL * DUPLICATE_TOL {
                r += self.kernel.nugget;
            }
            r
        })
    }

    /// Predictive mean and variance at a point in domain units. Points
    /// outside the domain are extrapolated and flagged.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        ensure_len(self.p(), x.len())?;
        let u = self.domain.to_unit_cube_unchecked(x);
        Ok(self.predict_unit(&u, !self.domain.contains(x)))
    }

    pub(crate) fn predict_unit(&self, u: &[f64], extrapolated: bool) -> Prediction {
        let r = self.cross_correlation(u);
        let h = DVector::from_vec(self.trend.regressors(u));
        let mean = h.dot(&self.fac.beta) + r.dot(&self.fac.alpha);
        let variance = self.posterior_variance_with(&h, &r).max(0.0);
        Prediction {
            mean,
            variance,
            extrapolated,
        }
    }

    /// `sigma^2 (1 - r' R^-1 r + u' A^-1 u)` with `u = h - H' R^-1 r`, for
    /// arbitrary regressor and correlation vectors; not clamped.
    pub(crate) fn posterior_variance_with(&self, h: &DVector<f64>, r: &DVector<f64>) -> f64 {
        let v = self
            .fac
            .chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("cholesky factor has a positive diagonal");
        let w = h - self.fac.rinv_h.transpose() * r;
        let trend_term = w.dot(&(&self.fac.a_inv * &w));
        self.fac.sigma2 * (1.0 - v.norm_squared() + trend_term)
    }

    /// Squared norm of the weights, stored alongside a serialised model and
    /// compared on load.
    pub fn alpha_checksum(&self) -> f64 {
        checksum(&self.fac.alpha)
    }

    pub fn to_doc(&self) -> GpModelDoc {
        GpModelDoc {
            domain: self.domain.clone(),
            trend: self.trend,
            beta: self.fac.beta.iter().copied().collect(),
            lengthscales: self.kernel.lengthscales.clone(),
            nugget: self.kernel.nugget,
            sigma2: self.fac.sigma2,
            inputs: self.x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            outputs: self.f.iter().copied().collect(),
            alpha_checksum: self.alpha_checksum(),
        }
    }

    /// Rebuilds a model from its serialised form, refactorising and checking
    /// the stored weight checksum.
    pub fn from_doc(doc: &GpModelDoc) -> Result<Self> {
        let p = doc.domain.len();
        let n = doc.inputs.len();
        for row in &doc.inputs {
            ensure_len(p, row.len())?;
        }
        ensure_len(n, doc.outputs.len())?;
        let x = DMatrix::from_fn(n, p, |i, j| doc.inputs[i][j]);
        let f = DVector::from_column_slice(&doc.outputs);
        let h = regression_matrix(&x, doc.trend);
        let kernel = KernelSpec::new(doc.lengthscales.clone(), doc.nugget)?;
        ensure_len(p, kernel.lengthscales.len())?;
        let fac = factorize(&x, &f, &h, &kernel)
            .ok_or_else(|| Error::Numerical("stored model cannot be refactorised".into()))?;
        let got = checksum(&fac.alpha);
        if (got - doc.alpha_checksum).abs() > 1e-8 * got.max(doc.alpha_checksum).max(f64::MIN_POSITIVE) {
            return Err(Error::Checksum(format!(
                "GP weights checksum {got} != stored {}",
                doc.alpha_checksum
            )));
        }
        let r_inv = fac.chol.inverse();
        Ok(Self {
            domain: doc.domain.clone(),
            x,
            f,
            h,
            trend: doc.trend,
            kernel,
            fac,
            r_inv,
        })
    }
}

fn checksum(alpha: &DVector<f64>) -> f64 {
    alpha.norm_squared()
}

/// Serialised form of a [`GpModel`]. Inputs are stored on the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelDoc {
    pub domain: Domain,
    pub trend: TrendKind,
    pub beta: Vec<f64>,
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
    pub sigma2: f64,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub alpha_checksum: f64,
}

impl Serialize for GpModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for GpModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = GpModelDoc::deserialize(d)?;
        GpModel::from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests;
