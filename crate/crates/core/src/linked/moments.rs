//! Gaussian expectations of squared-exponential correlations, and the
//! linked moments of a GP whose inputs are Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::GaussianVector;
use crate::error::{ensure_len, Error, Result};
use crate::gp::{GpModel, TrendKind};
use crate::mvem::MvEmulator;

/// `E[r(W, w)]` for `W ~ N(m, v)` and `r(x, w) = exp(-(x - w)^2 / delta^2)`.
pub fn xi_factor(m: f64, v: f64, delta: f64, w: f64) -> f64 {
    let d2 = delta * delta;
    (1.0 + 2.0 * v / d2).sqrt().recip() * (-(m - w).powi(2) / (d2 + 2.0 * v)).exp()
}

/// `E[r(W, a) r(W, b)]` for one lengthscale.
pub fn zeta_factor(m: f64, v: f64, delta: f64, a: f64, b: f64) -> f64 {
    let d2 = delta * delta;
    let c = 0.5 * (a + b);
    (1.0 + 4.0 * v / d2).sqrt().recip()
        * (-(a - b).powi(2) / (2.0 * d2)).exp()
        * (-(m - c).powi(2) / (0.5 * d2 + 2.0 * v)).exp()
}

/// `E[W r(W, w)]`.
pub fn psi_factor(m: f64, v: f64, delta: f64, w: f64) -> f64 {
    let d2 = delta * delta;
    xi_factor(m, v, delta, w) * (m * d2 + 2.0 * v * w) / (d2 + 2.0 * v)
}

/// `E[r_a(W, a) r_b(W, b)]` where the two correlations have lengthscales
/// `delta_a` and `delta_b`.
pub fn cross_factor(m: f64, v: f64, delta_a: f64, a: f64, delta_b: f64, b: f64) -> f64 {
    let (la, lb) = (delta_a.powi(-2), delta_b.powi(-2));
    let l = la + lb;
    let c = (la * a + lb * b) / l;
    (1.0 + 2.0 * l * v).sqrt().recip()
        * (-la * lb / l * (a - b).powi(2)).exp()
        * (-l * (m - c).powi(2) / (1.0 + 2.0 * l * v)).exp()
}

/// `ln(E[r_a r_b] / (E[r_a] E[r_b]))`, arranged so that every term is
/// proportional to `v`.
fn log_ratio(m: f64, v: f64, la: f64, a: f64, lb: f64, b: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let l = la + lb;
    let (pa, pb) = (la * (m - a), lb * (m - b));
    let quad =
        (pa + pb).powi(2) / (1.0 + 2.0 * l * v) - pa * pa / (1.0 + 2.0 * la * v) - pb * pb / (1.0 + 2.0 * lb * v);
    0.5 * (-(2.0 * l * v).ln_1p() + (2.0 * la * v).ln_1p() + (2.0 * lb * v).ln_1p()) + 2.0 * v * quad
}

fn log_xi(m: f64, v: f64, lambda: f64, w: f64) -> f64 {
    -0.5 * (2.0 * lambda * v).ln_1p() - lambda * (m - w).powi(2) / (1.0 + 2.0 * lambda * v)
}

/// Mean and variance of one input coordinate. A zero variance is a fixed
/// input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputMoment {
    pub mean: f64,
    pub var: f64,
}

impl InputMoment {
    pub fn fixed(x: f64) -> Self {
        Self { mean: x, var: 0.0 }
    }
}

/// Expectations over the Gaussian input of the training correlations of one
/// GP, in the model's unit-cube coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    /// `E[r(W, w_t)]`.
    pub xi: DVector<f64>,
    /// `E[r(W, w_t) r(W, w_s)]`.
    pub zeta: DMatrix<f64>,
    /// `E[W_k r(W, w_t)]`, `n x p`.
    pub psi: DMatrix<f64>,
}

fn to_unit(model: &GpModel, inputs: &[InputMoment]) -> Result<Vec<InputMoment>> {
    ensure_len(model.p(), inputs.len())?;
    inputs
        .iter()
        .zip(model.domain().dims())
        .map(|(im, d)| {
            if !(im.mean.is_finite() && im.var >= 0.0 && im.var.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "input {}: mean {} variance {}",
                    d.name, im.mean, im.var
                )));
            }
            let w = d.width();
            Ok(InputMoment {
                mean: (im.mean - d.lower) / w,
                var: im.var / (w * w),
            })
        })
        .collect()
}

pub fn kernel_moments(model: &GpModel, inputs: &[InputMoment]) -> Result<KernelMoments> {
    let u = to_unit(model, inputs)?;
    let x = model.unit_inputs();
    let ls = model.lengthscales();
    let n = model.n();
    let xi = DVector::from_fn(n, |t, _| {
        u.iter()
            .enumerate()
            .map(|(k, im)| xi_factor(im.mean, im.var, ls[k], x[(t, k)]))
            .product()
    });
    let zeta = DMatrix::from_fn(n, n, |t, s| {
        u.iter()
            .enumerate()
            .map(|(k, im)| zeta_factor(im.mean, im.var, ls[k], x[(t, k)], x[(s, k)]))
            .product()
    });
    let psi = DMatrix::from_fn(n, u.len(), |t, k| {
        u.iter()
            .enumerate()
            .map(|(j, im)| {
                if j == k {
                    psi_factor(im.mean, im.var, ls[j], x[(t, j)])
                } else {
                    xi_factor(im.mean, im.var, ls[j], x[(t, j)])
                }
            })
            .product()
    });
    Ok(KernelMoments { xi, zeta, psi })
}

/// Per-model pieces reused across the coefficient covariance.
struct Parts<'a> {
    model: &'a GpModel,
    lambda: Vec<f64>,
    xi: DVector<f64>,
    /// `Cov(W_k, r(W, w_t))`, `n x p`.
    dxi: DMatrix<f64>,
    /// `dxi^T alpha`.
    dxi_alpha: DVector<f64>,
    mean: f64,
}

impl<'a> Parts<'a> {
    fn new(model: &'a GpModel, u: &[InputMoment]) -> Self {
        let x = model.unit_inputs();
        let lambda: Vec<f64> = model.lengthscales().iter().map(|d| d.powi(-2)).collect();
        let n = model.n();
        let xi = DVector::from_fn(n, |t, _| {
            u.iter()
                .enumerate()
                .map(|(k, im)| log_xi(im.mean, im.var, lambda[k], x[(t, k)]))
                .sum::<f64>()
                .exp()
        });
        let dxi = DMatrix::from_fn(n, u.len(), |t, k| {
            let (m, v, l) = (u[k].mean, u[k].var, lambda[k]);
            xi[t] * 2.0 * l * v * (x[(t, k)] - m) / (1.0 + 2.0 * l * v)
        });
        let dxi_alpha = dxi.transpose() * model.alpha();
        let eh = expected_regressors(model.trend(), u);
        let mean = eh.dot(model.beta()) + xi.dot(model.alpha());
        Self {
            model,
            lambda,
            xi,
            dxi,
            dxi_alpha,
            mean,
        }
    }

    /// `Cov(r(W, w_t), r'(W, w'_s))` against another model on the same input.
    fn cov_rr(&self, other: &Parts, u: &[InputMoment]) -> DMatrix<f64> {
        let (xa, xb) = (self.model.unit_inputs(), other.model.unit_inputs());
        DMatrix::from_fn(self.model.n(), other.model.n(), |t, s| {
            let lr: f64 = u
                .iter()
                .enumerate()
                .map(|(k, im)| log_ratio(im.mean, im.var, self.lambda[k], xa[(t, k)], other.lambda[k], xb[(s, k)]))
                .sum();
            self.xi[t] * other.xi[s] * lr.exp_m1()
        })
    }

    /// `Cov(h(W), r(W, w_t))`, `m x n`.
    fn cov_hr(&self) -> DMatrix<f64> {
        let m = self.model.trend().n_coeffs(self.model.p());
        let mut c = DMatrix::zeros(m, self.model.n());
        if m > 1 {
            c.rows_mut(1, m - 1).copy_from(&self.dxi.transpose());
        }
        c
    }

    /// `Cov(mu(W), mu'(W))` for the two posterior mean functions.
    fn cov_mean(&self, other: &Parts, u: &[InputMoment], crr: &DMatrix<f64>) -> f64 {
        let (ba, bb) = (self.model.beta(), other.model.beta());
        let (aa, ab) = (self.model.alpha(), other.model.alpha());
        let mut c = (aa.transpose() * crr * ab)[(0, 0)];
        if self.model.trend() == TrendKind::Linear {
            for k in 0..u.len() {
                c += ba[k + 1] * other.dxi_alpha[k];
            }
        }
        if other.model.trend() == TrendKind::Linear {
            for k in 0..u.len() {
                c += bb[k + 1] * self.dxi_alpha[k];
            }
        }
        if self.model.trend() == TrendKind::Linear && other.model.trend() == TrendKind::Linear {
            for (k, im) in u.iter().enumerate() {
                c += ba[k + 1] * bb[k + 1] * im.var;
            }
        }
        c
    }

    /// `E[s^2(W)]`, the posterior variance averaged over the input.
    fn expected_variance(&self, u: &[InputMoment], crr: &DMatrix<f64>) -> f64 {
        let g = self.model.rinv_h();
        let r_inv = self.model.r_inv();
        let a_inv = self.model.a_inv();
        let m = g.ncols();
        let eh = expected_regressors(self.model.trend(), u);
        let mut chh = DMatrix::zeros(m, m);
        if m > 1 {
            for (k, im) in u.iter().enumerate() {
                chh[(k + 1, k + 1)] = im.var;
            }
        }
        let chr_g = self.cov_hr() * g;
        let cov_u = chh - &chr_g - chr_g.transpose() + g.transpose() * crr * g;
        let at_mean = self.model.posterior_variance_with(&eh, &self.xi);
        let spread = -r_inv.component_mul(crr).sum() + a_inv.component_mul(&cov_u).sum();
        at_mean + self.model.sigma2() * spread
    }
}

fn expected_regressors(trend: TrendKind, u: &[InputMoment]) -> DVector<f64> {
    let means: Vec<f64> = u.iter().map(|im| im.mean).collect();
    DVector::from_vec(trend.regressors(&means))
}

/// Moments of a multivariate emulator's output under Gaussian inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkedPrediction {
    /// Marginal moments of the coefficients.
    pub coeff: GaussianVector,
    /// Full coefficient covariance; off-diagonal terms come from the shared
    /// random input.
    pub coeff_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub extrapolated: bool,
}

impl LinkedPrediction {
    pub fn sd(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }
}

const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

/// Closed-form output moments of `em` when its inputs are independent
/// Gaussians given in domain units.
pub fn linked_moments(em: &MvEmulator, inputs: &[InputMoment]) -> Result<LinkedPrediction> {
    let first = &em.models()[0];
    let u = to_unit(first, inputs)?;
    let means: Vec<f64> = inputs.iter().map(|im| im.mean).collect();
    let extrapolated = !em.domain().contains(&means);
    if u.iter().all(|im| im.var == 0.0) {
        let p = em.predict_mv(&means)?;
        return Ok(LinkedPrediction {
            coeff_cov: DMatrix::from_diagonal(&DVector::from_column_slice(&p.coeff.variances)),
            coeff: p.coeff,
            mean: p.mean,
            variance: p.variance,
            extrapolated,
        });
    }
    let parts: Vec<Parts> = em.models().iter().map(|m| Parts::new(m, &u)).collect();
    let q = parts.len();
    let mut cov = DMatrix::zeros(q, q);
    for i in 0..q {
        for j in i..q {
            let crr = parts[i].cov_rr(&parts[j], &u);
            let mut c = parts[i].cov_mean(&parts[j], &u, &crr);
            if i == j {
                c += parts[i].expected_variance(&u, &crr);
                let tol = NEGATIVE_VARIANCE_TOL * (1.0 + parts[i].model.sigma2());
                if c < -tol || !c.is_finite() {
                    return Err(Error::Numerical(format!(
                        "linked variance {c} for coefficient {}",
                        i + 1
                    )));
                }
                if c < 0.0 {
                    log::warn!("clamping linked variance {c} to zero for coefficient {}", i + 1);
                    c = 0.0;
                }
            }
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let coeff_means: Vec<f64> = parts.iter().map(|p| p.mean).collect();
    let (mean, variance) = em.basis().reconstruct_moments_cov(&coeff_means, &cov)?;
    Ok(LinkedPrediction {
        coeff: GaussianVector {
            means: coeff_means,
            variances: cov.diagonal().iter().copied().collect(),
        },
        coeff_cov: cov,
        mean,
        variance,
        extrapolated,
    })
}
