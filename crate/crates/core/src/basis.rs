//! Principal-component basis for ensembles of vector-valued runs.
//!
//! Runs are centred on the ensemble mean and divided by one global scale
//! (the standard deviation of all centred entries), so the basis stays
//! orthonormal in the original output units up to that scalar.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, Domain};
use crate::error::{ensure_len, Error, Result};
use crate::io;

/// Training data: design points paired with `l`-vector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    design: DesignMatrix,
    /// `l x n`; column `i` is the output at design point `i`.
    outputs: DMatrix<f64>,
    labels: Vec<String>,
}

impl Ensemble {
    pub fn new(design: DesignMatrix, outputs: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        ensure_len(design.n(), outputs.ncols())?;
        ensure_len(outputs.nrows(), labels.len())?;
        if outputs.nrows() < 2 {
            return Err(Error::InvalidArgument("outputs need at least 2 coordinates".into()));
        }
        if outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("outputs must be finite".into()));
        }
        Ok(Self {
            design,
            outputs,
            labels,
        })
    }

    /// Builds an ensemble from one output vector per design point.
    pub fn from_runs(design: DesignMatrix, runs: &[Vec<f64>], labels: Vec<String>) -> Result<Self> {
        ensure_len(design.n(), runs.len())?;
        let l = labels.len();
        for r in runs {
            ensure_len(l, r.len())?;
        }
        let outputs = DMatrix::from_fn(l, runs.len(), |j, i| runs[i][j]);
        Self::new(design, outputs, labels)
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn l(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn run(&self, i: usize) -> DVector<f64> {
        self.outputs.column(i).into_owned()
    }

    /// Reorders runs (columns) and their design points together.
    pub fn select_runs(&self, idx: &[usize]) -> Self {
        Self {
            design: self.design.select_rows(idx),
            outputs: self.outputs.select_columns(idx),
            labels: self.labels.clone(),
        }
    }

    /// Writes one row per run: inputs first, then the outputs.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = io::csv_writer(w);
        let header: Vec<String> = self
            .design
            .domain()
            .names()
            .into_iter()
            .chain(self.labels.iter().cloned())
            .collect();
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let row: Vec<String> = self
                .design
                .point(i)
                .into_iter()
                .chain(self.outputs.column(i).iter().copied())
                .map(io::fmt_real)
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads an ensemble whose first `domain.len()` columns are inputs.
    pub fn read_csv<R: Read>(r: R, domain: Domain) -> Result<Self> {
        let (header, rows) = io::read_real_table(r)?;
        let p = domain.len();
        if header.len() <= p || header[..p] != domain.names()[..] {
            return Err(Error::Parse(format!(
                "ensemble header {header:?} does not start with {:?}",
                domain.names()
            )));
        }
        let inputs: Vec<Vec<f64>> = rows.iter().map(|r| r[..p].to_vec()).collect();
        let runs: Vec<Vec<f64>> = rows.iter().map(|r| r[p..].to_vec()).collect();
        let design = DesignMatrix::from_rows(&inputs, domain)?;
        Self::from_runs(design, &runs, header[p..].to_vec())
    }
}

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    /// Smallest `q` whose cumulative variance fraction reaches this value.
    Fraction(f64),
    /// Exactly `q` components.
    Components(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Fraction(0.95)
    }
}

/// Independent Gaussian components, given by means and variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianVector {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl GaussianVector {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        ensure_len(means.len(), variances.len())?;
        if variances.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("variances must be >= 0: {variances:?}")));
        }
        Ok(Self { means, variances })
    }

    pub fn deterministic(means: Vec<f64>) -> Self {
        let variances = vec![0.0; means.len()];
        Self { means, variances }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn sds(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }
}

/// Truncated principal-component basis.
#[derive(Debug, Clone, PartialEq)]
pub struct PcBasis {
    mean: DVector<f64>,
    scale: f64,
    /// `l x q`, orthonormal columns.
    basis: DMatrix<f64>,
    /// All singular values of the scaled, centred ensemble, non-increasing.
    singular_values: Vec<f64>,
    /// Per-coordinate variance of what the truncated basis leaves out.
    residual_var: DVector<f64>,
    /// The centred ensemble was identically zero.
    degenerate: bool,
}

/// Builds the basis from the SVD of the scaled, centred ensemble.
pub fn build_basis(ens: &Ensemble, rule: Truncation) -> Result<PcBasis> {
    let (l, n) = (ens.l(), ens.n());
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} runs; need at least 3")));
    }
    let f = ens.outputs();
    let mean = DVector::from_fn(l, |j, _| f.row(j).mean());
    let mut centred = f.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }
    let sum_sq = centred.norm_squared();
    let degenerate = sum_sq == 0.0;
    let scale = if degenerate {
        1.0
    } else {
        (sum_sq / (l * n) as f64).sqrt()
    };

    let scaled_t = (&centred / scale).transpose();
    let svd = scaled_t.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let k = (n - 1).min(l).min(svd.singular_values.len());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let order = &order[..k];
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let mut full = DMatrix::from_fn(l, k, |j, c| v_t[(order[c], j)]);
    // fix signs: largest-magnitude entry of every vector is positive
    for mut col in full.column_iter_mut() {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }

    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let q = match rule {
        Truncation::Components(q) => {
            if q == 0 || q > k {
                return Err(Error::InvalidArgument(format!("cannot keep {q} components out of {k}")));
            }
            q
        }
        Truncation::Fraction(frac) => {
            if !(frac > 0.0 && frac <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "retained fraction {frac} not in (0, 1]"
                )));
            }
            if total == 0.0 {
                1
            } else {
                let mut cum = 0.0;
                let mut q = k;
                for (i, s) in singular_values.iter().enumerate() {
                    cum += s * s;
                    if cum / total >= frac - 1e-12 {
                        q = i + 1;
                        break;
                    }
                }
                q
            }
        }
    };
    if degenerate {
        log::warn!("ensemble outputs are identical; basis carries no variance");
    }

    let basis = full.columns(0, q).into_owned();
    let kept = &basis * (basis.transpose() * &centred);
    let discarded = &centred - kept;
    let residual_var = DVector::from_fn(l, |j, _| discarded.row(j).norm_squared() / (n - 1) as f64);

    Ok(PcBasis {
        mean,
        scale,
        basis,
        singular_values,
        residual_var,
        degenerate,
    })
}

impl PcBasis {
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `l x q` matrix of retained basis vectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn residual_var(&self) -> &DVector<f64> {
        &self.residual_var
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    pub fn l(&self) -> usize {
        self.basis.nrows()
    }

    /// Fraction of total variance carried by the first `k` components.
    pub fn explained_fraction(&self, k: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 0.0;
        }
        let kept: f64 = self.singular_values.iter().take(k).map(|s| s * s).sum();
        (kept / total).clamp(0.0, 1.0)
    }

    pub fn cumulative_fractions(&self) -> Vec<f64> {
        (1..=self.singular_values.len())
            .map(|k| self.explained_fraction(k))
            .collect()
    }

    /// Coefficients `Gamma_q^T (y - mu) / s`.
    pub fn project(&self, y: &[f64]) -> Result<DVector<f64>> {
        ensure_len(self.l(), y.len())?;
        let y = DVector::from_column_slice(y);
        Ok(self.basis.transpose() * ((y - &self.mean) / self.scale))
    }

    /// `mu + s Gamma_q c`.
    pub fn reconstruct(&self, coeff: &[f64]) -> Result<DVector<f64>> {
        ensure_len(self.q(), coeff.len())?;
        Ok(&self.mean + &self.basis * DVector::from_column_slice(coeff) * self.scale)
    }

    /// Mean and per-coordinate variance of the reconstruction when the
    /// coefficients are independent Gaussians; includes the truncation
    /// residual.
    pub fn reconstruct_moments(&self, coeff: &GaussianVector) -> Result<(DVector<f64>, DVector<f64>)> {
        ensure_len(self.q(), coeff.len())?;
        let mean = self.reconstruct(&coeff.means)?;
        let s2 = self.scale * self.scale;
        let var = DVector::from_fn(self.l(), |j, _| {
            s2 * (0..self.q())
                .map(|i| self.basis[(j, i)].powi(2) * coeff.variances[i])
                .sum::<f64>()
                + self.residual_var[j]
        });
        Ok((mean, var))
    }

    /// As [`PcBasis::reconstruct_moments`] but with a full coefficient
    /// covariance matrix.
    pub fn reconstruct_moments_cov(&self, means: &[f64], cov: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        ensure_len(self.q(), cov.nrows())?;
        ensure_len(self.q(), cov.ncols())?;
        let mean = self.reconstruct(means)?;
        let s2 = self.scale * self.scale;
        let var = DVector::from_fn(self.l(), |j, _| {
            let g = self.basis.row(j);
            let quad = (g * cov * g.transpose())[(0, 0)];
            (s2 * quad).max(0.0) + self.residual_var[j]
        });
        Ok((mean, var))
    }

    /// SHA-256 of the serialised basis; used to tie downstream ensembles to
    /// the basis their inputs were projected with.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_vec(&self.to_doc()).expect("basis serialises");
        io::sha256_hex(&json)
    }

    pub fn to_doc(&self) -> PcBasisDoc {
        PcBasisDoc {
            mean: self.mean.iter().copied().collect(),
            scale: self.scale,
            rows: self.l(),
            cols: self.q(),
            basis: self.basis.as_slice().to_vec(),
            singular_values: self.singular_values.clone(),
            residual_var: self.residual_var.iter().copied().collect(),
            degenerate: self.degenerate,
        }
    }

    pub fn from_doc(doc: &PcBasisDoc) -> Result<Self> {
        ensure_len(doc.rows, doc.mean.len())?;
        ensure_len(doc.rows, doc.residual_var.len())?;
        ensure_len(doc.rows * doc.cols, doc.basis.len())?;
        if doc.cols == 0 || !(doc.scale > 0.0) {
            return Err(Error::InvalidArgument("empty basis or non-positive scale".into()));
        }
        let basis = DMatrix::from_column_slice(doc.rows, doc.cols, &doc.basis);
        let gram = basis.transpose() * &basis - DMatrix::identity(doc.cols, doc.cols);
        if gram.amax() > 1e-8 {
            return Err(Error::InvalidArgument("basis vectors are not orthonormal".into()));
        }
        Ok(Self {
            mean: DVector::from_column_slice(&doc.mean),
            scale: doc.scale,
            basis,
            singular_values: doc.singular_values.clone(),
            residual_var: DVector::from_column_slice(&doc.residual_var),
            degenerate: doc.degenerate,
        })
    }
}

/// Serialised basis; `basis` is column-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcBasisDoc {
    pub mean: Vec<f64>,
    pub scale: f64,
    pub rows: usize,
    pub cols: usize,
    pub basis: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub residual_var: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
}

impl Serialize for PcBasis {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PcBasis {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = PcBasisDoc::deserialize(d)?;
        PcBasis::from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::random_test_design;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn domain() -> Domain {
        Domain::from_bounds(&[("a", 0.0, 1.0), ("b", 0.0, 1.0)]).unwrap()
    }

    fn labels(l: usize) -> Vec<String> {
        (0..l).map(|j| format!("y{j}")).collect()
    }

    fn ensemble(n: usize, l: usize, f: impl Fn(&[f64], usize) -> f64) -> Ensemble {
        let d = random_test_design(n, &domain(), 3).unwrap();
        let runs: Vec<Vec<f64>> = d.rows().iter().map(|x| (0..l).map(|j| f(x, j)).collect()).collect();
        Ensemble::from_runs(d, &runs, labels(l)).unwrap()
    }

    fn wiggly(x: &[f64], j: usize) -> f64 {
        let t = j as f64 / 10.0;
        x[0] * t.sin() + x[1] * x[1] * (1.0 + t) + (x[0] * x[1] * t).cos()
    }

    #[test]
    fn too_few_runs() {
        let e = ensemble(2, 5, wiggly);
        assert!(matches!(
            build_basis(&e, Truncation::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_runs_are_degenerate() {
        let e = ensemble(6, 5, |_, j| j as f64);
        let b = build_basis(&e, Truncation::default()).unwrap();
        assert!(b.is_degenerate());
        assert_eq!(b.q(), 1);
        assert!(b.singular_values().iter().all(|&s| s == 0.0));
        assert_eq!(b.explained_fraction(1), 0.0);
        for i in 0..e.n() {
            let y: Vec<f64> = e.run(i).iter().copied().collect();
            assert_eq!(b.project(&y).unwrap()[0], 0.0);
        }
        assert!(b.residual_var().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_one_ensemble_needs_one_component() {
        let e = ensemble(8, 12, |x, j| 2.0 + x[0] * (1.0 + j as f64).ln());
        let b = build_basis(&e, Truncation::default()).unwrap();
        assert_eq!(b.q(), 1);
        assert!((b.explained_fraction(1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let e = ensemble(10, 15, wiggly);
        let b = build_basis(&e, Truncation::Components(3)).unwrap();
        let mu: Vec<f64> = b.mean().iter().copied().collect();
        assert!(b.project(&mu).unwrap().amax() < 1e-12);
        let y: Vec<f64> = (b.mean() + b.vectors().column(0) * b.scale()).iter().copied().collect();
        let c = b.project(&y).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        assert!(matches!(b.project(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn full_basis_reproduces_training_runs() {
        let e = ensemble(9, 20, wiggly);
        let b = build_basis(&e, Truncation::Components(8)).unwrap();
        let g = b.vectors().transpose() * b.vectors() - DMatrix::identity(8, 8);
        assert!(g.amax() <= 1e-10);
        for i in 0..e.n() {
            let y: Vec<f64> = e.run(i).iter().copied().collect();
            let back = b.reconstruct(b.project(&y).unwrap().as_slice()).unwrap();
            for (a, v) in back.iter().zip(&y) {
                assert!((a - v).abs() <= 1e-10 * v.abs().max(1.0));
            }
        }
        assert!(b.residual_var().amax() < 1e-20);
    }

    #[test]
    fn moments_with_zero_variance_and_unit_variance() {
        let e = ensemble(10, 15, wiggly);
        let b = build_basis(&e, Truncation::Components(2)).unwrap();
        let (m, v) = b
            .reconstruct_moments(&GaussianVector::deterministic(vec![0.3, -0.2]))
            .unwrap();
        assert_eq!(m, b.reconstruct(&[0.3, -0.2]).unwrap());
        assert_eq!(v, *b.residual_var());

        let (_, v) = b
            .reconstruct_moments(&GaussianVector::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap())
            .unwrap();
        for j in 0..b.l() {
            let expect =
                b.scale().powi(2) * (b.vectors()[(j, 0)].powi(2) + b.vectors()[(j, 1)].powi(2)) + b.residual_var()[j];
            assert!((v[j] - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn moments_match_sampling() {
        let e = ensemble(12, 10, wiggly);
        let b = build_basis(&e, Truncation::Components(3)).unwrap();
        let coeff = GaussianVector::new(vec![0.4, -1.1, 0.2], vec![0.3, 0.05, 1.7]).unwrap();
        let (mean, var) = b.reconstruct_moments(&coeff).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dists: Vec<Normal<f64>> = coeff
            .means
            .iter()
            .zip(&coeff.variances)
            .map(|(m, v)| Normal::new(*m, v.sqrt()).unwrap())
            .collect();
        let n = 100_000;
        let l = b.l();
        let (mut s1, mut s2) = (vec![0.0; l], vec![0.0; l]);
        for _ in 0..n {
            let c: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng)).collect();
            let y = b.reconstruct(&c).unwrap();
            for j in 0..l {
                s1[j] += y[j];
                s2[j] += y[j] * y[j];
            }
        }
        for j in 0..l {
            let em = s1[j] / n as f64;
            let ev = s2[j] / n as f64 - em * em;
            let se_mean = (ev / n as f64).sqrt();
            assert!((em - mean[j]).abs() <= 3.0 * se_mean, "coord {j}");
            // sample variance of a Gaussian has sd ~ var*sqrt(2/n)
            let model_var = var[j] - b.residual_var()[j];
            let se_var = model_var * (2.0 / n as f64).sqrt();
            assert!((ev - model_var).abs() <= 3.0 * se_var, "coord {j}: {ev} vs {model_var}");
        }
        let _ = rng.random::<f64>();
    }

    #[test]
    fn json_round_trip() {
        let e = ensemble(10, 15, wiggly);
        let b = build_basis(&e, Truncation::default()).unwrap();
        let s = serde_json::to_string(&b).unwrap();
        let back: PcBasis = serde_json::from_str(&s).unwrap();
        assert_eq!(b, back);
        assert_eq!(b.checksum(), back.checksum());
    }

    #[test]
    fn ensemble_csv_round_trip() {
        let e = ensemble(5, 4, wiggly);
        let mut buf = Vec::new();
        e.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"a,b,y0,y1,y2,y3\n"));
        assert_eq!(Ensemble::read_csv(&buf[..], domain()).unwrap(), e);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn basis_invariants(seed in 0u64..500, n in 4usize..14, l in 3usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let runs: Vec<Vec<f64>> = (0..n).map(|_| (0..l).map(|_| rng.random::<f64>() * 10.0).collect()).collect();
            let d = random_test_design(n, &domain(), seed).unwrap();
            let e = Ensemble::from_runs(d, &runs, labels(l)).unwrap();
            let b = build_basis(&e, Truncation::Fraction(0.9)).unwrap();
            let g = b.vectors().transpose() * b.vectors() - DMatrix::identity(b.q(), b.q());
            prop_assert!(g.amax() <= 1e-10);
            prop_assert!(b.singular_values().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
            let fr = b.cumulative_fractions();
            prop_assert!(fr.windows(2).all(|w| w[0] <= w[1] + 1e-15));
            prop_assert!(fr.iter().all(|f| (0.0..=1.0).contains(f)));
            prop_assert!(b.explained_fraction(b.q()) >= 0.9 - 1e-12);
            let cv = GaussianVector::new(vec![0.0; b.q()], vec![0.5; b.q()]).unwrap();
            let (_, v) = b.reconstruct_moments(&cv).unwrap();
            for j in 0..l {
                prop_assert!(v[j] >= b.residual_var()[j]);
            }
        }
    }
}
