//! Multivariate emulator: a principal-component basis plus one independent
//! GP per retained coefficient.

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, Ensemble, GaussianVector, PcBasis, Truncation};
use crate::design::{DesignMatrix, Domain};
use crate::error::{ensure_len, Error, Result};
use crate::gp::{fit_gp, FitOptions, GpModel, TrendKind};
use crate::io;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MvOptions {
    pub trend: TrendKind,
    pub truncation: Truncation,
    pub fit: FitOptions,
}

impl Default for MvOptions {
    fn default() -> Self {
        Self {
            trend: TrendKind::Linear,
            truncation: Truncation::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MvDoc", into = "MvDoc")]
pub struct MvEmulator {
    basis: PcBasis,
    models: Vec<GpModel>,
    provenance: String,
}

#[derive(Serialize, Deserialize)]
struct MvDoc {
    basis: PcBasis,
    models: Vec<GpModel>,
    provenance: String,
}

impl TryFrom<MvDoc> for MvEmulator {
    type Error = Error;
    fn try_from(d: MvDoc) -> Result<Self> {
        MvEmulator::new(d.basis, d.models, d.provenance)
    }
}

impl From<MvEmulator> for MvDoc {
    fn from(m: MvEmulator) -> Self {
        MvDoc {
            basis: m.basis,
            models: m.models,
            provenance: m.provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvPrediction {
    pub coeff: GaussianVector,
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub extrapolated: bool,
}

/// Fits a basis to the ensemble, then one GP per retained coefficient.
pub fn fit_mv(ens: &Ensemble, opts: &MvOptions) -> Result<MvEmulator> {
    let basis = build_basis(ens, opts.truncation)?;
    fit_mv_on_basis(ens, basis, opts)
}

/// Fits coefficient GPs against a basis built earlier from the same ensemble.
pub fn fit_mv_on_basis(ens: &Ensemble, basis: PcBasis, opts: &MvOptions) -> Result<MvEmulator> {
    ensure_len(basis.l(), ens.l())?;
    let coeffs = project_runs(&basis, ens)?;
    let models = (0..basis.q())
        .into_par_iter()
        .map(|i| {
            let f: Vec<f64> = coeffs.iter().map(|c| c[i]).collect();
            fit_gp(ens.design(), &f, opts.trend, &opts.fit)
        })
        .collect::<Result<Vec<_>>>()?;
    MvEmulator::new(basis, models, String::new())
}

fn project_runs(basis: &PcBasis, ens: &Ensemble) -> Result<Vec<DVector<f64>>> {
    (0..ens.n()).map(|i| basis.project(ens.run(i).as_slice())).collect()
}

impl MvEmulator {
    pub fn new(basis: PcBasis, models: Vec<GpModel>, provenance: String) -> Result<Self> {
        ensure_len(basis.q(), models.len())?;
        if let Some(first) = models.first() {
            for m in &models[1..] {
                if m.domain() != first.domain() || m.unit_inputs() != first.unit_inputs() {
                    return Err(Error::InvalidArgument(
                        "coefficient models must share one training design".into(),
                    ));
                }
            }
        }
        Ok(Self {
            basis,
            models,
            provenance,
        })
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn basis(&self) -> &PcBasis {
        &self.basis
    }

    pub fn models(&self) -> &[GpModel] {
        &self.models
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn domain(&self) -> &Domain {
        self.models[0].domain()
    }

    pub fn q(&self) -> usize {
        self.models.len()
    }

    pub fn predict_coefficients(&self, x: &[f64]) -> Result<(GaussianVector, bool)> {
        let preds = self.models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>>>()?;
        let extrapolated = preds.iter().any(|p| p.extrapolated);
        let coeff = GaussianVector {
            means: preds.iter().map(|p| p.mean).collect(),
            variances: preds.iter().map(|p| p.variance).collect(),
        };
        Ok((coeff, extrapolated))
    }

    /// Coefficient moments from the GPs, output moments through the basis.
    pub fn predict_mv(&self, x: &[f64]) -> Result<MvPrediction> {
        let (coeff, extrapolated) = self.predict_coefficients(x)?;
        let (mean, variance) = self.basis.reconstruct_moments(&coeff)?;
        Ok(MvPrediction {
            coeff,
            mean,
            variance,
            extrapolated,
        })
    }

    /// Compares predictions against a held-out ensemble.
    pub fn validate(&self, test: &Ensemble) -> Result<ValidationReport> {
        ensure_len(self.basis.l(), test.l())?;
        if test.design().domain() != self.domain() {
            return Err(Error::InvalidArgument("test design uses a different domain".into()));
        }
        let truths = project_runs(&self.basis, test)?;
        let preds = (0..test.n())
            .into_par_iter()
            .map(|i| self.predict_mv(&test.design().point(i)))
            .collect::<Result<Vec<_>>>()?;
        let (ctol, otol) = self.rounding_tolerances();
        let mut coefficients = Vec::new();
        let mut outputs = Vec::new();
        for (i, (p, truth)) in preds.iter().zip(&truths).enumerate() {
            for k in 0..self.q() {
                coefficients.push(Record::new(
                    i,
                    k,
                    p.coeff.means[k],
                    p.coeff.variances[k].sqrt(),
                    truth[k],
                    ctol[k],
                ));
            }
            let y = test.run(i);
            for j in 0..self.basis.l() {
                outputs.push(Record::new(i, j, p.mean[j], p.variance[j].sqrt(), y[j], otol[j]));
            }
        }
        Ok(ValidationReport::new(coefficients, outputs, self.q(), self.basis.l()))
    }

    /// Absolute slack on the inside test, scaled to the magnitude of the
    /// training coefficients and of the outputs they reconstruct.
    fn rounding_tolerances(&self) -> (Vec<f64>, Vec<f64>) {
        let cmax: Vec<f64> = self.models.iter().map(|m| m.outputs().amax()).collect();
        let g = self.basis.vectors();
        let otol = (0..self.basis.l())
            .map(|j| {
                let span: f64 = (0..self.q()).map(|k| g[(j, k)].abs() * cmax[k]).sum();
                ROUNDING_SLACK * (self.basis.mean()[j].abs() + self.basis.scale() * span)
            })
            .collect();
        (cmax.iter().map(|c| ROUNDING_SLACK * c).collect(), otol)
    }
}

/// Fits on `train` and validates on `test`.
pub fn cross_validate(opts: &MvOptions, train: &Ensemble, test: &Ensemble) -> Result<ValidationReport> {
    fit_mv(train, opts)?.validate(test)
}

const ROUNDING_SLACK: f64 = 1e-9;

/// One prediction against a true value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub point: usize,
    /// Coefficient index or output coordinate.
    pub index: usize,
    pub mean: f64,
    pub sd: f64,
    pub truth: f64,
    pub inside: bool,
}

impl Record {
    /// `inside` is `|truth - mean| <= 2 sd + tol`; `tol` absorbs rounding so
    /// that interpolation at a training point counts as inside.
    pub fn new(point: usize, index: usize, mean: f64, sd: f64, truth: f64, tol: f64) -> Self {
        Self {
            point,
            index,
            mean,
            sd,
            truth,
            inside: (truth - mean).abs() <= 2.0 * sd + tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub coefficients: Vec<Record>,
    pub outputs: Vec<Record>,
    /// Fraction of test points inside the 2-sd band, per coefficient.
    pub coefficient_coverage: Vec<f64>,
    /// Same, per output coordinate.
    pub output_coverage: Vec<f64>,
}

fn coverage(records: &[Record], k: usize) -> Vec<f64> {
    (0..k)
        .map(|i| {
            let (hit, total) = records
                .iter()
                .filter(|r| r.index == i)
                .fold((0usize, 0usize), |(h, t), r| (h + r.inside as usize, t + 1));
            if total == 0 {
                0.0
            } else {
                hit as f64 / total as f64
            }
        })
        .collect()
}

impl ValidationReport {
    pub fn new(coefficients: Vec<Record>, outputs: Vec<Record>, q: usize, l: usize) -> Self {
        let coefficient_coverage = coverage(&coefficients, q);
        let output_coverage = coverage(&outputs, l);
        Self {
            coefficients,
            outputs,
            coefficient_coverage,
            output_coverage,
        }
    }

    pub fn min_coefficient_coverage(&self) -> f64 {
        self.coefficient_coverage.iter().copied().fold(1.0, f64::min)
    }

    /// One row per test point per coefficient.
    pub fn write_coefficient_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = io::csv_writer(w);
        wtr.write_record(["point", "coefficient", "mean", "sd", "truth", "inside"])?;
        for r in &self.coefficients {
            wtr.write_record([
                r.point.to_string(),
                (r.index + 1).to_string(),
                io::fmt_real(r.mean),
                io::fmt_real(r.sd),
                io::fmt_real(r.truth),
                r.inside.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Convenience: evaluates a simulator over a design to make an ensemble.
pub fn run_ensemble<F>(design: &DesignMatrix, labels: Vec<String>, sim: F) -> Result<Ensemble>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let runs = (0..design.n())
        .into_par_iter()
        .map(|i| sim(&design.point(i)))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::from_runs(design.clone(), &runs, labels)
}
