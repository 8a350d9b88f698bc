//! The heat-demand to energy-cost case study, held in memory. The CLI
//! stages persist and reload these values between steps.

use emulink::basis::build_basis;
use emulink::design::{lhc_maximin, random_test_design};
use emulink::linked::{LinkedNetwork, LinkedPrediction, McEstimate};
use emulink::mvem::{fit_mv, fit_mv_on_basis, Record};
use emulink::sim::{energy_cost, heat_demand, HeatModelInput};
use emulink::{DesignMatrix, Dimension, Domain, Ensemble, MvEmulator, MvOptions, PcBasis, ValidationReport};
use rayon::prelude::*;

use crate::config::{PipelineConfig, Query, SeedTag};
use crate::error::CliResult;

/// Annual heat demand for (temperature shift, efficiency, transmission).
pub fn heat_sim(cfg: &PipelineConfig, x: &[f64]) -> emulink::Result<Vec<f64>> {
    let input = HeatModelInput {
        shift: x[0],
        efficiency: x[1],
        transmission: x[2],
    };
    heat_demand(&input, &cfg.scenarios.temperature, &cfg.heat_params)
}

/// Annual operating cost for a demand series and gas-price shift.
pub fn energy_sim(cfg: &PipelineConfig, demand: &[f64], shift_gas: f64) -> emulink::Result<Vec<f64>> {
    energy_cost(
        demand,
        shift_gas,
        &cfg.scenarios.gas_price,
        &cfg.shares,
        &cfg.energy_params,
    )
}

/// Cost of the full simulator chain at a joint input point.
pub fn chain_sim(cfg: &PipelineConfig, x: &[f64]) -> emulink::Result<Vec<f64>> {
    energy_sim(cfg, &heat_sim(cfg, &x[..3])?, x[3])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Designs {
    pub heat_train: DesignMatrix,
    pub heat_test: DesignMatrix,
    /// Joint (shift_t, efficiency, transmission, shift_gas) points.
    pub energy_train: DesignMatrix,
    pub energy_test: DesignMatrix,
}

pub fn make_designs(cfg: &PipelineConfig) -> CliResult<Designs> {
    let joint = cfg.joint_domain();
    Ok(Designs {
        heat_train: lhc_maximin(
            cfg.heat.n_train,
            &cfg.heat.domain,
            cfg.lhc_restarts,
            cfg.seed_for(SeedTag::HeatDesign),
        )?,
        heat_test: random_test_design(cfg.heat.n_test, &cfg.heat.domain, cfg.seed_for(SeedTag::HeatTest))?,
        energy_train: lhc_maximin(
            cfg.energy.n_train,
            &joint,
            cfg.lhc_restarts,
            cfg.seed_for(SeedTag::EnergyDesign),
        )?,
        energy_test: random_test_design(cfg.energy.n_test, &joint, cfg.seed_for(SeedTag::EnergyTest))?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensembles {
    pub heat_train: Ensemble,
    pub heat_test: Ensemble,
    pub heat_basis: PcBasis,
    /// Inputs are the heat coefficients followed by the gas shift.
    pub energy_train: Ensemble,
    pub energy_test: Ensemble,
}

fn labels(cfg: &PipelineConfig) -> Vec<String> {
    cfg.scenarios.temperature.labels()
}

fn heat_ensemble(cfg: &PipelineConfig, d: &DesignMatrix) -> CliResult<Ensemble> {
    Ok(emulink::mvem::run_ensemble(d, labels(cfg), |x| heat_sim(cfg, x))?)
}

/// Input domain of the energy emulator: the range of each heat coefficient
/// over a grid on the heat domain, padded, followed by the gas shift.
pub fn coefficient_domain(cfg: &PipelineConfig, basis: &PcBasis) -> CliResult<Domain> {
    let g = cfg.energy.coefficient_grid;
    let dims = cfg.heat.domain.dims();
    let axis = |k: usize| -> Vec<f64> {
        (0..g)
            .map(|i| dims[k].lower + dims[k].width() * i as f64 / (g - 1) as f64)
            .collect()
    };
    let (a0, a1, a2) = (axis(0), axis(1), axis(2));
    let mut points = Vec::with_capacity(g * g * g);
    for &x0 in &a0 {
        for &x1 in &a1 {
            for &x2 in &a2 {
                points.push([x0, x1, x2]);
            }
        }
    }
    let q = basis.q();
    let coeffs = points
        .par_iter()
        .map(|x| basis.project(&heat_sim(cfg, x)?))
        .collect::<emulink::Result<Vec<_>>>()?;
    let mut lo = vec![f64::INFINITY; q];
    let mut hi = vec![f64::NEG_INFINITY; q];
    for c in &coeffs {
        for k in 0..q {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let pad = cfg.energy.coefficient_padding;
    let mut out: Vec<Dimension> = (0..q)
        .map(|k| {
            let w = (hi[k] - lo[k]).max(f64::MIN_POSITIVE);
            Dimension::new(format!("c{}", k + 1), lo[k] - pad * w, hi[k] + pad * w)
        })
        .collect();
    out.push(Dimension::new(
        "shift_gas",
        cfg.energy.gas_shift_lower,
        cfg.energy.gas_shift_upper,
    ));
    Ok(Domain::new(out)?)
}

/// Runs the heat model at each joint point, projects its output on the heat
/// basis, and runs the energy model on the full demand.
pub fn energy_ensemble(
    cfg: &PipelineConfig,
    joint: &DesignMatrix,
    basis: &PcBasis,
    domain: &Domain,
) -> CliResult<Ensemble> {
    let runs = joint
        .rows()
        .par_iter()
        .map(|x| -> emulink::Result<(Vec<f64>, Vec<f64>)> {
            let demand = heat_sim(cfg, &x[..3])?;
            let mut row: Vec<f64> = basis.project(&demand)?.iter().copied().collect();
            row.push(x[3]);
            Ok((row, energy_sim(cfg, &demand, x[3])?))
        })
        .collect::<emulink::Result<Vec<_>>>()?;
    let (rows, outputs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let design = DesignMatrix::from_rows(&rows, domain.clone())?;
    Ok(Ensemble::from_runs(design, &outputs, labels(cfg))?)
}

pub fn run_ensembles(cfg: &PipelineConfig, d: &Designs) -> CliResult<Ensembles> {
    let heat_train = heat_ensemble(cfg, &d.heat_train)?;
    let heat_test = heat_ensemble(cfg, &d.heat_test)?;
    let heat_basis = build_basis(&heat_train, cfg.heat.truncation)?;
    let domain = coefficient_domain(cfg, &heat_basis)?;
    let energy_train = energy_ensemble(cfg, &d.energy_train, &heat_basis, &domain)?;
    let energy_test = energy_ensemble(cfg, &d.energy_test, &heat_basis, &domain)?;
    Ok(Ensembles {
        heat_train,
        heat_test,
        heat_basis,
        energy_train,
        energy_test,
    })
}

#[derive(Debug, Clone)]
pub struct Emulators {
    pub heat: MvEmulator,
    pub energy: MvEmulator,
}

pub fn heat_options(cfg: &PipelineConfig) -> MvOptions {
    let mut fit = cfg.fit.clone();
    fit.seed = cfg.seed_for(SeedTag::HeatFit);
    MvOptions {
        trend: cfg.heat.trend,
        truncation: cfg.heat.truncation,
        fit,
    }
}

pub fn energy_options(cfg: &PipelineConfig) -> MvOptions {
    let mut fit = cfg.fit.clone();
    fit.seed = cfg.seed_for(SeedTag::EnergyFit);
    MvOptions {
        trend: cfg.energy.trend,
        truncation: cfg.energy.truncation,
        fit,
    }
}

pub fn fit_emulators(cfg: &PipelineConfig, e: &Ensembles) -> CliResult<Emulators> {
    let heat = fit_mv_on_basis(&e.heat_train, e.heat_basis.clone(), &heat_options(cfg))?;
    let energy = fit_mv(&e.energy_train, &energy_options(cfg))?.with_provenance(e.heat_basis.checksum());
    Ok(Emulators { heat, energy })
}

pub fn link(em: &Emulators) -> CliResult<LinkedNetwork> {
    Ok(LinkedNetwork::two_layer(em.heat.clone(), em.energy.clone(), 1)?)
}

/// Linked predictions against the simulator chain at the joint test points.
pub fn validate_linked(
    cfg: &PipelineConfig,
    net: &LinkedNetwork,
    joint_test: &DesignMatrix,
) -> CliResult<ValidationReport> {
    let basis = net.output().basis();
    let results = joint_test
        .rows()
        .par_iter()
        .map(|x| -> emulink::Result<(LinkedPrediction, Vec<f64>)> { Ok((net.predict(x)?, chain_sim(cfg, x)?)) })
        .collect::<emulink::Result<Vec<_>>>()?;
    let mut coefficients = Vec::new();
    let mut outputs = Vec::new();
    for (i, (p, y)) in results.iter().enumerate() {
        let truth = basis.project(y)?;
        for k in 0..basis.q() {
            coefficients.push(Record::new(
                i,
                k,
                p.coeff.means[k],
                p.coeff.variances[k].sqrt(),
                truth[k],
                0.0,
            ));
        }
        for j in 0..basis.l() {
            outputs.push(Record::new(i, j, p.mean[j], p.variance[j].sqrt(), y[j], 0.0));
        }
    }
    Ok(ValidationReport::new(coefficients, outputs, basis.q(), basis.l()))
}

/// Mean and sd per year for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Band {
    fn from_prediction(p: &LinkedPrediction) -> Self {
        Self {
            mean: p.mean.iter().copied().collect(),
            sd: p.variance.iter().map(|v| v.sqrt()).collect(),
        }
    }

    fn from_mc(m: &McEstimate) -> Self {
        Self {
            mean: m.mean.iter().copied().collect(),
            sd: m.variance.iter().map(|v| v.sqrt()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub years: Vec<i32>,
    pub linked: Band,
    pub composed: Band,
    pub mc: Band,
    pub mc_mean_se: Vec<f64>,
    pub mc_variance_se: Vec<f64>,
    /// The simulator chain run at the query point.
    pub simulation: Vec<f64>,
}

pub fn query_point(q: &Query) -> [f64; 4] {
    [q.shift_t, q.efficiency, q.transmission, q.shift_gas]
}

pub fn project(cfg: &PipelineConfig, net: &LinkedNetwork, q: &Query) -> CliResult<Projection> {
    let x = query_point(q);
    let linked = net.predict(&x)?;
    let composed = net.predict_composed(&x)?;
    let mc = net.mc_predict(&x, cfg.monte_carlo.samples, cfg.seed_for(SeedTag::MonteCarlo))?;
    Ok(Projection {
        years: cfg.years().to_vec(),
        linked: Band::from_prediction(&linked),
        composed: Band::from_prediction(&composed),
        mc: Band::from_mc(&mc),
        mc_mean_se: mc.mean_se.iter().copied().collect(),
        mc_variance_se: mc.variance_se.iter().copied().collect(),
        simulation: chain_sim(cfg, &x)?,
    })
}

/// Linked sd may not fall below composed sd by more than this fraction.
pub const RATIO_FLOOR: f64 = 1.0 - 1e-9;
/// Largest accepted gap between linked and MC means, in MC standard errors.
pub const MAX_MC_Z: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub year: i32,
    pub linked_sd: f64,
    pub composed_sd: f64,
    pub ratio: f64,
    pub mc_z: f64,
}

impl ComparisonRow {
    pub fn passes(&self) -> bool {
        self.ratio >= RATIO_FLOOR && self.mc_z <= MAX_MC_Z
    }
}

pub fn compare(p: &Projection) -> Vec<ComparisonRow> {
    p.years
        .iter()
        .enumerate()
        .map(|(i, &year)| {
            let (ls, cs) = (p.linked.sd[i], p.composed.sd[i]);
            let ratio = if cs > 0.0 {
                ls / cs
            } else if ls > 0.0 {
                f64::INFINITY
            } else {
                1.0
            };
            let gap = (p.linked.mean[i] - p.mc.mean[i]).abs();
            let mc_z = if p.mc_mean_se[i] > 0.0 {
                gap / p.mc_mean_se[i]
            } else if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            ComparisonRow {
                year,
                linked_sd: ls,
                composed_sd: cs,
                ratio,
                mc_z,
            }
        })
        .collect()
}

/// Every stage of the case study, in memory.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub designs: Designs,
    pub ensembles: Ensembles,
    pub emulators: Emulators,
    pub heat_report: ValidationReport,
    pub energy_report: ValidationReport,
    pub linked_report: ValidationReport,
    pub network: LinkedNetwork,
    pub projection: Projection,
    pub comparison: Vec<ComparisonRow>,
}

pub fn run_case_study(cfg: &PipelineConfig) -> CliResult<CaseStudy> {
    cfg.validate()?;
    let designs = make_designs(cfg)?;
    let ensembles = run_ensembles(cfg, &designs)?;
    let emulators = fit_emulators(cfg, &ensembles)?;
    let heat_report = emulators.heat.validate(&ensembles.heat_test)?;
    let energy_report = emulators.energy.validate(&ensembles.energy_test)?;
    let network = link(&emulators)?;
    let linked_report = validate_linked(cfg, &network, &designs.energy_test)?;
    let projection = project(cfg, &network, &cfg.query)?;
    let comparison = compare(&projection);
    Ok(CaseStudy {
        designs,
        ensembles,
        emulators,
        heat_report,
        energy_report,
        linked_report,
        network,
        projection,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn projection(linked_sd: Vec<f64>, composed_sd: Vec<f64>) -> Projection {
        let n = linked_sd.len();
        let band = |sd: Vec<f64>| Band {
            mean: vec![10.0; n],
            sd,
        };
        Projection {
            years: (2021..2021 + n as i32).collect(),
            linked: band(linked_sd),
            composed: band(composed_sd),
            mc: band(vec![1.0; n]),
            mc_mean_se: vec![0.1; n],
            mc_variance_se: vec![0.1; n],
            simulation: vec![10.0; n],
        }
    }

    #[test]
    fn equal_bands_give_unit_ratios() {
        let rows = compare(&projection(vec![2.0, 3.0, 0.0], vec![2.0, 3.0, 0.0]));
        assert!(rows.iter().all(|r| r.ratio == 1.0 && r.mc_z == 0.0 && r.passes()));
    }

    #[test]
    fn narrower_linked_band_fails() {
        let rows = compare(&projection(vec![2.0, 2.9], vec![2.0, 3.0]));
        assert!(rows[0].passes());
        assert!(!rows[1].passes());
    }

    #[test]
    fn mean_gap_is_measured_in_standard_errors() {
        let mut p = projection(vec![1.0], vec![1.0]);
        p.mc.mean[0] = 10.5;
        let rows = compare(&p);
        assert!((rows[0].mc_z - 5.0).abs() < 1e-12);
        assert!(!rows[0].passes());
    }
}
