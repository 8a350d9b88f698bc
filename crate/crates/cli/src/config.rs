//! Pipeline configuration: one JSON document, every field defaulted.

use std::path::Path;

use emulink::gp::FitOptions;
use emulink::sim::{EnergyParams, HeatParams, ScenarioSeries, SeasonShares};
use emulink::{Domain, TrendKind, Truncation};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every random stage derives its own seed from it.
    pub seed: u64,
    pub heat: HeatStage,
    pub energy: EnergyStage,
    pub scenarios: Scenarios,
    pub heat_params: HeatParams,
    pub energy_params: EnergyParams,
    pub shares: SeasonShares,
    /// GP fitting options; `fit.seed` is replaced per emulator by a seed
    /// derived from `seed`.
    pub fit: FitOptions,
    /// Restarts of the maximin Latin hypercube search.
    pub lhc_restarts: usize,
    pub query: Query,
    pub monte_carlo: MonteCarlo,
    /// Minimum per-coefficient 2-sd coverage accepted by `validate`.
    pub min_coverage: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 20210601,
            heat: HeatStage::default(),
            energy: EnergyStage::default(),
            scenarios: Scenarios::default(),
            heat_params: HeatParams::default(),
            energy_params: EnergyParams::default(),
            shares: SeasonShares::default(),
            fit: FitOptions::default(),
            lhc_restarts: 50,
            query: Query::default(),
            monte_carlo: MonteCarlo::default(),
            min_coverage: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatStage {
    /// Temperature shift, equipment efficiency, transmission (kW/degC).
    pub domain: Domain,
    pub n_train: usize,
    pub n_test: usize,
    pub trend: TrendKind,
    pub truncation: Truncation,
}

impl Default for HeatStage {
    fn default() -> Self {
        Self {
            domain: Domain::from_bounds(&[
                ("shift_t", -1.0, 1.0),
                ("efficiency", 0.5, 1.0),
                ("transmission", 5.0, 20.0),
            ])
            .expect("valid defaults"),
            n_train: 30,
            n_test: 30,
            trend: TrendKind::Linear,
            truncation: Truncation::Components(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyStage {
    pub gas_shift_lower: f64,
    pub gas_shift_upper: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub trend: TrendKind,
    pub truncation: Truncation,
    /// Relative padding of the heat-coefficient ranges that form the energy
    /// emulator's input domain.
    pub coefficient_padding: f64,
    /// Grid points per heat input used to bound the heat coefficients.
    pub coefficient_grid: usize,
}

impl Default for EnergyStage {
    fn default() -> Self {
        Self {
            gas_shift_lower: -1.0,
            gas_shift_upper: 1.0,
            n_train: 30,
            n_test: 30,
            trend: TrendKind::Linear,
            truncation: Truncation::Components(2),
            coefficient_padding: 0.05,
            coefficient_grid: 21,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenarios {
    /// Annual mean surface temperature, degC.
    pub temperature: ScenarioSeries,
    /// Gas price, currency per kWh.
    pub gas_price: ScenarioSeries,
}

impl Default for Scenarios {
    fn default() -> Self {
        Self {
            temperature: ScenarioSeries::default_temperature(),
            gas_price: ScenarioSeries::default_gas_price(),
        }
    }
}

/// Inputs of the projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Query {
    pub shift_t: f64,
    pub efficiency: f64,
    pub transmission: f64,
    pub shift_gas: f64,
}

impl Default for Query {
    fn default() -> Self {
        Self {
            shift_t: 0.0,
            efficiency: 0.75,
            transmission: 12.5,
            shift_gas: 0.0,
        }
    }
}

impl Query {
    pub fn heat_inputs(&self) -> [f64; 3] {
        [self.shift_t, self.efficiency, self.transmission]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarlo {
    pub samples: usize,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        Self { samples: 100_000 }
    }
}

/// Stages that draw random numbers; each gets an independent seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedTag {
    HeatDesign = 1,
    HeatTest = 2,
    EnergyDesign = 3,
    EnergyTest = 4,
    HeatFit = 5,
    EnergyFit = 6,
    MonteCarlo = 7,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.heat.domain.len() != 3 {
            return bad(format!("heat domain has {} inputs; expected 3", self.heat.domain.len()));
        }
        let d = self.heat.domain.dims();
        if d[0].lower < -1.0 || d[0].upper > 1.0 {
            return bad("temperature shift must stay within [-1, 1]".into());
        }
        if !(d[1].lower > 0.0) || d[2].lower < 0.0 {
            return bad("efficiency must be positive and transmission non-negative".into());
        }
        let e = &self.energy;
        if !(e.gas_shift_lower >= -1.0 && e.gas_shift_upper <= 1.0 && e.gas_shift_lower < e.gas_shift_upper) {
            return bad("gas shift range must be a non-empty part of [-1, 1]".into());
        }
        for (name, n) in [("heat.n_train", self.heat.n_train), ("energy.n_train", e.n_train)] {
            if n < 5 {
                return bad(format!("{name} = {n}; need at least 5 runs"));
            }
        }
        if self.heat.n_test == 0 || e.n_test == 0 {
            return bad("test sets must be non-empty".into());
        }
        if !(e.coefficient_padding >= 0.0) || e.coefficient_grid < 2 {
            return bad("coefficient padding must be >= 0 and grid >= 2".into());
        }
        if self.scenarios.temperature.years() != self.scenarios.gas_price.years() {
            return bad("temperature and gas price series cover different years".into());
        }
        if self.lhc_restarts == 0 {
            return bad("lhc_restarts must be >= 1".into());
        }
        if self.monte_carlo.samples < 100 {
            return bad("monte_carlo.samples must be >= 100".into());
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return bad("min_coverage must lie in [0, 1]".into());
        }
        self.validate_query()
    }

    pub fn validate_query(&self) -> CliResult<()> {
        let q = &self.query;
        let heat = self.heat.domain.contains(&q.heat_inputs());
        let gas = q.shift_gas >= self.energy.gas_shift_lower && q.shift_gas <= self.energy.gas_shift_upper;
        if !(heat && gas) {
            return Err(CliError::Config(format!("query {q:?} lies outside the input domains")));
        }
        Ok(())
    }

    pub fn seed_for(&self, tag: SeedTag) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(tag as u64);
        rng.next_u64()
    }

    /// The four inputs sampled when building the energy ensembles.
    pub fn joint_domain(&self) -> Domain {
        let mut dims = self.heat.domain.dims().to_vec();
        dims.push(emulink::Dimension::new(
            "shift_gas",
            self.energy.gas_shift_lower,
            self.energy.gas_shift_upper,
        ));
        Domain::new(dims).expect("validated")
    }

    pub fn years(&self) -> &[i32] {
        self.scenarios.temperature.years()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "heat": {"n_train": 12}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.heat.n_train, 12);
        assert_eq!(cfg.energy, EnergyStage::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn invalid_settings_are_config_errors() {
        let mut cfg = PipelineConfig::default();
        cfg.heat.n_train = 3;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.query.efficiency = 1.5;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.monte_carlo.samples = 10;
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn stage_seeds_are_distinct_and_follow_the_root_seed() {
        let cfg = PipelineConfig::default();
        let tags = [
            SeedTag::HeatDesign,
            SeedTag::HeatTest,
            SeedTag::EnergyDesign,
            SeedTag::EnergyTest,
            SeedTag::HeatFit,
            SeedTag::EnergyFit,
            SeedTag::MonteCarlo,
        ];
        let seeds: Vec<u64> = tags.iter().map(|&t| cfg.seed_for(t)).collect();
        let mut uniq = seeds.clone();
        uniq.sort_unstable();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
        let other = PipelineConfig {
            seed: cfg.seed + 1,
            ..cfg.clone()
        };
        assert_ne!(other.seed_for(SeedTag::HeatDesign), seeds[0]);
        assert_eq!(cfg.seed_for(SeedTag::HeatDesign), seeds[0]);
    }

    #[test]
    fn joint_domain_appends_gas_shift() {
        let d = PipelineConfig::default().joint_domain();
        assert_eq!(d.names(), ["shift_t", "efficiency", "transmission", "shift_gas"]);
    }
}
