//! The two case-study simulators: a degree-day heat-demand model and a
//! seasonal-share gas-boiler cost model, plus the scenario series that drive
//! them.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

pub const DAYS_PER_YEAR: usize = 365;
/// Day of year (0-based) with the coldest synthetic temperature: 15 January.
const COLDEST_DAY: f64 = 14.0;

/// Low/central/high projections of an annual quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SeriesRepr", into = "SeriesRepr")]
pub struct ScenarioSeries {
    years: Vec<i32>,
    low: Vec<f64>,
    central: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    years: Vec<i32>,
    low: Vec<f64>,
    central: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<SeriesRepr> for ScenarioSeries {
    type Error = Error;
    fn try_from(r: SeriesRepr) -> Result<Self> {
        ScenarioSeries::new(r.years, r.low, r.central, r.high)
    }
}

impl From<ScenarioSeries> for SeriesRepr {
    fn from(s: ScenarioSeries) -> Self {
        SeriesRepr {
            years: s.years,
            low: s.low,
            central: s.central,
            high: s.high,
        }
    }
}

impl ScenarioSeries {
    pub fn new(years: Vec<i32>, low: Vec<f64>, central: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if years.is_empty() {
            return Err(Error::InvalidArgument("empty scenario series".into()));
        }
        ensure_len(years.len(), low.len())?;
        ensure_len(years.len(), central.len())?;
        ensure_len(years.len(), high.len())?;
        if years.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("years must be strictly increasing".into()));
        }
        if low.iter().chain(&central).chain(&high).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("scenario values must be finite".into()));
        }
        Ok(Self {
            years,
            low,
            central,
            high,
        })
    }

    /// Central path linear from `start` to `end`; high/low offset by
    /// `spread` (absolute) or scaled by `1 +- spread` (relative).
    pub fn linear(first_year: i32, last_year: i32, start: f64, end: f64, spread: Spread) -> Result<Self> {
        if last_year <= first_year {
            return Err(Error::InvalidArgument("last year must follow first year".into()));
        }
        let years: Vec<i32> = (first_year..=last_year).collect();
        let span = (last_year - first_year) as f64;
        let central: Vec<f64> = years
            .iter()
            .map(|&y| start + (end - start) * (y - first_year) as f64 / span)
            .collect();
        let (low, high) = match spread {
            Spread::Absolute(d) => (
                central.iter().map(|c| c - d).collect(),
                central.iter().map(|c| c + d).collect(),
            ),
            Spread::Relative(r) => (
                central.iter().map(|c| c * (1.0 - r)).collect(),
                central.iter().map(|c| c * (1.0 + r)).collect(),
            ),
        };
        Self::new(years, low, central, high)
    }

    /// Annual mean surface temperature, 2021-2050: central warming 9.5 to
    /// 11.5 degC, high/low +-1.2 degC.
    pub fn default_temperature() -> Self {
        Self::linear(2021, 2050, 9.5, 11.5, Spread::Absolute(1.2)).expect("valid defaults")
    }

    /// Gas price per kWh, 2021-2050: central 0.05 to 0.08, high/low +-30%.
    pub fn default_gas_price() -> Self {
        Self::linear(2021, 2050, 0.05, 0.08, Spread::Relative(0.3)).expect("valid defaults")
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn central(&self) -> &[f64] {
        &self.central
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn labels(&self) -> Vec<String> {
        self.years.iter().map(|y| y.to_string()).collect()
    }

    /// Piecewise-linear path between scenarios: shift 0 is central, +1 high,
    /// -1 low.
    pub fn interpolate(&self, shift: f64) -> Result<Vec<f64>> {
        if !(-1.0..=1.0).contains(&shift) {
            return Err(Error::OutOfRange(format!("shift {shift} not in [-1, 1]")));
        }
        let target = if shift >= 0.0 { &self.high } else { &self.low };
        let w = shift.abs();
        Ok(self.central.iter().zip(target).map(|(c, t)| c + w * (t - c)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spread {
    Absolute(f64),
    Relative(f64),
}

/// Sum of shortfalls below `base` (degC day).
pub fn degree_days(daily_temps: &[f64], base: f64) -> f64 {
    daily_temps.iter().map(|t| (base - t).max(0.0)).sum()
}

/// Deterministic daily temperatures for a year with the given mean: a
/// cosine with its minimum in mid-January.
pub fn daily_profile(annual_mean: f64, amplitude: f64) -> Vec<f64> {
    (0..DAYS_PER_YEAR)
        .map(|d| {
            let phase = 2.0 * std::f64::consts::PI * (d as f64 - COLDEST_DAY) / DAYS_PER_YEAR as f64;
            annual_mean - amplitude * phase.cos()
        })
        .collect()
}

/// Inputs of the heat-demand model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatModelInput {
    /// Temperature scenario shift in [-1, 1].
    pub shift: f64,
    /// Equipment efficiency in (0, 1].
    pub efficiency: f64,
    /// Building transmission coefficient, kW/degC.
    pub transmission: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatParams {
    /// Degree-day base temperature, degC.
    pub base_temperature: f64,
    /// Seasonal amplitude of the synthetic daily profile, degC.
    pub amplitude: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            base_temperature: 15.5,
            amplitude: 6.0,
        }
    }
}

/// Annual heat demand in kWh: `H * DD * 24 / E` for every year.
pub fn heat_demand(input: &HeatModelInput, temps: &ScenarioSeries, params: &HeatParams) -> Result<Vec<f64>> {
    if !(input.efficiency > 0.0) {
        return Err(Error::OutOfRange(format!(
            "efficiency {} must be > 0",
            input.efficiency
        )));
    }
    if !(input.transmission >= 0.0) {
        return Err(Error::OutOfRange(format!(
            "transmission {} must be >= 0",
            input.transmission
        )));
    }
    let means = temps.interpolate(input.shift)?;
    Ok(means
        .iter()
        .map(|&m| {
            let dd = degree_days(&daily_profile(m, params.amplitude), params.base_temperature);
            input.transmission * dd * 24.0 / input.efficiency
        })
        .collect())
}

/// Share of annual heat demand by season (winter, spring, summer, autumn)
/// and by day/night period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SharesRepr", into = "SharesRepr")]
pub struct SeasonShares {
    day: [f64; 4],
    night: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct SharesRepr {
    day: [f64; 4],
    night: [f64; 4],
}

impl TryFrom<SharesRepr> for SeasonShares {
    type Error = Error;
    fn try_from(r: SharesRepr) -> Result<Self> {
        SeasonShares::new(r.day, r.night)
    }
}

impl From<SeasonShares> for SharesRepr {
    fn from(s: SeasonShares) -> Self {
        SharesRepr {
            day: s.day,
            night: s.night,
        }
    }
}

/// Metered shares in percent (day row, night row), as published. They add
/// up to 99.93 because of rounding.
pub const METERED_SHARES_PERCENT: ([f64; 4], [f64; 4]) = ([26.5, 17.7, 12.2, 24.5], [4.66, 5.11, 4.12, 5.14]);

impl SeasonShares {
    pub fn new(day: [f64; 4], night: [f64; 4]) -> Result<Self> {
        if day.iter().chain(&night).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("shares must be non-negative".into()));
        }
        let total: f64 = day.iter().chain(&night).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("shares sum to {total}, not 1")));
        }
        Ok(Self { day, night })
    }

    /// Normalises a percentage table so that it sums to one.
    pub fn from_percent(day: [f64; 4], night: [f64; 4]) -> Result<Self> {
        let total: f64 = day.iter().chain(&night).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("percentages sum to zero".into()));
        }
        Self::new(day.map(|v| v / total), night.map(|v| v / total))
    }

    pub fn metered() -> Self {
        let (d, n) = METERED_SHARES_PERCENT;
        Self::from_percent(d, n).expect("valid table")
    }

    pub fn day(&self) -> &[f64; 4] {
        &self.day
    }

    pub fn night(&self) -> &[f64; 4] {
        &self.night
    }
}

impl Default for SeasonShares {
    fn default() -> Self {
        Self::metered()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyParams {
    pub boiler_efficiency: f64,
    pub day_multiplier: f64,
    pub night_multiplier: f64,
    /// Fixed operation and maintenance cost per year.
    pub fixed_om: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            boiler_efficiency: 0.85,
            day_multiplier: 1.0,
            night_multiplier: 0.9,
            fixed_om: 500.0,
        }
    }
}

/// Annual operating cost of meeting `demand` (kWh/yr) with a gas boiler.
pub fn energy_cost(
    demand: &[f64],
    gas_shift: f64,
    prices: &ScenarioSeries,
    shares: &SeasonShares,
    params: &EnergyParams,
) -> Result<Vec<f64>> {
    ensure_len(prices.len(), demand.len())?;
    if demand.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidArgument("demand must be non-negative".into()));
    }
    if !(params.boiler_efficiency > 0.0) {
        return Err(Error::InvalidArgument("boiler efficiency must be > 0".into()));
    }
    let price = prices.interpolate(gas_shift)?;
    Ok(demand
        .iter()
        .zip(&price)
        .map(|(&d, &p)| {
            let fuel = d / params.boiler_efficiency * p;
            let mut cost = 0.0;
            for s in 0..4 {
                cost += shares.day[s] * fuel * params.day_multiplier;
                cost += shares.night[s] * fuel * params.night_multiplier;
            }
            cost + params.fixed_om
        })
        .collect())
}
