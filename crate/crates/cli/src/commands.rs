//! Pipeline stages. Each stage reads the artifacts of earlier stages through
//! the run manifest, writes its own, and records them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use emulink::io::{fmt_real, from_json, read_real_table, sha256_hex, to_json_pretty};
use emulink::mvem::fit_mv_on_basis;
use emulink::{DesignMatrix, Domain, Ensemble, LinkedNetwork, MvEmulator, PcBasis, ValidationReport};
use serde::de::DeserializeOwned;

use crate::config::{PipelineConfig, Query};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::pipeline::{self, Band, ComparisonRow, Designs, Projection};

pub const DESIGN: &str = "design";
pub const RUN_ENSEMBLE: &str = "run-ensemble";
pub const FIT: &str = "fit";
pub const VALIDATE: &str = "validate";
pub const LINK: &str = "link";
pub const PROJECT: &str = "project";
pub const COMPARE: &str = "compare";

/// Stages in execution order.
pub const STAGES: [&str; 7] = [DESIGN, RUN_ENSEMBLE, FIT, VALIDATE, LINK, PROJECT, COMPARE];

pub const CONFIG_FILE: &str = "config.json";

const PROJECTION_HEADER: [&str; 10] = [
    "year",
    "linked_mean",
    "linked_sd",
    "composed_mean",
    "composed_sd",
    "mc_mean",
    "mc_sd",
    "mc_mean_se",
    "mc_variance_se",
    "simulation",
];

/// Picks the configuration for a stage: an explicit file, else the copy a
/// previous `design` left in the output directory (not for `design`
/// itself), else the defaults. `seed` overrides the root seed.
pub fn resolve_config(config: Option<&Path>, out: &Path, seed: Option<u64>, stage: &str) -> CliResult<PipelineConfig> {
    let stored = out.join(CONFIG_FILE);
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None if stage != DESIGN && stored.exists() => PipelineConfig::load(&stored)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json_bytes<T: serde::Serialize>(v: &T) -> CliResult<Vec<u8>> {
    Ok(to_json_pretty(v)?.into_bytes())
}

/// A configuration bound to an output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    config_bytes: Vec<u8>,
}

/// Per-coefficient coverage of both emulators on their test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub heat: Vec<f64>,
    pub energy: Vec<f64>,
    pub min_coverage: f64,
}

impl CoverageSummary {
    pub fn passes(&self) -> bool {
        self.heat.iter().chain(&self.energy).all(|&c| c >= self.min_coverage)
    }

    pub fn check(&self) -> CliResult<()> {
        if self.passes() {
            Ok(())
        } else {
            Err(CliError::Threshold(format!(
                "coefficient coverage heat {:?}, energy {:?}; required {}",
                self.heat, self.energy, self.min_coverage
            )))
        }
    }
}

pub fn check_comparison(rows: &[ComparisonRow]) -> CliResult<()> {
    let bad: Vec<i32> = rows.iter().filter(|r| !r.passes()).map(|r| r.year).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "linked sd below composed sd or linked mean off the Monte Carlo mean in years {bad:?}"
        )))
    }
}

impl Workspace {
    pub fn new(cfg: PipelineConfig, out: impl Into<PathBuf>) -> CliResult<Self> {
        cfg.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
        let config_bytes = json_bytes(&cfg)?;
        Ok(Self { cfg, out, config_bytes })
    }

    pub fn config_checksum(&self) -> String {
        sha256_hex(&self.config_bytes)
    }

    pub fn manifest(&self) -> CliResult<RunManifest> {
        let m = RunManifest::load(&self.out)?.ok_or_else(|| CliError::MissingArtifact {
            path: RunManifest::path(&self.out),
            stage: DESIGN,
        })?;
        if m.config_checksum != self.config_checksum() {
            return Err(CliError::Config(format!(
                "configuration differs from the one used to create {}; rerun `design`",
                self.out.display()
            )));
        }
        Ok(m)
    }

    /// Loads the manifest and removes artifacts of `stage` and later stages.
    fn begin(&self, stage: &str) -> CliResult<(RunManifest, Instant)> {
        let mut m = self.manifest()?;
        let at = STAGES.iter().position(|s| *s == stage).expect("known stage");
        m.remove_stages(&self.out, &STAGES[at..])?;
        m.save(&self.out)?;
        Ok((m, Instant::now()))
    }

    fn finish(&self, mut m: RunManifest, stage: &str, t0: Instant) -> CliResult<()> {
        m.timings.insert(stage.to_string(), t0.elapsed().as_secs_f64());
        m.save(&self.out)?;
        log::info!("{stage}: done in {:.2} s", t0.elapsed().as_secs_f64());
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, m: &RunManifest, name: &str, producer: &'static str) -> CliResult<T> {
        let bytes = m.require(&self.out, name, producer)?;
        let text = String::from_utf8(bytes).map_err(|e| emulink::Error::Parse(format!("{name}: {e}")))?;
        Ok(from_json(&text)?)
    }

    fn read_design(&self, m: &RunManifest, name: &str, domain: Domain) -> CliResult<DesignMatrix> {
        let bytes = m.require(&self.out, name, DESIGN)?;
        Ok(DesignMatrix::read_csv(bytes.as_slice(), domain)?)
    }

    fn read_ensemble(&self, m: &RunManifest, name: &str, domain: Domain) -> CliResult<Ensemble> {
        let bytes = m.require(&self.out, name, RUN_ENSEMBLE)?;
        Ok(Ensemble::read_csv(bytes.as_slice(), domain)?)
    }

    fn read_emulators(&self, m: &RunManifest) -> CliResult<(MvEmulator, MvEmulator)> {
        Ok((
            self.read_json(m, "heat_emulator.json", FIT)?,
            self.read_json(m, "energy_emulator.json", FIT)?,
        ))
    }

    /// Space-filling training designs and random test designs.
    pub fn design(&self) -> CliResult<Designs> {
        let t0 = Instant::now();
        if let Some(mut old) = RunManifest::load(&self.out)? {
            old.remove_stages(&self.out, &STAGES)?;
            std::fs::remove_file(RunManifest::path(&self.out)).map_err(|source| CliError::Io {
                path: RunManifest::path(&self.out),
                source,
            })?;
        }
        let mut m = RunManifest::new(self.config_checksum());
        m.write(&self.out, CONFIG_FILE, DESIGN, &self.config_bytes)?;
        let d = pipeline::make_designs(&self.cfg)?;
        for (name, design) in [
            ("heat_design.csv", &d.heat_train),
            ("heat_test_design.csv", &d.heat_test),
            ("energy_design.csv", &d.energy_train),
            ("energy_test_design.csv", &d.energy_test),
        ] {
            let mut buf = Vec::new();
            design.write_csv(&mut buf)?;
            m.write(&self.out, name, DESIGN, &buf)?;
        }
        self.finish(m, DESIGN, t0)?;
        Ok(d)
    }

    /// Runs the simulators over the designs and builds the heat basis that
    /// the energy emulator's inputs are projected on.
    pub fn run_ensemble(&self) -> CliResult<()> {
        let (mut m, t0) = self.begin(RUN_ENSEMBLE)?;
        let heat = self.cfg.heat.domain.clone();
        let joint = self.cfg.joint_domain();
        let designs = Designs {
            heat_train: self.read_design(&m, "heat_design.csv", heat.clone())?,
            heat_test: self.read_design(&m, "heat_test_design.csv", heat)?,
            energy_train: self.read_design(&m, "energy_design.csv", joint.clone())?,
            energy_test: self.read_design(&m, "energy_test_design.csv", joint)?,
        };
        let e = pipeline::run_ensembles(&self.cfg, &designs)?;
        for (name, ens) in [
            ("heat_train.csv", &e.heat_train),
            ("heat_test.csv", &e.heat_test),
            ("energy_train.csv", &e.energy_train),
            ("energy_test.csv", &e.energy_test),
        ] {
            let mut buf = Vec::new();
            ens.write_csv(&mut buf)?;
            m.write(&self.out, name, RUN_ENSEMBLE, &buf)?;
        }
        m.write(&self.out, "heat_basis.json", RUN_ENSEMBLE, &json_bytes(&e.heat_basis)?)?;
        let domain = e.energy_train.design().domain();
        m.write(&self.out, "energy_domain.json", RUN_ENSEMBLE, &json_bytes(domain)?)?;
        log::info!(
            "heat basis keeps {} components ({:.4} of variance)",
            e.heat_basis.q(),
            e.heat_basis.cumulative_fractions()[e.heat_basis.q() - 1]
        );
        self.finish(m, RUN_ENSEMBLE, t0)
    }

    fn energy_domain(&self, m: &RunManifest) -> CliResult<Domain> {
        self.read_json(m, "energy_domain.json", RUN_ENSEMBLE)
    }

    pub fn fit(&self) -> CliResult<()> {
        let (mut m, t0) = self.begin(FIT)?;
        let basis: PcBasis = self.read_json(&m, "heat_basis.json", RUN_ENSEMBLE)?;
        let heat_train = self.read_ensemble(&m, "heat_train.csv", self.cfg.heat.domain.clone())?;
        let energy_train = self.read_ensemble(&m, "energy_train.csv", self.energy_domain(&m)?)?;
        let checksum = basis.checksum();
        let heat = fit_mv_on_basis(&heat_train, basis, &pipeline::heat_options(&self.cfg))?;
        let energy =
            emulink::mvem::fit_mv(&energy_train, &pipeline::energy_options(&self.cfg))?.with_provenance(checksum);
        m.write(&self.out, "heat_emulator.json", FIT, &json_bytes(&heat)?)?;
        m.write(&self.out, "energy_emulator.json", FIT, &json_bytes(&energy)?)?;
        self.finish(m, FIT, t0)
    }

    /// Writes validation records and a coverage table. Falling short of
    /// `min_coverage` is reported through [`CoverageSummary::check`].
    pub fn validate(&self) -> CliResult<CoverageSummary> {
        let (mut m, t0) = self.begin(VALIDATE)?;
        let (heat, energy) = self.read_emulators(&m)?;
        let heat_test = self.read_ensemble(&m, "heat_test.csv", self.cfg.heat.domain.clone())?;
        let energy_test = self.read_ensemble(&m, "energy_test.csv", self.energy_domain(&m)?)?;
        let reports: [(&str, ValidationReport); 2] = [
            ("heat", heat.validate(&heat_test)?),
            ("energy", energy.validate(&energy_test)?),
        ];
        let mut cov = emulink::io::csv_writer(Vec::new());
        cov.write_record(["emulator", "coefficient", "coverage"])
            .map_err(emulink::Error::from)?;
        for (name, r) in &reports {
            let mut buf = Vec::new();
            r.write_coefficient_csv(&mut buf)?;
            m.write(&self.out, &format!("{name}_validation.csv"), VALIDATE, &buf)?;
            for (k, c) in r.coefficient_coverage.iter().enumerate() {
                cov.write_record([name.to_string(), (k + 1).to_string(), fmt_real(*c)])
                    .map_err(emulink::Error::from)?;
            }
        }
        let cov = cov.into_inner().map_err(|e| emulink::Error::from(e.into_error()))?;
        m.write(&self.out, "coverage.csv", VALIDATE, &cov)?;
        self.finish(m, VALIDATE, t0)?;
        let [(_, h), (_, e)] = reports;
        Ok(CoverageSummary {
            heat: h.coefficient_coverage,
            energy: e.coefficient_coverage,
            min_coverage: self.cfg.min_coverage,
        })
    }

    /// Couples the emulators and checks the network against the simulator
    /// chain at the joint test points.
    pub fn link(&self) -> CliResult<ValidationReport> {
        let (mut m, t0) = self.begin(LINK)?;
        let (heat, energy) = self.read_emulators(&m)?;
        let net = LinkedNetwork::two_layer(heat, energy, 1)?;
        let joint_test = self.read_design(&m, "energy_test_design.csv", self.cfg.joint_domain())?;
        let report = pipeline::validate_linked(&self.cfg, &net, &joint_test)?;
        m.write(&self.out, "network.json", LINK, &json_bytes(&net)?)?;
        let mut buf = Vec::new();
        report.write_coefficient_csv(&mut buf)?;
        m.write(&self.out, "linked_validation.csv", LINK, &buf)?;
        self.finish(m, LINK, t0)?;
        Ok(report)
    }

    /// Linked, composed and Monte Carlo projections at `query`.
    pub fn project(&self, query: &Query) -> CliResult<Projection> {
        let mut cfg = self.cfg.clone();
        cfg.query = *query;
        cfg.validate_query()?;
        let (mut m, t0) = self.begin(PROJECT)?;
        let net: LinkedNetwork = self.read_json(&m, "network.json", LINK)?;
        let p = pipeline::project(&cfg, &net, query)?;
        m.write(&self.out, "query.json", PROJECT, &json_bytes(query)?)?;
        m.write(&self.out, "projection.csv", PROJECT, &projection_csv(&p)?)?;
        self.finish(m, PROJECT, t0)?;
        Ok(p)
    }

    /// Per-year comparison of the projection variants. Failures are
    /// reported through [`check_comparison`].
    pub fn compare(&self) -> CliResult<Vec<ComparisonRow>> {
        let (mut m, t0) = self.begin(COMPARE)?;
        let bytes = m.require(&self.out, "projection.csv", PROJECT)?;
        let p = read_projection(&bytes)?;
        let rows = pipeline::compare(&p);
        let mut w = emulink::io::csv_writer(Vec::new());
        w.write_record(["year", "linked_sd", "composed_sd", "ratio", "mc_z", "pass"])
            .map_err(emulink::Error::from)?;
        for r in &rows {
            w.write_record([
                r.year.to_string(),
                fmt_real(r.linked_sd),
                fmt_real(r.composed_sd),
                fmt_real(r.ratio),
                fmt_real(r.mc_z),
                r.passes().to_string(),
            ])
            .map_err(emulink::Error::from)?;
        }
        let buf = w.into_inner().map_err(|e| emulink::Error::from(e.into_error()))?;
        m.write(&self.out, "comparison.csv", COMPARE, &buf)?;
        self.finish(m, COMPARE, t0)?;
        Ok(rows)
    }

    /// Every stage in order. Threshold failures do not stop the run; they
    /// are returned once all artifacts are written.
    pub fn all(&self, query: &Query) -> CliResult<Vec<CliError>> {
        self.design()?;
        self.run_ensemble()?;
        self.fit()?;
        let mut failures = Vec::new();
        if let Err(e) = self.validate()?.check() {
            failures.push(e);
        }
        self.link()?;
        self.project(query)?;
        if let Err(e) = check_comparison(&self.compare()?) {
            failures.push(e);
        }
        Ok(failures)
    }
}

/// One row per year: mean and sd for each method, Monte Carlo standard
/// errors, and the simulator chain at the query point.
pub fn projection_csv(p: &Projection) -> CliResult<Vec<u8>> {
    let mut w = emulink::io::csv_writer(Vec::new());
    w.write_record(PROJECTION_HEADER).map_err(emulink::Error::from)?;
    for (i, year) in p.years.iter().enumerate() {
        let mut row = vec![year.to_string()];
        row.extend(
            [
                p.linked.mean[i],
                p.linked.sd[i],
                p.composed.mean[i],
                p.composed.sd[i],
                p.mc.mean[i],
                p.mc.sd[i],
                p.mc_mean_se[i],
                p.mc_variance_se[i],
                p.simulation[i],
            ]
            .map(fmt_real),
        );
        w.write_record(&row).map_err(emulink::Error::from)?;
    }
    Ok(w.into_inner().map_err(|e| emulink::Error::from(e.into_error()))?)
}

pub fn read_projection(bytes: &[u8]) -> CliResult<Projection> {
    let (header, rows) = read_real_table(bytes)?;
    if header != PROJECTION_HEADER {
        return Err(emulink::Error::Parse(format!("projection header {header:?}")).into());
    }
    let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[j]).collect() };
    Ok(Projection {
        years: rows.iter().map(|r| r[0] as i32).collect(),
        linked: Band {
            mean: col(1),
            sd: col(2),
        },
        composed: Band {
            mean: col(3),
            sd: col(4),
        },
        mc: Band {
            mean: col(5),
            sd: col(6),
        },
        mc_mean_se: col(7),
        mc_variance_se: col(8),
        simulation: col(9),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_csv_round_trips() {
        let p = Projection {
            years: vec![2021, 2022],
            linked: Band {
                mean: vec![1.0, 2.0],
                sd: vec![0.1, 0.2],
            },
            composed: Band {
                mean: vec![1.0, 2.0],
                sd: vec![0.05, 0.1],
            },
            mc: Band {
                mean: vec![1.0 / 3.0, 2.0],
                sd: vec![0.1, 0.2],
            },
            mc_mean_se: vec![1e-3, 2e-3],
            mc_variance_se: vec![1e-4, 2e-4],
            simulation: vec![1.01, 1.99],
        };
        let bytes = projection_csv(&p).unwrap();
        assert!(!bytes.contains(&b'\r'));
        assert_eq!(read_projection(&bytes).unwrap(), p);
    }

    #[test]
    fn stages_before_design_report_the_missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(PipelineConfig::default(), dir.path()).unwrap();
        match ws.fit() {
            Err(CliError::MissingArtifact { stage, .. }) => assert_eq!(stage, DESIGN),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stored_config_is_used_by_later_stages() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            seed: 99,
            ..PipelineConfig::default()
        };
        Workspace::new(cfg.clone(), dir.path()).unwrap().design().unwrap();
        let again = resolve_config(None, dir.path(), None, FIT).unwrap();
        assert_eq!(again, cfg);
        let fresh = resolve_config(None, dir.path(), None, DESIGN).unwrap();
        assert_eq!(fresh, PipelineConfig::default());
        let seeded = resolve_config(None, dir.path(), Some(5), FIT).unwrap();
        assert_eq!(seeded.seed, 5);
    }
}
