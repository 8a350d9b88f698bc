use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emulink_cli::commands::{self, check_comparison, resolve_config, Workspace};
use emulink_cli::config::Query;
use emulink_cli::error::CliResult;
use emulink_cli::pipeline::{ComparisonRow, Projection};

#[derive(Parser)]
#[command(
    name = "emulink",
    version,
    about = "Linked GP emulators for heat demand and energy cost"
)]
struct Cli {
    /// JSON configuration; defaults to the copy stored in the output
    /// directory, then to built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the root seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log stage progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build training and test designs.
    Design,
    /// Run the simulators over the designs.
    RunEnsemble,
    /// Fit both multivariate emulators.
    Fit,
    /// Check emulator coverage on the test sets.
    Validate,
    /// Couple the emulators into a network.
    Link,
    /// Project costs with linked, composed and Monte Carlo propagation.
    Project(QueryArgs),
    /// Compare the projection variants year by year.
    Compare,
    /// Run every stage.
    All(QueryArgs),
}

/// Query point; unset values come from the configuration.
#[derive(Args)]
struct QueryArgs {
    #[arg(long, allow_hyphen_values = true)]
    shift_t: Option<f64>,
    #[arg(long)]
    efficiency: Option<f64>,
    #[arg(long)]
    transmission: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    shift_gas: Option<f64>,
}

impl QueryArgs {
    fn apply(&self, base: Query) -> Query {
        Query {
            shift_t: self.shift_t.unwrap_or(base.shift_t),
            efficiency: self.efficiency.unwrap_or(base.efficiency),
            transmission: self.transmission.unwrap_or(base.transmission),
            shift_gas: self.shift_gas.unwrap_or(base.shift_gas),
        }
    }
}

fn stage_name(c: &Command) -> &'static str {
    match c {
        Command::Design | Command::All(_) => commands::DESIGN,
        Command::RunEnsemble => commands::RUN_ENSEMBLE,
        Command::Fit => commands::FIT,
        Command::Validate => commands::VALIDATE,
        Command::Link => commands::LINK,
        Command::Project(_) => commands::PROJECT,
        Command::Compare => commands::COMPARE,
    }
}

fn print_coverage(s: &commands::CoverageSummary) {
    for (name, cov) in [("heat", &s.heat), ("energy", &s.energy)] {
        let parts: Vec<String> = cov
            .iter()
            .enumerate()
            .map(|(k, c)| format!("c{}={:.3}", k + 1, c))
            .collect();
        println!("{name} coverage: {} (required {:.2})", parts.join(" "), s.min_coverage);
    }
}

fn print_projection(p: &Projection) {
    println!("year  linked mean (sd)  composed mean (sd)  mc mean (sd)");
    for (i, y) in p.years.iter().enumerate() {
        println!(
            "{y}  {:.1} ({:.1})  {:.1} ({:.1})  {:.1} ({:.1})",
            p.linked.mean[i], p.linked.sd[i], p.composed.mean[i], p.composed.sd[i], p.mc.mean[i], p.mc.sd[i]
        );
    }
}

fn print_comparison(rows: &[ComparisonRow]) {
    let min = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    let max_z = rows.iter().map(|r| r.mc_z).fold(0.0, f64::max);
    let failing = rows.iter().filter(|r| !r.passes()).count();
    println!("sd ratio linked/composed: min {min:.4}; max |linked - mc| / se {max_z:.2}; {failing} failing years");
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = resolve_config(cli.config.as_deref(), &cli.out, cli.seed, stage_name(&cli.command))?;
    let base_query = cfg.query;
    let ws = Workspace::new(cfg, &cli.out)?;
    match &cli.command {
        Command::Design => ws.design().map(|_| ()),
        Command::RunEnsemble => ws.run_ensemble(),
        Command::Fit => ws.fit(),
        Command::Validate => {
            let s = ws.validate()?;
            print_coverage(&s);
            s.check()
        }
        Command::Link => {
            let r = ws.link()?;
            println!("linked coverage: {:?}", r.coefficient_coverage);
            Ok(())
        }
        Command::Project(q) => ws.project(&q.apply(base_query)).map(|p| print_projection(&p)),
        Command::Compare => {
            let rows = ws.compare()?;
            print_comparison(&rows);
            check_comparison(&rows)
        }
        Command::All(q) => {
            let failures = ws.all(&q.apply(base_query))?;
            for f in failures.iter().skip(1) {
                eprintln!("error: {f}");
            }
            match failures.into_iter().next() {
                Some(f) => Err(f),
                None => {
                    println!("all stages completed in {}", ws.out.display());
                    Ok(())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
