//! `gpassm`: run the intersection experiment and write its CSV exports.
//!
//! Exit codes: 0 success, 1 config or usage error, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpassm::export::{export_field, export_results, Manifest};
use gpassm::harness::rmse_by_vehicle;
use gpassm::oracle::run_toy_checks;
use gpassm::{field_after, run_experiment_with, summarize, Error, ExperimentSetup, RunOptions, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "gpassm",
    version,
    about = "Track vehicles while learning a shared acceleration field"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every simulation and write all CSVs plus a manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        vehicles: Option<usize>,
        /// Skip the augmented filter; its columns are written as NaN.
        #[arg(long)]
        baseline_only: bool,
    },
    /// Export the learned field of the first simulation after K vehicles.
    Field {
        #[command(flatten)]
        common: Common,
        /// Defaults to every vehicle.
        #[arg(long, value_name = "K")]
        after_vehicle: Option<usize>,
    },
    /// Parse and check a config file, then print the effective settings.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare the filter against dense reference implementations on toy grids.
    OracleCheck {
        #[arg(long, default_value_t = 2020)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &Error) -> ExitCode {
    if err.is_numerical() {
        ExitCode::from(2)
    } else {
        ExitCode::from(1)
    }
}

fn simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    runs: Option<usize>,
    vehicles: Option<usize>,
    baseline_only: bool,
) -> gpassm::Result<()> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    if let Some(m) = runs {
        cfg.n_runs = m;
    }
    if let Some(n) = vehicles {
        cfg.n_vehicles = n;
    }
    cfg.validate()?;
    let setup = ExperimentSetup::new(&cfg)?;
    let options = RunOptions {
        baseline_only,
        ..RunOptions::default()
    };
    let result = run_experiment_with(&setup, options)?;
    export_results(&result, &setup, out)?;

    let s = summarize(&result);
    println!(
        "runs: {}  vehicles: {}  inducing points: {}",
        s.runs,
        cfg.n_vehicles,
        setup.grid.len()
    );
    println!("{:<22} {:>10} {:>10}", "RMSE [m]", "gpassm", "cv");
    println!(
        "{:<22} {:>10.4} {:>10.4}",
        "all vehicles", s.mean_rmse_gpassm, s.mean_rmse_cv
    );
    println!(
        "{:<22} {:>10.4} {:>10.4}",
        "first per path", s.first_cohort_gpassm, s.first_cohort_cv
    );
    println!(
        "{:<22} {:>10.4} {:>10.4}",
        "last per path", s.last_cohort_gpassm, s.last_cohort_cv
    );
    if !baseline_only {
        println!(
            "last-per-path cohort better than cv in {}/{} runs",
            s.runs_last_cohort_improved, s.runs
        );
    }
    let per_vehicle = rmse_by_vehicle(&result);
    if let (Some(first), Some(last)) = (per_vehicle.first(), per_vehicle.last()) {
        println!(
            "vehicle {} -> {}: gpassm {:.4} -> {:.4}",
            first.0 + 1,
            last.0 + 1,
            first.1,
            last.1
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn field(config: &Path, out: &Path, after_vehicle: Option<usize>) -> gpassm::Result<()> {
    let cfg = ScenarioConfig::load(config)?;
    let setup = ExperimentSetup::new(&cfg)?;
    let k = after_vehicle.unwrap_or(cfg.n_vehicles);
    let rows = field_after(&setup, k)?;
    let mut manifest = Manifest::new(&cfg);
    manifest.field_after_vehicle = Some(k);
    export_field(&rows, &setup, out, &manifest)?;
    println!(
        "field after {k} vehicles: {} inducing points -> {}",
        rows.len(),
        out.display()
    );
    Ok(())
}

fn validate_config(config: &Path) -> gpassm::Result<()> {
    let cfg = ScenarioConfig::load(config)?;
    let setup = ExperimentSetup::new(&cfg)?;
    print!("{}", cfg.to_toml_string());
    println!("# inducing points: {}", setup.grid.len());
    Ok(())
}

fn oracle_check(seed: u64) -> gpassm::Result<bool> {
    let checks = run_toy_checks(seed)?;
    let mut ok = true;
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<52} max error {:.3e} (tolerance {:.0e})",
            c.name, c.max_error, c.tolerance
        );
        ok &= c.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap would exit 2, which is reserved for numerical failures
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Simulate {
            common,
            seed,
            runs,
            vehicles,
            baseline_only,
        } => simulate(&common.config, &common.out, seed, runs, vehicles, baseline_only),
        Command::Field { common, after_vehicle } => field(&common.config, &common.out, after_vehicle),
        Command::ValidateConfig { config } => validate_config(&config),
        Command::OracleCheck { seed } => match oracle_check(seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(2),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
