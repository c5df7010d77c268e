//! Command-line front end for the flight-control laboratory.
//!
//! Verbs: `run` a configured scenario, `sweep-chi` the lateral output
//! direction grid, `compare` both controllers on one scenario, and
//! `print-trim` the spin equilibrium. A completed flight that ends in a
//! crash still exits 0: the crash is a result, recorded in the artifacts,
//! not a tool failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quadftc::scenario::{
    execute_compare, execute_run, execute_sweep, parse_config, trim_report, Config,
    ControllerChoice, RunArtifacts, ScenarioError, ScenarioKind,
};
use quadftc::stability::admissible_intervals;

#[derive(Parser)]
#[command(name = "quadftc", version, about = "Fault-tolerant quadrotor flight laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file; omit to use the built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the simulation noise seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Override the controller selection.
    #[arg(long, value_name = "NAME")]
    controller: Option<ControllerChoice>,
    /// Override the lateral output direction magnitude [deg].
    #[arg(long, value_name = "X")]
    chi_deg: Option<f64>,
}

impl CommonArgs {
    fn load(&self) -> Result<Config, ScenarioError> {
        let mut config = match &self.config {
            Some(path) => parse_config(path)?,
            None => Config::default(),
        };
        if let Some(seed) = self.seed {
            config.sim.seed = seed;
        }
        if let Some(controller) = self.controller {
            config.controller = controller;
        }
        if let Some(chi_deg) = self.chi_deg {
            config.chi_deg = chi_deg;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configured scenario and write trace and summary files.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for the artifacts.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Classify every tilt-axis direction and write the region table.
    SweepChi {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for the artifacts.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Fly the scenario under both controllers and tabulate the metrics.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory for the artifacts.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
    /// Print the spin equilibrium and axis assessment for the config.
    PrintTrim {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn report_run(which: &str, artifacts: &RunArtifacts) {
    let s = &artifacts.summary;
    println!("wrote {}", artifacts.trace_path.display());
    println!("wrote {}", artifacts.summary_path.display());
    match (&s.crash_cause, s.crash_time) {
        (Some(cause), Some(t)) => {
            println!("{which}: crashed at {t:.2} s ({cause}), span {:.2} s", s.span);
        }
        _ => println!(
            "{which}: completed {:.2} s, rms error {:.3} m, peak wind {:.2} m/s",
            s.span, s.rms_total, s.max_wind
        ),
    }
}

fn sweep(config: &Config, out: &Path) -> Result<(), ScenarioError> {
    let (path, assessments) = execute_sweep(config, out)?;
    println!("wrote {}", path.display());
    let intervals = admissible_intervals(&assessments);
    if intervals.is_empty() {
        println!("admissible: none");
    } else {
        let spans: Vec<String> = intervals
            .iter()
            .map(|(a, b)| format!("[{:.1}, {:.1}] deg", a.to_degrees(), b.to_degrees()))
            .collect();
        println!("admissible: {}", spans.join(", "));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Run { common, out } => {
            let config = common.load()?;
            if matches!(config.scenario.kind, ScenarioKind::ChiSweep) {
                return sweep(&config, &out);
            }
            let artifacts = execute_run(&config, &out, "")?;
            report_run(&config.controller.to_string(), &artifacts);
            Ok(())
        }
        Command::SweepChi { common, out } => {
            let config = common.load()?;
            sweep(&config, &out)
        }
        Command::Compare { common, out } => {
            let config = common.load()?;
            let (indi, lqr) = execute_compare(&config, &out)?;
            report_run("indi", &indi);
            report_run("lqr", &lqr);
            println!("wrote {}", out.join("compare.csv").display());
            Ok(())
        }
        Command::PrintTrim { common } => {
            let config = common.load()?;
            print!("{}", trim_report(&config)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
