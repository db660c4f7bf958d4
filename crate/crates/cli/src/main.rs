use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dabsim_cli::batch::{self, BatchRow};
use dabsim_cli::validate::steady_state_suite;
use dabsim_cli::{parse_config, PlotStyle, RunError, Scenario};

/// Switching-level DAB converter startup simulator.
#[derive(Parser)]
#[command(name = "dabsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace, metrics and plots.
    Run {
        config: PathBuf,
        /// Output directory (overrides `scenario.output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several strategies on the same converter and tabulate metrics.
    Compare {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        /// Output directory (default: the first scenario's).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vary one parameter of a scenario.
    Sweep {
        config: PathBuf,
        /// t_ramp, v_bat, d_cmd or t_d_final.
        #[arg(long)]
        key: String,
        /// Comma-separated values, units allowed (e.g. 10ms,50ms,150ms).
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check simulated steady-state power against the closed form.
    Validate,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

enum Failure {
    Config(String),
    Run(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => Failure::Config(c.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

/// Batch-level rejections are configuration errors.
fn batch_failure(e: RunError) -> Failure {
    match e {
        RunError::Batch(m) => Failure::Config(m),
        other => other.into(),
    }
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn print_rows(rows: &[BatchRow]) {
    for r in rows {
        match &r.result {
            Ok(m) => println!("{}", m.summary(&r.label)),
            Err(e) => println!("{}: FAILED: {e}", r.label),
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    let style = PlotStyle::default();
    match cmd {
        Command::Run { config, out } => {
            let mut sc = load(&config)?;
            if let Some(dir) = out {
                sc.output_dir = dir;
            }
            let (output, files) = batch::run_scenario(&sc, &style)?;
            println!("{}", output.metrics.summary(&sc.name));
            println!("wrote {}", files.trace_csv.display());
            Ok(())
        }
        Command::Compare { configs, out } => {
            let scenarios = configs
                .iter()
                .map(|c| load(c))
                .collect::<Result<Vec<_>, _>>()?;
            let dir = out.unwrap_or_else(|| scenarios[0].output_dir.clone());
            let report = batch::run_compare(&scenarios, &dir, &style).map_err(batch_failure)?;
            print_rows(&report.rows);
            println!("wrote {}", report.table_csv.display());
            if report.all_ok() {
                Ok(())
            } else {
                Err(Failure::Run("some scenarios failed".into()))
            }
        }
        Command::Sweep {
            config,
            key,
            values,
            out,
        } => {
            let base = load(&config)?;
            let dir = out.unwrap_or_else(|| base.output_dir.clone());
            let report =
                batch::run_sweep(&base, &key, &values, &dir, &style).map_err(batch_failure)?;
            print_rows(&report.rows);
            println!("peak_i_l: {}", report.peak_i_l_trend.as_str());
            println!("overshoot: {}", report.overshoot_trend.as_str());
            println!("wrote {}", report.table_csv.display());
            if report.all_ok() {
                Ok(())
            } else {
                Err(Failure::Run("some sweep points failed".into()))
            }
        }
        Command::Validate => {
            let checks = steady_state_suite().map_err(|e| Failure::Run(e.to_string()))?;
            for c in &checks {
                println!(
                    "D={:.2} delta={:>3.0} ns: sim {:>9.1} W, closed form {:>9.1} W, dev {:.3}% (<= {:.0}%) {}",
                    c.d,
                    c.per_edge * 1e9,
                    c.p_sim,
                    c.p_ref,
                    100.0 * c.deviation(),
                    100.0 * c.band,
                    if c.pass() { "PASS" } else { "FAIL" }
                );
            }
            if checks.iter().all(|c| c.pass()) {
                Ok(())
            } else {
                Err(Failure::Run("steady-state power outside tolerance".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
