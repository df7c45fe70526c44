//! Command-line front end: run a scenario file and write its reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use iterflow::oracle::OracleLimits;
use iterflow::runner::{run_scenario, FailureKind, OracleOptions, Overrides};
use iterflow::scenario::Mode;

#[derive(Parser)]
#[command(
    name = "iterflow",
    version,
    about = "Plan, simulate, and re-provision looping workflows on hybrid clouds"
)]
struct Cli {
    /// Scenario file (TOML)
    scenario: PathBuf,

    /// Override the scenario's execution mode
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Override the noise seed
    #[arg(long)]
    seed: Option<u64>,

    /// Directory the report files are written to
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Also brute-force the first iteration and report the exact frontier
    #[arg(long)]
    verify_oracle: bool,

    /// Largest workflow the brute-force search accepts
    #[arg(long, default_value_t = OracleLimits::default().max_tasks)]
    max_tasks: usize,

    /// Largest machine fleet the brute-force search enumerates
    #[arg(long, default_value_t = OracleLimits::default().max_machines)]
    max_machines: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Greedy,
    Iterative,
    Both,
}

impl From<ModeArg> for Mode {
    fn from(arg: ModeArg) -> Mode {
        match arg {
            ModeArg::Greedy => Mode::Greedy,
            ModeArg::Iterative => Mode::Iterative,
            ModeArg::Both => Mode::Both,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        mode: cli.mode.map(Mode::from),
        seed: cli.seed,
    };
    let oracle = OracleOptions {
        enabled: cli.verify_oracle,
        limits: OracleLimits {
            max_tasks: cli.max_tasks,
            max_machines: cli.max_machines,
            ..OracleLimits::default()
        },
    };
    match run_scenario(&cli.scenario, &overrides, &cli.out, &oracle) {
        Ok(artifacts) => {
            print!("{}", artifacts.summary);
            println!(
                "{} report file(s) written to {}",
                artifacts.files.len(),
                artifacts.out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.failure_kind() {
                FailureKind::Config => 2,
                FailureKind::Validation => 3,
                FailureKind::Runtime => 4,
            })
        }
    }
}
