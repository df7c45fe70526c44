//! Orchestration: load a scenario, run the requested modes, write reports.
//!
//! All report files are rendered in memory first and written together once
//! every run has succeeded, so a failing scenario leaves no partial output
//! behind. Failures carry a coarse kind (configuration, validation, runtime)
//! that the command-line tool maps to distinct exit codes.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::optimizer::{run_greedy_only, run_iterative, RunConfig, RunError};
use crate::oracle::{brute_force_optimum, OracleError, OracleLimits};
use crate::profile::RuntimeProfile;
use crate::report::{
    render_iteration_reports, render_oracle, render_summary, render_trace, summarize, RunTotals,
};
use crate::scenario::{Mode, Scenario, ScenarioConfig, ScenarioError};
use crate::scheduler::{consolidate, downgrade_instances, greedy_min_makespan, PlanContext};

/// Command-line adjustments applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
}

/// Whether and how to brute-force the first iteration for comparison.
#[derive(Debug, Clone)]
pub struct OracleOptions {
    pub enabled: bool,
    pub limits: OracleLimits,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            enabled: false,
            limits: OracleLimits::default(),
        }
    }
}

/// How a failed run should be reported to the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Missing or unreadable input, malformed configuration.
    Config,
    /// Well-formed configuration that asks for something invalid.
    Validation,
    /// The run itself failed.
    Runtime,
}

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunnerError {
    pub fn failure_kind(&self) -> FailureKind {
        match self {
            RunnerError::Scenario(e) if e.is_config() => FailureKind::Config,
            RunnerError::Scenario(_) => FailureKind::Validation,
            RunnerError::Oracle(_) => FailureKind::Validation,
            RunnerError::Run(_) | RunnerError::Write { .. } => FailureKind::Runtime,
        }
    }
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub greedy: Option<RunTotals>,
    pub iterative: Option<RunTotals>,
    /// The rendered summary, also written to `summary.txt`.
    pub summary: String,
}

/// Loads the scenario, applies overrides, runs the requested mode(s), and
/// writes the report files into `out_dir`.
///
/// Files written: `iterations_<mode>.txt` and `trace_<mode>.txt` per executed
/// mode, `summary.txt`, and `oracle.txt` when oracle verification is on.
pub fn run_scenario(
    scenario_path: &Path,
    overrides: &Overrides,
    out_dir: &Path,
    oracle: &OracleOptions,
) -> Result<RunArtifacts, RunnerError> {
    let mut config = ScenarioConfig::load(scenario_path)?;
    if let Some(mode) = overrides.mode {
        config.mode = Some(mode);
    }
    if let Some(seed) = overrides.seed {
        config.seed = Some(seed);
    }
    let base = scenario_path.parent().unwrap_or(Path::new("."));
    let scenario = config.build(base)?;

    let mut files: Vec<(&str, String)> = Vec::new();
    let mut greedy_totals = None;
    let mut iterative_totals = None;
    let run_config = RunConfig {
        graph: &scenario.graph,
        catalog: &scenario.catalog,
        policy: &scenario.policy,
        noise: &scenario.noise,
        thresholds: &scenario.thresholds,
        energy: &scenario.energy,
        iterations: scenario.iterations,
    };
    if scenario.mode.runs_greedy() {
        let out = run_greedy_only(&run_config)?;
        files.push(("iterations_greedy.txt", render_iteration_reports(&out.reports)));
        files.push(("trace_greedy.txt", render_trace(&out.traces, &out.offsets)));
        greedy_totals = Some(summarize(&out));
    }
    if scenario.mode.runs_iterative() {
        let out = run_iterative(&run_config)?;
        files.push((
            "iterations_iterative.txt",
            render_iteration_reports(&out.reports),
        ));
        files.push(("trace_iterative.txt", render_trace(&out.traces, &out.offsets)));
        iterative_totals = Some(summarize(&out));
    }
    let summary = render_summary(greedy_totals.as_ref(), iterative_totals.as_ref());
    files.push(("summary.txt", summary.clone()));
    if oracle.enabled {
        files.push(("oracle.txt", verify_oracle(&scenario, &oracle.limits)?));
    }

    std::fs::create_dir_all(out_dir).map_err(|source| RunnerError::Write {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for (name, contents) in &files {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|source| RunnerError::Write {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        files: written,
        greedy: greedy_totals,
        iterative: iterative_totals,
        summary,
    })
}

/// Brute-forces the scenario's first iteration and renders the heuristic
/// plan's position against the exact frontier. Both sides see the same
/// nominal runtime estimates.
fn verify_oracle(scenario: &Scenario, limits: &OracleLimits) -> Result<String, RunnerError> {
    let dag = scenario
        .graph
        .iteration_instance(0)
        .map_err(RunError::from)?;
    let profile = RuntimeProfile::new();
    let frontier = brute_force_optimum(
        &dag,
        &scenario.catalog,
        &profile,
        &scenario.policy,
        limits,
    )?;
    let greedy = greedy_min_makespan(&dag, &scenario.catalog, &profile, &PlanContext::fresh())
        .map_err(RunError::from)?;
    let consolidated = consolidate(&greedy, &dag, &scenario.policy);
    let planned = downgrade_instances(&consolidated, &dag, &scenario.catalog, &scenario.policy);
    Ok(render_oracle(
        &planned.objectives(&scenario.policy),
        &frontier,
    ))
}
