//! Plain-text report rendering.
//!
//! All reports are line oriented: one record per line, `key=value` fields
//! separated by single spaces, floats printed with Rust's shortest
//! round-tripping notation. The format is stable so runs can be diffed and
//! the numbers can be parsed back without loss.

use std::collections::BTreeMap;

use crate::optimizer::{relative_gain, IterationReport, RunOutput};
use crate::oracle::Frontier;
use crate::schedule::Objectives;
use crate::sim::ExecutionTrace;

/// One line per iteration, in order.
pub fn render_iteration_reports(reports: &[IterationReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "iteration={} machines={} machines_total={} makespan_est={} \
             makespan_actual={} cost_to_date={} energy_to_date={} replanned={}\n",
            r.iteration,
            machines_field(&r.machines_active),
            r.machines_total,
            r.makespan_est,
            r.makespan_actual,
            r.cost_to_date,
            r.energy_to_date,
            r.replanned,
        ));
    }
    out
}

fn machines_field(active: &BTreeMap<String, u32>) -> String {
    if active.is_empty() {
        return "none".into();
    }
    active
        .iter()
        .map(|(name, count)| format!("{name}:{count}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// All task executions of a run in the run-global time frame, iterations
/// back to back.
pub fn render_trace(traces: &[ExecutionTrace], offsets: &[f64]) -> String {
    debug_assert_eq!(traces.len(), offsets.len());
    let mut out = String::new();
    for (trace, &offset) in traces.iter().zip(offsets) {
        out.push_str(&trace.render(offset));
    }
    out
}

/// Whole-run totals, as they appear in the summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunTotals {
    pub makespan: f64,
    pub cost: f64,
    pub energy: f64,
}

pub fn summarize(output: &RunOutput) -> RunTotals {
    RunTotals {
        makespan: output.metrics.makespan_actual,
        cost: output.metrics.cost,
        energy: output.metrics.energy_proxy,
    }
}

/// One line per executed mode; when both ran, a final line gives the relative
/// improvement of the feedback loop over the baseline, in percent (positive
/// means the loop did better).
pub fn render_summary(greedy: Option<&RunTotals>, iterative: Option<&RunTotals>) -> String {
    let mut out = String::new();
    if let Some(t) = greedy {
        out.push_str(&format!(
            "mode=greedy total_makespan={} total_cost={} total_energy={}\n",
            t.makespan, t.cost, t.energy
        ));
    }
    if let Some(t) = iterative {
        out.push_str(&format!(
            "mode=iterative total_makespan={} total_cost={} total_energy={}\n",
            t.makespan, t.cost, t.energy
        ));
    }
    if let (Some(g), Some(i)) = (greedy, iterative) {
        out.push_str(&format!(
            "delta_makespan_pct={} delta_cost_pct={} delta_energy_pct={}\n",
            100.0 * relative_gain(g.makespan, i.makespan),
            100.0 * relative_gain(g.cost, i.cost),
            100.0 * relative_gain(g.energy, i.energy),
        ));
    }
    out
}

/// The exhaustive-search result next to the heuristic plan it judges.
pub fn render_oracle(heuristic: &Objectives, frontier: &Frontier) -> String {
    let mut out = String::new();
    out.push_str(&format!("evaluations={}\n", frontier.evaluations));
    out.push_str(&format!(
        "heuristic makespan={} cost={} on_frontier={} dominated={}\n",
        heuristic.makespan,
        heuristic.cost,
        frontier.contains(heuristic.makespan, heuristic.cost),
        frontier.dominates(heuristic.makespan, heuristic.cost),
    ));
    for p in &frontier.points {
        out.push_str(&format!("frontier makespan={} cost={}\n", p.makespan, p.cost));
    }
    out.push_str(&format!(
        "best_makespan={} best_cost={}\n",
        frontier.best_makespan(),
        frontier.best_cost()
    ));
    out
}

/// Splits a report line back into its fields. Values never contain spaces,
/// so this inverts the renderers above.
pub fn parse_key_values(line: &str) -> BTreeMap<&str, &str> {
    line.split_whitespace()
        .filter_map(|field| field.split_once('='))
        .collect()
}
