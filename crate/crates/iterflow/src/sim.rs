//! Deterministic execution of schedules with optional runtime noise, plus
//! cost, energy, and machine-hour accounting for completed runs.
//!
//! Execution replays a schedule through the same work-conserving dispatcher
//! that produced it. With noise disabled the replay uses the planned
//! durations, so actual times equal scheduled times bit for bit. With uniform
//! noise each task's runtime becomes its nominal runtime on the assigned
//! machine times a factor drawn from a stream indexed by (task id, iteration):
//! the draw for one task never depends on when or where other tasks ran, so
//! greedy and iterative modes face identical conditions under one seed.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud::{lease_cost, CloudError, MachineId, PricingPolicy, ResourcePool};
use crate::schedule::{critical_path, dispatch_scaled, Plan, Schedule};
use crate::workflow::{IterationDag, TaskId, TaskInstance};

/// How actual runtimes relate to planned ones.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    /// Execution follows the schedule exactly.
    None,
    /// A task's runtime is its nominal runtime on the assigned machine times
    /// a factor drawn uniformly from `[low, high]`.
    UniformFactor { low: f64, high: f64 },
}

/// A noise distribution plus the seed its factor stream derives from.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("noise bounds must satisfy 0 < low <= high, got {low}..{high}")]
    BadNoiseBounds { low: f64, high: f64 },
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            seed: 0,
        }
    }

    pub fn uniform(low: f64, high: f64, seed: u64) -> Self {
        NoiseModel {
            kind: NoiseKind::UniformFactor { low, high },
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if let NoiseKind::UniformFactor { low, high } = self.kind {
            if !(low > 0.0 && low <= high && high.is_finite()) {
                return Err(SimError::BadNoiseBounds { low, high });
            }
        }
        Ok(())
    }

    /// The runtime factor for one task instance. Pure in its arguments: the
    /// same (seed, task, iteration) always yields the same factor, regardless
    /// of any other draw.
    pub fn factor(&self, task: &TaskId, iteration: u32) -> f64 {
        match self.kind {
            NoiseKind::None => 1.0,
            NoiseKind::UniformFactor { low, high } => {
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, task, iteration));
                let u: f64 = rng.gen();
                low + (high - low) * u
            }
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a per-(task, iteration) seed from the run seed by hashing the task
/// id bytes and the iteration index.
fn stream_seed(seed: u64, task: &TaskId, iteration: u32) -> u64 {
    let mut h = mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    h = mix(h.wrapping_add(task.as_str().len() as u64));
    for &b in task.as_str().as_bytes() {
        h = mix(h.wrapping_add(b as u64).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    mix(h.wrapping_add(iteration as u64))
}

/// One task's planned and observed times, local to its iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub instance: TaskInstance,
    pub machine: MachineId,
    pub scheduled_start: f64,
    pub scheduled_duration: f64,
    pub actual_start: f64,
    pub actual_duration: f64,
}

impl TaskRecord {
    pub fn scheduled_end(&self) -> f64 {
        self.scheduled_start + self.scheduled_duration
    }

    pub fn actual_end(&self) -> f64 {
        self.actual_start + self.actual_duration
    }
}

/// The observed execution of one iteration's schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub iteration: u32,
    pub records: Vec<TaskRecord>,
}

impl ExecutionTrace {
    /// Span from earliest actual start to latest actual end, 0 when empty.
    pub fn actual_makespan(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let min = self
            .records
            .iter()
            .map(|r| r.actual_start)
            .fold(f64::INFINITY, f64::min);
        let max = self
            .records
            .iter()
            .map(|r| r.actual_end())
            .fold(f64::NEG_INFINITY, f64::max);
        max - min
    }

    pub fn scheduled_makespan(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let min = self
            .records
            .iter()
            .map(|r| r.scheduled_start)
            .fold(f64::INFINITY, f64::min);
        let max = self
            .records
            .iter()
            .map(|r| r.scheduled_end())
            .fold(f64::NEG_INFINITY, f64::max);
        max - min
    }

    /// True when every actual time equals its scheduled time bit for bit.
    pub fn matches_schedule(&self) -> bool {
        self.records.iter().all(|r| {
            r.actual_start.to_bits() == r.scheduled_start.to_bits()
                && r.actual_duration.to_bits() == r.scheduled_duration.to_bits()
        })
    }

    /// Total seconds of core occupancy; each task occupies one core.
    pub fn busy_core_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.actual_duration).sum()
    }

    /// Core occupancy per machine.
    pub fn busy_by_machine(&self) -> BTreeMap<MachineId, f64> {
        let mut busy = BTreeMap::new();
        for r in &self.records {
            *busy.entry(r.machine).or_insert(0.0) += r.actual_duration;
        }
        busy
    }

    /// Line-oriented export `iteration task machine actual_start actual_end`,
    /// sorted by start, machine, then task. `offset` shifts the times into
    /// the run-global frame.
    pub fn render(&self, offset: f64) -> String {
        let mut rows: Vec<&TaskRecord> = self.records.iter().collect();
        rows.sort_by(|a, b| {
            (a.actual_start, a.machine, &a.instance.task_id)
                .partial_cmp(&(b.actual_start, b.machine, &b.instance.task_id))
                .expect("times are finite")
        });
        let mut out = String::new();
        for r in rows {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                r.instance.iteration,
                r.instance.task_id,
                r.machine,
                offset + r.actual_start,
                offset + r.actual_end()
            ));
        }
        out
    }
}

/// Runs a schedule and observes actual task times.
///
/// The plan behind the schedule is re-dispatched with actual durations. With
/// noise `none` the planned durations are used unchanged, so the replay is
/// the identical computation that produced the schedule and every time
/// matches bit for bit. With uniform noise a task's duration becomes
/// `nominal_work / speed * factor`, anchored to nominal work rather than the
/// current profile estimate so the noise distribution stays fixed while
/// estimates converge.
pub fn execute(schedule: &Schedule, dag: &IterationDag, noise: &NoiseModel) -> ExecutionTrace {
    let plan = Plan::of(schedule);
    let timed = match noise.kind {
        NoiseKind::None => dispatch_scaled(&plan, &dag.edges, |_, planned| planned),
        NoiseKind::UniformFactor { .. } => {
            let actual: BTreeMap<&TaskId, f64> = plan
                .items
                .iter()
                .map(|item| {
                    let spec = dag.task(&item.task).expect("schedule tasks come from the dag");
                    let speed = plan.machine(item.machine).instance_type.speed_factor;
                    let f = noise.factor(&item.task, schedule.iteration);
                    (&item.task, spec.nominal_work / speed * f)
                })
                .collect();
            dispatch_scaled(&plan, &dag.edges, |task, _| actual[task])
        }
    };
    let records: Vec<TaskRecord> = schedule
        .assignments
        .iter()
        .zip(timed.assignments.iter())
        .map(|(s, a)| {
            debug_assert_eq!(s.instance, a.instance);
            TaskRecord {
                instance: s.instance.clone(),
                machine: s.machine,
                scheduled_start: s.start,
                scheduled_duration: s.duration,
                actual_start: a.start,
                actual_duration: a.duration,
            }
        })
        .collect();
    let trace = ExecutionTrace {
        iteration: schedule.iteration,
        records,
    };
    check_bounds(&trace, schedule, dag, noise);
    trace
}

/// Sanity bounds on the observed makespan, active in debug builds.
fn check_bounds(trace: &ExecutionTrace, schedule: &Schedule, dag: &IterationDag, noise: &NoiseModel) {
    if !cfg!(debug_assertions) || trace.records.is_empty() {
        return;
    }
    match noise.kind {
        NoiseKind::None => {
            debug_assert!(
                trace.matches_schedule(),
                "noise-free execution must replay the schedule exactly"
            );
        }
        NoiseKind::UniformFactor { low, high } => {
            let fastest = schedule
                .machines
                .iter()
                .map(|m| m.instance_type.speed_factor)
                .fold(0.0f64, f64::max);
            let cp = critical_path(
                dag,
                |id| dag.task(id).expect("schedule tasks come from the dag").nominal_work,
                fastest,
            );
            let serial: f64 = schedule
                .assignments
                .iter()
                .map(|a| {
                    let spec = dag
                        .task(&a.instance.task_id)
                        .expect("schedule tasks come from the dag");
                    let speed = schedule
                        .machine(a.machine)
                        .expect("assignment machines are listed")
                        .instance_type
                        .speed_factor;
                    spec.nominal_work / speed
                })
                .sum();
            let makespan = trace.actual_makespan();
            debug_assert!(
                makespan >= low * cp * (1.0 - 1e-9),
                "makespan {makespan} below noise floor {}",
                low * cp
            );
            debug_assert!(
                makespan <= high * serial * (1.0 + 1e-9),
                "makespan {makespan} above serial ceiling {}",
                high * serial
            );
        }
    }
}

/// Power accounting knobs for the energy proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    /// Energy per busy core-second. The proxy is in core-seconds at 1.0.
    pub unit_power: f64,
    /// Also charge idle core capacity of leased machines.
    pub include_idle: bool,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            unit_power: 1.0,
            include_idle: false,
        }
    }
}

/// Aggregate outcome of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Sum of per-iteration actual makespans; iterations run back to back.
    pub makespan_actual: f64,
    pub cost: f64,
    pub energy_proxy: f64,
    /// Lease hours per instance type.
    pub machine_hours: BTreeMap<String, f64>,
}

/// Settles the books for a finished run: every machine the traces reference
/// must hold a closed lease in the pool.
pub fn account(
    traces: &[ExecutionTrace],
    pool: &ResourcePool,
    policy: &PricingPolicy,
    energy: &EnergyModel,
) -> Result<Metrics, CloudError> {
    let closed: BTreeSet<MachineId> = pool.released().iter().map(|m| m.id).collect();
    for trace in traces {
        for r in &trace.records {
            if closed.contains(&r.machine) {
                continue;
            }
            if pool.machine(r.machine).is_some() {
                return Err(CloudError::OpenLease(r.machine));
            }
            return Err(CloudError::UnknownMachine(r.machine));
        }
    }
    let mut cost = 0.0;
    let mut capacity_seconds = 0.0;
    let mut machine_hours: BTreeMap<String, f64> = BTreeMap::new();
    for m in pool.released() {
        cost += lease_cost(m, policy)?;
        let span = m.lease_end.expect("released lease is closed") - m.lease_start;
        capacity_seconds += m.instance_type.cores as f64 * span;
        *machine_hours
            .entry(m.instance_type.name.clone())
            .or_insert(0.0) += span / 3600.0;
    }
    let busy: f64 = traces.iter().map(|t| t.busy_core_seconds()).sum();
    let mut energy_proxy = busy * energy.unit_power;
    if energy.include_idle {
        energy_proxy += (capacity_seconds - busy) * energy.unit_power;
    }
    Ok(Metrics {
        makespan_actual: traces.iter().map(|t| t.actual_makespan()).sum(),
        cost,
        energy_proxy,
        machine_hours,
    })
}

/// Energy accrued up to `now` for a run still in flight: busy core-seconds so
/// far, plus leased-but-idle capacity when the model includes it.
pub fn energy_to_date(
    pool: &ResourcePool,
    now: f64,
    busy_so_far: f64,
    energy: &EnergyModel,
) -> f64 {
    let mut e = busy_so_far * energy.unit_power;
    if energy.include_idle {
        let mut capacity = 0.0;
        for m in pool.released() {
            let span = m.lease_end.expect("released lease is closed") - m.lease_start;
            capacity += m.instance_type.cores as f64 * span;
        }
        for m in pool.active() {
            capacity += m.instance_type.cores as f64 * (now - m.lease_start).max(0.0);
        }
        e += (capacity - busy_so_far) * energy.unit_power;
    }
    e
}
