//! The iteration loop: execute, measure, and re-provision between rounds.
//!
//! A looping workflow runs its dag several times. The first round is planned
//! from nominal runtimes, deliberately keeping every machine the makespan
//! planner asked for before consolidation, so the run starts with slack. After
//! each round the observed runtimes update the profile, a fresh plan is drawn
//! against the learned estimates, and the plan is adopted only when its
//! weighted relative improvement in makespan and marginal cost clears a
//! threshold. Adoption releases machines the new plan no longer needs and
//! leases any it adds; otherwise the current assignment is kept and merely
//! retimed with the newer estimates.
//!
//! Two drivers share this machinery: [`run_iterative`] performs the full
//! feedback loop, [`run_greedy_only`] replans nothing and learns nothing,
//! serving as the baseline the loop is measured against.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cloud::{
    CloudError, Machine, MachineId, PricingPolicy, ResourcePool, Venue,
};
use crate::profile::{ProfileError, RuntimeProfile};
use crate::schedule::{dispatch, Plan, Schedule, ScheduleError};
use crate::scheduler::{consolidate, downgrade_instances, greedy_min_makespan, PlanContext};
use crate::sim::{
    account, energy_to_date, execute, EnergyModel, ExecutionTrace, Metrics, NoiseModel, SimError,
};
use crate::workflow::{IterationDag, WorkflowError, WorkflowGraph};

/// When a candidate plan replaces the incumbent at an iteration boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplanThresholds {
    /// Smallest weighted relative gain worth a reconfiguration.
    pub min_relative_gain: f64,
    pub weight_time: f64,
    pub weight_cost: f64,
}

impl Default for ReplanThresholds {
    fn default() -> Self {
        ReplanThresholds {
            min_relative_gain: 0.05,
            weight_time: 1.0,
            weight_cost: 1.0,
        }
    }
}

impl ReplanThresholds {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.min_relative_gain >= 0.0 && self.min_relative_gain.is_finite()) {
            return Err(RunError::BadGainThreshold);
        }
        let sum = self.weight_time + self.weight_cost;
        if !(self.weight_time >= 0.0 && self.weight_cost >= 0.0 && sum > 0.0 && sum.is_finite()) {
            return Err(RunError::BadWeights);
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Noise(#[from] SimError),
    #[error("iteration count {requested} must be between 1 and {max}")]
    IterationCount { requested: u32, max: u32 },
    #[error("replan weights must be nonnegative with a positive sum")]
    BadWeights,
    #[error("minimum relative gain must be finite and nonnegative")]
    BadGainThreshold,
}

/// Relative improvement of `candidate` over `incumbent`, positive when the
/// candidate is smaller. A candidate that introduces cost where the incumbent
/// had none counts as a full loss.
pub fn relative_gain(incumbent: f64, candidate: f64) -> f64 {
    if incumbent > 0.0 {
        (incumbent - candidate) / incumbent
    } else if candidate > 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// What one iteration looked like, recorded right after it ran.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: u32,
    /// Leased machines by type while the iteration ran.
    pub machines_active: BTreeMap<String, u32>,
    pub machines_total: u32,
    /// Planned makespan of the schedule that ran.
    pub makespan_est: f64,
    pub makespan_actual: f64,
    /// Money committed so far, counting open leases as if closed now.
    pub cost_to_date: f64,
    pub energy_to_date: f64,
    /// True when the schedule came from an adopted boundary replan.
    pub replanned: bool,
}

/// The decision taken at one iteration boundary.
#[derive(Debug, Clone)]
pub struct ReplanOutcome {
    /// Schedule for the next iteration: the candidate if adopted, otherwise
    /// the incumbent assignment retimed with current estimates.
    pub schedule: Schedule,
    pub adopted: bool,
    pub gain: f64,
    pub incumbent_makespan: f64,
    pub candidate_makespan: f64,
    /// Money keeping the pool as is would add over the next iteration.
    pub incumbent_marginal_cost: f64,
    /// Money the candidate's pool would add over the next iteration.
    pub candidate_marginal_cost: f64,
    /// Machines to release at the boundary when adopting.
    pub release: Vec<MachineId>,
    /// Machines to lease at the boundary when adopting, in id order.
    pub provision: Vec<(MachineId, String)>,
}

/// Feeds one iteration's observed runtimes into the profile. Observations are
/// normalized by the speed of the machine they ran on.
pub fn update_profile(
    profile: &mut RuntimeProfile,
    trace: &ExecutionTrace,
    schedule: &Schedule,
    dag: &IterationDag,
) -> Result<(), ProfileError> {
    for r in &trace.records {
        let spec = dag
            .task(&r.instance.task_id)
            .expect("trace tasks come from the dag");
        let speed = schedule
            .machine(r.machine)
            .expect("trace machines come from the schedule")
            .instance_type
            .speed_factor;
        profile.record(&spec.category, r.actual_duration, speed)?;
    }
    Ok(())
}

/// Money that extending this lease by `extension` seconds past `now` adds.
/// Quanta already begun are sunk and never count.
fn marginal_lease_cost(m: &Machine, policy: &PricingPolicy, now: f64, extension: f64) -> f64 {
    match m.instance_type.venue {
        Venue::Private => 0.0,
        Venue::Public => {
            let begun = policy.billed_quanta((now - m.lease_start).max(0.0));
            let after = policy.billed_quanta((now + extension - m.lease_start).max(0.0));
            after.saturating_sub(begun) as f64 * m.instance_type.price_per_quantum
        }
    }
}

/// Re-dispatches the incumbent assignment against the next iteration's dag
/// with current runtime estimates, dropping tasks the next dag does not run.
fn retime(incumbent: &Schedule, dag: &IterationDag, profile: &RuntimeProfile) -> Schedule {
    let mut plan = Plan::of(incumbent);
    plan.iteration = dag.iteration;
    plan.items.retain(|i| dag.task(&i.task).is_some());
    for item in &mut plan.items {
        item.ref_work = profile.reference_estimate(dag.task(&item.task).expect("just retained"));
    }
    plan.prune_machines();
    dispatch(&plan, &dag.edges)
}

/// Renames machines the candidate would lease fresh so their ids continue the
/// pool's id sequence without gaps. Machine names never influence dispatch
/// times, so the schedule's times are untouched.
fn renumber_fresh(schedule: &mut Schedule, pool: &ResourcePool) {
    let pool_ids: BTreeSet<MachineId> = pool.active().map(|m| m.id).collect();
    let mut fresh: Vec<MachineId> = schedule
        .machines
        .iter()
        .map(|m| m.id)
        .filter(|id| !pool_ids.contains(id))
        .collect();
    fresh.sort();
    let map: BTreeMap<MachineId, MachineId> = fresh
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, MachineId(pool.next_id() + i as u64)))
        .collect();
    for m in &mut schedule.machines {
        if let Some(&new) = map.get(&m.id) {
            m.id = new;
        }
    }
    for a in &mut schedule.assignments {
        if let Some(&new) = map.get(&a.machine) {
            a.machine = new;
        }
    }
}

/// Plans the next iteration from scratch and decides whether switching beats
/// keeping the current assignment.
///
/// The candidate is a full planning pass (greedy, consolidation, downgrade)
/// seeded with the pool's machines. Costs compare only money the decision can
/// still influence at time `now`: keeping the pool extends every active lease
/// by the incumbent's makespan, while the candidate extends only the leases it
/// reuses and pays for fresh ones from scratch; leases it drops add nothing.
pub fn replan(
    dag: &IterationDag,
    incumbent: &Schedule,
    pool: &ResourcePool,
    profile: &RuntimeProfile,
    policy: &PricingPolicy,
    thresholds: &ReplanThresholds,
    now: f64,
) -> Result<ReplanOutcome, RunError> {
    let ctx = PlanContext::from_pool(pool);
    let g = greedy_min_makespan(dag, pool.catalog(), profile, &ctx)?;
    let c = consolidate(&g, dag, policy);
    let mut candidate = downgrade_instances(&c, dag, pool.catalog(), policy);
    renumber_fresh(&mut candidate, pool);
    let retimed = retime(incumbent, dag, profile);

    let pool_ids: BTreeSet<MachineId> = pool.active().map(|m| m.id).collect();
    let cand_ids: BTreeSet<MachineId> = candidate.machines.iter().map(|m| m.id).collect();

    let incumbent_makespan = retimed.makespan();
    let candidate_makespan = candidate.makespan();
    let incumbent_marginal_cost: f64 = pool
        .active()
        .map(|m| marginal_lease_cost(m, policy, now, incumbent_makespan))
        .sum();
    let mut candidate_marginal_cost: f64 = pool
        .active()
        .filter(|m| cand_ids.contains(&m.id))
        .map(|m| marginal_lease_cost(m, policy, now, candidate_makespan))
        .sum();
    for m in &candidate.machines {
        if !pool_ids.contains(&m.id) && m.instance_type.venue == Venue::Public {
            candidate_marginal_cost +=
                policy.billed_quanta(candidate_makespan) as f64 * m.instance_type.price_per_quantum;
        }
    }

    let gain = (thresholds.weight_time * relative_gain(incumbent_makespan, candidate_makespan)
        + thresholds.weight_cost * relative_gain(incumbent_marginal_cost, candidate_marginal_cost))
        / (thresholds.weight_time + thresholds.weight_cost);
    let adopted = gain >= thresholds.min_relative_gain;

    let (schedule, release, provision) = if adopted {
        let release = pool
            .active()
            .map(|m| m.id)
            .filter(|id| !cand_ids.contains(id))
            .collect();
        let mut provision: Vec<(MachineId, String)> = candidate
            .machines
            .iter()
            .filter(|m| !pool_ids.contains(&m.id))
            .map(|m| (m.id, m.instance_type.name.clone()))
            .collect();
        provision.sort_by_key(|(id, _)| *id);
        (candidate, release, provision)
    } else {
        (retimed, Vec::new(), Vec::new())
    };
    Ok(ReplanOutcome {
        schedule,
        adopted,
        gain,
        incumbent_makespan,
        candidate_makespan,
        incumbent_marginal_cost,
        candidate_marginal_cost,
        release,
        provision,
    })
}

/// Everything a run needs.
#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub graph: &'a WorkflowGraph,
    pub catalog: &'a [crate::cloud::InstanceType],
    pub policy: &'a PricingPolicy,
    pub noise: &'a NoiseModel,
    pub thresholds: &'a ReplanThresholds,
    pub energy: &'a EnergyModel,
    pub iterations: u32,
}

/// A finished run: per-iteration reports, raw traces, the global start time
/// of each iteration, and the settled totals.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub reports: Vec<IterationReport>,
    pub traces: Vec<ExecutionTrace>,
    pub offsets: Vec<f64>,
    pub metrics: Metrics,
}

fn validate_config(config: &RunConfig) -> Result<(), RunError> {
    config.noise.validate()?;
    config.policy.validate()?;
    config.thresholds.validate()?;
    let max = config.graph.max_iterations();
    if config.iterations == 0 || config.iterations > max {
        return Err(RunError::IterationCount {
            requested: config.iterations,
            max,
        });
    }
    Ok(())
}

/// Runs the full feedback loop.
///
/// The first iteration keeps every machine the makespan pass provisioned,
/// even those consolidation then emptied, so early over-provisioning is real
/// and visible; the first boundary replan is what drops the surplus. Each
/// subsequent boundary re-plans against the learned profile and adopts the
/// candidate only when [`replan`] finds enough gain.
pub fn run_iterative(config: &RunConfig) -> Result<RunOutput, RunError> {
    validate_config(config)?;
    let mut pool = ResourcePool::new(config.catalog.to_vec())?;
    let profile = RuntimeProfile::new();

    let dag0 = config.graph.iteration_instance(0)?;
    let envelope = greedy_min_makespan(&dag0, config.catalog, &profile, &PlanContext::fresh())?;
    let consolidated = consolidate(&envelope, &dag0, config.policy);
    let first = downgrade_instances(&consolidated, &dag0, config.catalog, config.policy);
    // Lease the union: final machines at their final types, plus everything
    // else the envelope asked for at its original type.
    let mut wanted: BTreeMap<MachineId, String> = first
        .machines
        .iter()
        .map(|m| (m.id, m.instance_type.name.clone()))
        .collect();
    for m in &envelope.machines {
        wanted
            .entry(m.id)
            .or_insert_with(|| m.instance_type.name.clone());
    }
    for (id, type_name) in &wanted {
        let got = pool.provision(type_name, 0.0)?;
        assert_eq!(got, *id, "initial lease ids line up with the plan");
    }

    run_loop(config, pool, profile, first, dag0, true)
}

/// Runs the no-feedback baseline: greedy placement from nominal estimates
/// every iteration, no consolidation, no downgrading, no lease ever released
/// before the run ends, and no learning from observed runtimes.
pub fn run_greedy_only(config: &RunConfig) -> Result<RunOutput, RunError> {
    validate_config(config)?;
    let mut pool = ResourcePool::new(config.catalog.to_vec())?;
    let profile = RuntimeProfile::new();

    let mut reports = Vec::new();
    let mut traces = Vec::new();
    let mut offsets = Vec::new();
    let mut now = 0.0;
    let mut busy = 0.0;
    for k in 0..config.iterations {
        let dag = config.graph.iteration_instance(k)?;
        let ctx = PlanContext::from_pool(&pool);
        let schedule = greedy_min_makespan(&dag, config.catalog, &profile, &ctx)?;
        lease_additions(&mut pool, &schedule, now)?;
        let trace = execute(&schedule, &dag, config.noise);
        offsets.push(now);
        busy += trace.busy_core_seconds();
        let makespan_actual = trace.actual_makespan();
        now += makespan_actual;
        reports.push(IterationReport {
            iteration: k,
            machines_active: pool.active_by_type(),
            machines_total: pool.active_count() as u32,
            makespan_est: schedule.makespan(),
            makespan_actual,
            cost_to_date: pool.cost_accrued(now, config.policy),
            energy_to_date: energy_to_date(&pool, now, busy, config.energy),
            replanned: false,
        });
        traces.push(trace);
    }
    pool.release_all(now)?;
    let metrics = account(&traces, &pool, config.policy, config.energy)?;
    Ok(RunOutput {
        reports,
        traces,
        offsets,
        metrics,
    })
}

/// Leases every schedule machine the pool does not hold yet.
fn lease_additions(pool: &mut ResourcePool, schedule: &Schedule, now: f64) -> Result<(), CloudError> {
    let missing: Vec<(MachineId, String)> = schedule
        .machines
        .iter()
        .filter(|m| pool.machine(m.id).is_none())
        .map(|m| (m.id, m.instance_type.name.clone()))
        .collect();
    for (id, type_name) in missing {
        let got = pool.provision(&type_name, now)?;
        assert_eq!(got, id, "fresh lease ids continue the pool sequence");
    }
    Ok(())
}

fn run_loop(
    config: &RunConfig,
    mut pool: ResourcePool,
    mut profile: RuntimeProfile,
    mut current: Schedule,
    mut dag: IterationDag,
    feedback: bool,
) -> Result<RunOutput, RunError> {
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    let mut offsets = Vec::new();
    let mut now = 0.0;
    let mut busy = 0.0;
    let mut replanned = false;
    for k in 0..config.iterations {
        debug_assert_eq!(dag.iteration, k);
        let trace = execute(&current, &dag, config.noise);
        if feedback {
            update_profile(&mut profile, &trace, &current, &dag)?;
        }
        offsets.push(now);
        busy += trace.busy_core_seconds();
        let makespan_actual = trace.actual_makespan();
        now += makespan_actual;
        reports.push(IterationReport {
            iteration: k,
            machines_active: pool.active_by_type(),
            machines_total: pool.active_count() as u32,
            makespan_est: current.makespan(),
            makespan_actual,
            cost_to_date: pool.cost_accrued(now, config.policy),
            energy_to_date: energy_to_date(&pool, now, busy, config.energy),
            replanned,
        });
        traces.push(trace);
        if k + 1 < config.iterations {
            let next = config.graph.iteration_instance(k + 1)?;
            let outcome = replan(
                &next,
                &current,
                &pool,
                &profile,
                config.policy,
                config.thresholds,
                now,
            )?;
            if outcome.adopted {
                for id in &outcome.release {
                    pool.release(*id, now)?;
                }
                for (id, type_name) in &outcome.provision {
                    let got = pool.provision(type_name, now)?;
                    assert_eq!(got, *id, "fresh lease ids continue the pool sequence");
                }
            }
            replanned = outcome.adopted;
            current = outcome.schedule;
            dag = next;
        }
    }
    pool.release_all(now)?;
    let metrics = account(&traces, &pool, config.policy, config.energy)?;
    Ok(RunOutput {
        reports,
        traces,
        offsets,
        metrics,
    })
}
