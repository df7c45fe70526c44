//! Schedules: task-to-machine plans with concrete start and end times.
//!
//! A schedule is derived from a plan, which fixes the machine of every task
//! instance and a dispatch preference order. Times are always computed by one
//! deterministic work-conserving dispatcher: a task starts as soon as all its
//! predecessors have finished and a core on its machine is free, with ties
//! broken by plan order. Because the simulator replays schedules through the
//! same dispatcher, a schedule executed without noise reproduces its own
//! times exactly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::cloud::{InstanceType, MachineId, PricingPolicy, Venue};
use crate::workflow::{IterationDag, TaskId, TaskInstance};

/// A machine as referenced by a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleMachine {
    pub id: MachineId,
    pub instance_type: InstanceType,
}

/// One task instance placed on a machine with concrete times.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub instance: TaskInstance,
    pub machine: MachineId,
    pub start: f64,
    /// Estimated runtime on the assigned machine. `end = start + duration`.
    pub duration: f64,
    /// The runtime estimate at reference speed the duration was derived from.
    pub ref_work: f64,
}

impl Assignment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Time and money scores of a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objectives {
    pub makespan: f64,
    pub cost: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("iteration dag has no tasks")]
    EmptyDag,
    #[error("no machine available to place task {0}")]
    CannotPlace(TaskId),
}

/// Reasons a schedule can fail validation.
#[derive(Debug, Error, PartialEq)]
pub enum ValidityError {
    #[error("task {task} assigned to unknown machine {machine}")]
    UnknownMachine { task: TaskId, machine: MachineId },
    #[error("task {0} appears {1} times in the schedule")]
    WrongMultiplicity(TaskId, usize),
    #[error("task {0} has non-positive duration {1}")]
    BadDuration(TaskId, f64),
    #[error("assignment of {task} is for iteration {got}, schedule is iteration {want}")]
    WrongIteration { task: TaskId, got: u32, want: u32 },
    #[error("precedence violated: {from} ends at {from_end} after {to} starts at {to_start}")]
    Precedence {
        from: TaskId,
        to: TaskId,
        from_end: f64,
        to_start: f64,
    },
    #[error("machine {machine} runs {running} tasks at {at}, has {cores} cores")]
    Overcommitted {
        machine: MachineId,
        at: f64,
        running: usize,
        cores: u32,
    },
    #[error("machine {0} listed without any assignment")]
    IdleMachine(MachineId),
}

/// A fully timed schedule for one iteration.
///
/// `assignments` keeps dispatch preference order; serialize through
/// [`Schedule::report`] for a stable order by machine and start.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub iteration: u32,
    pub machines: Vec<ScheduleMachine>,
    pub assignments: Vec<Assignment>,
}

impl Schedule {
    pub fn machine(&self, id: MachineId) -> Option<&ScheduleMachine> {
        self.machines.iter().find(|m| m.id == id)
    }

    pub fn assignments_on(&self, id: MachineId) -> impl Iterator<Item = &Assignment> {
        self.assignments.iter().filter(move |a| a.machine == id)
    }

    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    /// Span from the earliest start to the latest end, 0 when empty.
    pub fn makespan(&self) -> f64 {
        if self.assignments.is_empty() {
            return 0.0;
        }
        let min_start = self.assignments.iter().map(|a| a.start).fold(f64::INFINITY, f64::min);
        let max_end = self.assignments.iter().map(|a| a.end()).fold(f64::NEG_INFINITY, f64::max);
        max_end - min_start
    }

    /// Makespan plus the cost of leasing each used machine from its first to
    /// its last assignment under `policy`.
    pub fn objectives(&self, policy: &PricingPolicy) -> Objectives {
        let mut cost = 0.0;
        for m in &self.machines {
            cost += self.machine_lease_cost(m, policy);
        }
        Objectives {
            makespan: self.makespan(),
            cost,
        }
    }

    fn machine_span(&self, id: MachineId) -> Option<(f64, f64)> {
        let mut span: Option<(f64, f64)> = None;
        for a in self.assignments_on(id) {
            span = Some(match span {
                None => (a.start, a.end()),
                Some((s, e)) => (s.min(a.start), e.max(a.end())),
            });
        }
        span
    }

    fn machine_lease_cost(&self, m: &ScheduleMachine, policy: &PricingPolicy) -> f64 {
        match m.instance_type.venue {
            Venue::Private => 0.0,
            Venue::Public => match self.machine_span(m.id) {
                None => 0.0,
                Some((s, e)) => {
                    m.instance_type.price_per_quantum * policy.billed_quanta(e - s) as f64
                }
            },
        }
    }

    /// Quanta billed for a machine's assignment span.
    pub fn machine_quanta(&self, id: MachineId, policy: &PricingPolicy) -> u64 {
        match self.machine_span(id) {
            None => 0,
            Some((s, e)) => policy.billed_quanta(e - s),
        }
    }

    /// Checks the schedule against its iteration dag: every instance placed
    /// exactly once on a known machine, predecessor ends before successor
    /// starts, and no machine running more tasks than it has cores.
    pub fn validate(&self, dag: &IterationDag) -> Result<(), ValidityError> {
        let mut count: BTreeMap<&TaskId, usize> = BTreeMap::new();
        for a in &self.assignments {
            *count.entry(&a.instance.task_id).or_insert(0) += 1;
            if a.instance.iteration != self.iteration {
                return Err(ValidityError::WrongIteration {
                    task: a.instance.task_id.clone(),
                    got: a.instance.iteration,
                    want: self.iteration,
                });
            }
            if self.machine(a.machine).is_none() {
                return Err(ValidityError::UnknownMachine {
                    task: a.instance.task_id.clone(),
                    machine: a.machine,
                });
            }
            if !(a.duration > 0.0) {
                return Err(ValidityError::BadDuration(
                    a.instance.task_id.clone(),
                    a.duration,
                ));
            }
        }
        for t in &dag.tasks {
            let n = count.get(&t.id).copied().unwrap_or(0);
            if n != 1 {
                return Err(ValidityError::WrongMultiplicity(t.id.clone(), n));
            }
        }
        if count.len() != dag.tasks.len() {
            for (id, n) in count {
                if dag.task(id).is_none() {
                    return Err(ValidityError::WrongMultiplicity(id.clone(), n));
                }
            }
        }
        let times: BTreeMap<&TaskId, (f64, f64)> = self
            .assignments
            .iter()
            .map(|a| (&a.instance.task_id, (a.start, a.end())))
            .collect();
        for (from, to) in &dag.edges {
            let (_, from_end) = times[from];
            let (to_start, _) = times[to];
            if from_end > to_start {
                return Err(ValidityError::Precedence {
                    from: from.clone(),
                    to: to.clone(),
                    from_end,
                    to_start,
                });
            }
        }
        for m in &self.machines {
            let mut events: Vec<(f64, i32)> = Vec::new();
            let mut any = false;
            for a in self.assignments_on(m.id) {
                any = true;
                events.push((a.start, 1));
                events.push((a.end(), -1));
            }
            if !any {
                return Err(ValidityError::IdleMachine(m.id));
            }
            // Ends sort before starts at the same instant, back-to-back is fine.
            events.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .expect("times are finite")
                    .then(a.1.cmp(&b.1))
            });
            let mut running = 0i32;
            for (at, delta) in events {
                running += delta;
                if running > m.instance_type.cores as i32 {
                    return Err(ValidityError::Overcommitted {
                        machine: m.id,
                        at,
                        running: running as usize,
                        cores: m.instance_type.cores,
                    });
                }
            }
        }
        Ok(())
    }

    /// Line-oriented schedule report, sorted by machine, start and task:
    /// `iteration task machine type start end`.
    pub fn report(&self) -> String {
        let mut rows: Vec<&Assignment> = self.assignments.iter().collect();
        rows.sort_by(|a, b| {
            (a.machine, a.start, &a.instance.task_id)
                .partial_cmp(&(b.machine, b.start, &b.instance.task_id))
                .expect("times are finite")
        });
        let mut out = String::new();
        for a in rows {
            let ty = &self
                .machine(a.machine)
                .expect("assignment machines are listed")
                .instance_type
                .name;
            out.push_str(&format!(
                "{} {} {} {} {} {}\n",
                a.instance.iteration,
                a.instance.task_id,
                a.machine,
                ty,
                a.start,
                a.end()
            ));
        }
        out
    }
}

/// A plan item: one task instance pinned to a machine, not yet timed.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PlanItem {
    pub task: TaskId,
    pub machine: MachineId,
    /// Runtime estimate at reference speed.
    pub ref_work: f64,
}

/// An untimed plan. Item order is the dispatch preference order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub iteration: u32,
    pub machines: Vec<ScheduleMachine>,
    pub items: Vec<PlanItem>,
}

impl Plan {
    /// Rebuilds the untimed plan a dispatched schedule came from. Assignment
    /// order becomes item order, so re-dispatching reproduces the times.
    pub(crate) fn of(schedule: &Schedule) -> Plan {
        Plan {
            iteration: schedule.iteration,
            machines: schedule.machines.clone(),
            items: schedule
                .assignments
                .iter()
                .map(|a| PlanItem {
                    task: a.instance.task_id.clone(),
                    machine: a.machine,
                    ref_work: a.ref_work,
                })
                .collect(),
        }
    }

    pub fn machine(&self, id: MachineId) -> &ScheduleMachine {
        self.machines
            .iter()
            .find(|m| m.id == id)
            .expect("plan items reference plan machines")
    }

    /// Drops machines that no item uses.
    pub fn prune_machines(&mut self) {
        self.machines
            .retain(|m| self.items.iter().any(|i| i.machine == m.id));
    }
}

/// Computes start times for a plan with the work-conserving dispatcher.
///
/// Repeatedly commits the task that can start earliest among those whose
/// predecessors have all been committed, breaking ties by plan order. The
/// task takes the busiest core of its machine that is already free, so idle
/// gaps stay available for later tasks.
pub(crate) fn dispatch(plan: &Plan, edges: &[(TaskId, TaskId)]) -> Schedule {
    dispatch_scaled(plan, edges, |_task, duration| duration)
}

/// Same as [`dispatch`], with per-task duration adjustment. `scale` receives
/// the task id and the estimated duration and returns the duration to use.
pub(crate) fn dispatch_scaled(
    plan: &Plan,
    edges: &[(TaskId, TaskId)],
    mut scale: impl FnMut(&TaskId, f64) -> f64,
) -> Schedule {
    let n = plan.items.len();
    let index: BTreeMap<&TaskId, usize> = plan
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| (&item.task, i))
        .collect();
    let mut preds_left = vec![0usize; n];
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (from, to) in edges {
        // Edges to tasks outside the plan do not constrain it. Partial plans
        // list predecessors before successors, so a missing endpoint is
        // always a yet-unplaced successor.
        let (Some(&f), Some(&t)) = (index.get(from), index.get(to)) else {
            continue;
        };
        preds_left[t] += 1;
        succs[f].push(t);
    }
    let mut cores: BTreeMap<MachineId, Vec<f64>> = plan
        .machines
        .iter()
        .map(|m| (m.id, vec![0.0; m.instance_type.cores as usize]))
        .collect();
    let mut ready = vec![0.0f64; n];
    let mut placed: Vec<Option<(f64, f64)>> = vec![None; n];
    for _ in 0..n {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..n {
            if placed[i].is_some() || preds_left[i] > 0 {
                continue;
            }
            let free = cores[&plan.items[i].machine]
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            let start = ready[i].max(free);
            if best.map_or(true, |(s, _)| start < s) {
                best = Some((start, i));
            }
        }
        let (start, i) = best.expect("dag is acyclic so some task is ready");
        let item = &plan.items[i];
        let speed = plan.machine(item.machine).instance_type.speed_factor;
        let duration = scale(&item.task, item.ref_work / speed);
        let end = start + duration;
        let machine_cores = cores.get_mut(&item.machine).expect("machine known");
        let core = best_fit_core(machine_cores, start);
        machine_cores[core] = end;
        placed[i] = Some((start, end));
        for &s in &succs[i] {
            preds_left[s] -= 1;
            ready[s] = ready[s].max(end);
        }
    }
    let assignments = plan
        .items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let (start, end) = placed[i].expect("all tasks placed");
            Assignment {
                instance: TaskInstance {
                    task_id: item.task.clone(),
                    iteration: plan.iteration,
                },
                machine: item.machine,
                start,
                duration: end - start,
                ref_work: item.ref_work,
            }
        })
        .collect();
    Schedule {
        iteration: plan.iteration,
        machines: plan.machines.clone(),
        assignments,
    }
}

/// Index of the core to occupy for a task starting at `start`: among cores
/// free by then, the one that frees latest, first index on ties.
fn best_fit_core(cores: &[f64], start: f64) -> usize {
    let mut best = None;
    for (i, &free) in cores.iter().enumerate() {
        if free <= start && best.map_or(true, |(f, _)| free > f) {
            best = Some((free, i));
        }
    }
    best.expect("dispatch picks reachable starts").1
}

/// Length of the longest dependency chain when every task runs at `speed`,
/// using `ref_estimate` per task. A lower bound on any schedule's makespan
/// when `speed` is the fastest available.
pub fn critical_path(dag: &IterationDag, ref_estimate: impl Fn(&TaskId) -> f64, speed: f64) -> f64 {
    let order = dag.topological_order();
    let mut longest: BTreeMap<&TaskId, f64> = BTreeMap::new();
    let mut best = 0.0f64;
    for id in &order {
        let mut start = 0.0f64;
        for p in dag.predecessors(id) {
            start = start.max(*longest.get(p).expect("topological order"));
        }
        let end = start + ref_estimate(id) / speed;
        best = best.max(end);
        longest.insert(id, end);
    }
    best
}
