//! Exhaustive search for optimal schedules of small problem instances.
//!
//! The oracle enumerates every machine rental (a multiset over the catalog),
//! every assignment of tasks to those machines, and every dispatch priority
//! (a topological order of the dag), timing each combination with the same
//! dispatcher the heuristics use. The result is the Pareto frontier over
//! (makespan, cost) among all work-conserving schedules, with a witness
//! schedule per point. Heuristic output can then be checked against the true
//! trade-off curve instead of hand-computed expectations.
//!
//! The search is exponential, so limits cap the instance size up front and an
//! evaluation budget aborts enumeration when the space turns out too big.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cloud::{InstanceType, MachineId, PricingPolicy};
use crate::profile::RuntimeProfile;
use crate::schedule::{dispatch, Plan, PlanItem, Schedule, ScheduleMachine};
use crate::workflow::{IterationDag, TaskId, TaskSpec, WorkflowGraph};

/// Caps on the brute-force search.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleLimits {
    /// Largest dag the oracle accepts.
    pub max_tasks: usize,
    /// Largest machine multiset enumerated.
    pub max_machines: usize,
    /// Abort after this many dispatched candidate schedules.
    pub max_evaluations: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_tasks: 8,
            max_machines: 4,
            max_evaluations: 200_000,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("dag has {tasks} tasks, exhaustive search accepts at most {max}")]
    TooManyTasks { tasks: usize, max: usize },
    #[error("search space exceeds {max} candidate schedules")]
    SearchSpaceTooLarge { max: u64 },
}

/// One non-dominated (makespan, cost) pair and a schedule achieving it.
#[derive(Debug, Clone)]
pub struct FrontierPoint {
    pub makespan: f64,
    pub cost: f64,
    pub schedule: Schedule,
}

/// The Pareto frontier of a brute-forced instance, sorted by makespan
/// ascending (and therefore cost descending).
#[derive(Debug, Clone)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    /// Candidate schedules dispatched while searching.
    pub evaluations: u64,
}

impl Frontier {
    /// Smallest makespan any schedule achieved.
    pub fn best_makespan(&self) -> f64 {
        self.points
            .first()
            .map(|p| p.makespan)
            .expect("a searched instance has at least one schedule")
    }

    /// Smallest cost any schedule achieved.
    pub fn best_cost(&self) -> f64 {
        self.points
            .last()
            .map(|p| p.cost)
            .expect("a searched instance has at least one schedule")
    }

    /// True when some frontier point beats (makespan, cost) in one objective
    /// without losing the other.
    pub fn dominates(&self, makespan: f64, cost: f64) -> bool {
        self.points.iter().any(|p| {
            p.makespan <= makespan
                && p.cost <= cost
                && (p.makespan < makespan || p.cost < cost)
        })
    }

    /// True when (makespan, cost) equals a frontier point exactly.
    pub fn contains(&self, makespan: f64, cost: f64) -> bool {
        self.points
            .iter()
            .any(|p| p.makespan == makespan && p.cost == cost)
    }
}

/// Finds the exact (makespan, cost) Pareto frontier of one iteration dag by
/// exhaustive enumeration. Task runtimes come from the profile's reference
/// estimates, exactly as the greedy planner sees them.
pub fn brute_force_optimum(
    dag: &IterationDag,
    catalog: &[InstanceType],
    profile: &RuntimeProfile,
    policy: &PricingPolicy,
    limits: &OracleLimits,
) -> Result<Frontier, OracleError> {
    if dag.tasks.len() > limits.max_tasks {
        return Err(OracleError::TooManyTasks {
            tasks: dag.tasks.len(),
            max: limits.max_tasks,
        });
    }
    let orders = topological_orders(dag, limits.max_evaluations)?;
    let ref_works: Vec<f64> = dag
        .tasks
        .iter()
        .map(|t| profile.reference_estimate(t))
        .collect();

    let mut search = Search {
        dag,
        orders: &orders,
        ref_works: &ref_works,
        policy,
        max_evaluations: limits.max_evaluations,
        evaluations: 0,
        pareto: Vec::new(),
    };
    let mut counts = vec![0usize; catalog.len()];
    enumerate_multisets(catalog, limits.max_machines, 0, 0, &mut counts, &mut search)?;

    let mut points = search.pareto;
    points.sort_by(|a, b| {
        (a.makespan, a.cost)
            .partial_cmp(&(b.makespan, b.cost))
            .expect("objectives are finite")
    });
    Ok(Frontier {
        points,
        evaluations: search.evaluations,
    })
}

struct Search<'a> {
    dag: &'a IterationDag,
    orders: &'a [Vec<usize>],
    ref_works: &'a [f64],
    policy: &'a PricingPolicy,
    max_evaluations: u64,
    evaluations: u64,
    pareto: Vec<FrontierPoint>,
}

impl Search<'_> {
    fn offer(&mut self, makespan: f64, cost: f64, schedule: impl FnOnce() -> Schedule) {
        let dominated = self.pareto.iter().any(|p| {
            p.makespan <= makespan
                && p.cost <= cost
                && (p.makespan < makespan || p.cost < cost)
        });
        let duplicate = self
            .pareto
            .iter()
            .any(|p| p.makespan == makespan && p.cost == cost);
        if dominated || duplicate {
            return;
        }
        self.pareto.retain(|p| {
            !(makespan <= p.makespan && cost <= p.cost && (makespan < p.makespan || cost < p.cost))
        });
        self.pareto.push(FrontierPoint {
            makespan,
            cost,
            schedule: schedule(),
        });
    }
}

/// Recursively picks how many machines of each catalog type to rent.
fn enumerate_multisets(
    catalog: &[InstanceType],
    max_machines: usize,
    type_idx: usize,
    rented: usize,
    counts: &mut Vec<usize>,
    search: &mut Search,
) -> Result<(), OracleError> {
    if type_idx == catalog.len() {
        if rented > 0 {
            evaluate_multiset(catalog, counts, search)?;
        }
        return Ok(());
    }
    let cap = catalog[type_idx]
        .capacity_limit
        .map_or(max_machines, |c| c as usize)
        .min(max_machines - rented);
    for n in 0..=cap {
        counts[type_idx] = n;
        enumerate_multisets(catalog, max_machines, type_idx + 1, rented + n, counts, search)?;
    }
    counts[type_idx] = 0;
    Ok(())
}

/// Evaluates every canonical assignment of tasks onto one fixed machine
/// multiset, under every dispatch priority.
fn evaluate_multiset(
    catalog: &[InstanceType],
    counts: &[usize],
    search: &mut Search,
) -> Result<(), OracleError> {
    let mut machines = Vec::new();
    let mut group = Vec::new();
    for (type_idx, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            machines.push(ScheduleMachine {
                id: MachineId(machines.len() as u64),
                instance_type: catalog[type_idx].clone(),
            });
            group.push(type_idx);
        }
    }
    let n_tasks = search.dag.tasks.len();
    if machines.len() > n_tasks {
        // Some machine would stay unused; a smaller multiset covers that case.
        return Ok(());
    }
    let mut choice = vec![0usize; n_tasks];
    let mut used = vec![false; machines.len()];
    assign_tasks(&machines, &group, 0, &mut choice, &mut used, search)
}

/// Recursively assigns tasks (in id order) to machines. Machines of the same
/// type are interchangeable, so within a type group only the first unused
/// machine may be opened; that visits each distinct assignment exactly once.
fn assign_tasks(
    machines: &[ScheduleMachine],
    group: &[usize],
    task_idx: usize,
    choice: &mut Vec<usize>,
    used: &mut Vec<bool>,
    search: &mut Search,
) -> Result<(), OracleError> {
    let n_tasks = choice.len();
    if task_idx == n_tasks {
        if used.iter().all(|&u| u) {
            return time_assignment(machines, choice, search);
        }
        return Ok(());
    }
    let unused = used.iter().filter(|&&u| !u).count();
    let remaining = n_tasks - task_idx;
    for m in 0..machines.len() {
        let opens = !used[m];
        if opens {
            // Only the lowest-id unused machine of each type group opens.
            let first_unused_in_group = (0..m).all(|j| group[j] != group[m] || used[j]);
            if !first_unused_in_group {
                continue;
            }
        }
        // Every still-unused machine needs a task of its own later on.
        if remaining - 1 < unused - usize::from(opens) {
            continue;
        }
        choice[task_idx] = m;
        if opens {
            used[m] = true;
        }
        assign_tasks(machines, group, task_idx + 1, choice, used, search)?;
        if opens {
            used[m] = false;
        }
    }
    Ok(())
}

/// Dispatches one assignment under every topological order and offers the
/// outcomes to the frontier.
fn time_assignment(
    machines: &[ScheduleMachine],
    choice: &[usize],
    search: &mut Search,
) -> Result<(), OracleError> {
    for order in search.orders {
        search.evaluations += 1;
        if search.evaluations > search.max_evaluations {
            return Err(OracleError::SearchSpaceTooLarge {
                max: search.max_evaluations,
            });
        }
        let items: Vec<PlanItem> = order
            .iter()
            .map(|&t| PlanItem {
                task: search.dag.tasks[t].id.clone(),
                machine: machines[choice[t]].id,
                ref_work: search.ref_works[t],
            })
            .collect();
        let plan = Plan {
            iteration: search.dag.iteration,
            machines: machines.to_vec(),
            items,
        };
        let schedule = dispatch(&plan, &search.dag.edges);
        let obj = schedule.objectives(search.policy);
        search.offer(obj.makespan, obj.cost, move || schedule);
    }
    Ok(())
}

/// All topological orders of the dag, as indices into `dag.tasks`.
fn topological_orders(dag: &IterationDag, max: u64) -> Result<Vec<Vec<usize>>, OracleError> {
    let n = dag.tasks.len();
    let index: std::collections::BTreeMap<&TaskId, usize> = dag
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| (&t.id, i))
        .collect();
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indegree = vec![0usize; n];
    for (from, to) in &dag.edges {
        succs[index[from]].push(index[to]);
        indegree[index[to]] += 1;
    }
    let mut orders = Vec::new();
    let mut current = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    extend_order(&succs, &mut indegree, &mut placed, &mut current, &mut orders, max)?;
    Ok(orders)
}

fn extend_order(
    succs: &[Vec<usize>],
    indegree: &mut Vec<usize>,
    placed: &mut Vec<bool>,
    current: &mut Vec<usize>,
    orders: &mut Vec<Vec<usize>>,
    max: u64,
) -> Result<(), OracleError> {
    let n = succs.len();
    if current.len() == n {
        if orders.len() as u64 >= max {
            return Err(OracleError::SearchSpaceTooLarge { max });
        }
        orders.push(current.clone());
        return Ok(());
    }
    for t in 0..n {
        if placed[t] || indegree[t] > 0 {
            continue;
        }
        placed[t] = true;
        current.push(t);
        for &s in &succs[t] {
            indegree[s] -= 1;
        }
        extend_order(succs, indegree, placed, current, orders, max)?;
        for &s in &succs[t] {
            indegree[s] += 1;
        }
        current.pop();
        placed[t] = false;
    }
    Ok(())
}

/// Generates a random loop-free workflow with `min_tasks..=max_tasks` tasks,
/// deterministic in the seed. Task ids are `t00`, `t01`, ... in precedence
/// order; any edge points from a lower to a higher index, so the graph is
/// acyclic by construction. Works are multiples of 50 seconds and every task
/// has its own runtime category.
pub fn random_dag(seed: u64, min_tasks: usize, max_tasks: usize) -> WorkflowGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(min_tasks..=max_tasks);
    let tasks: Vec<TaskSpec> = (0..n)
        .map(|i| TaskSpec {
            id: TaskId::new(format!("t{i:02}")),
            category: format!("c{i:02}"),
            nominal_work: rng.gen_range(1..=60) as f64 * 50.0,
            output_data: rng.gen_range(0..=8) as f64,
        })
        .collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(0.4) {
                edges.push((tasks[i].id.clone(), tasks[j].id.clone()));
            }
        }
    }
    WorkflowGraph::new(tasks, edges, None, 1).expect("generated graphs are valid")
}
