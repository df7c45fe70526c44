//! Workflow graphs: task definitions, precedence edges, and the iteration loop.
//!
//! A workflow is a DAG of tasks plus an optional loop edge that sends control
//! back from a late task to one of its ancestors, repeating the looped portion
//! for a fixed number of iterations.
//!
//! Workflows are stored in a line-oriented text format so that documents diff
//! cleanly. Three directives are recognized, one per line:
//!
//! ```text
//! task <id> <category> <nominal_work> <output_data>
//! edge <from> <to>
//! loop <from> <to> <max_iterations>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. Task ids must be
//! non-empty and contain no whitespace. `nominal_work` is a positive amount of
//! work in reference-machine seconds, `output_data` a non-negative data volume.
//! At most one `loop` directive is allowed and its target must be an ancestor
//! of its source. A document without a `loop` line describes a workflow that
//! runs exactly once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Identifier of a task within a workflow. Non-empty, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub String);

impl TaskId {
    pub fn new(s: impl Into<String>) -> Self {
        TaskId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// Static description of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    /// Profiling category. Tasks sharing a category share runtime estimates.
    pub category: String,
    /// Work in seconds on a reference machine of speed 1.0. Positive.
    pub nominal_work: f64,
    /// Output data volume produced by the task. Non-negative.
    pub output_data: f64,
}

/// One concrete execution of a task within a given iteration of the loop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskInstance {
    pub task_id: TaskId,
    pub iteration: u32,
}

impl fmt::Display for TaskInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.task_id, self.iteration)
    }
}

/// A validated workflow: a task DAG plus an optional iteration loop.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowGraph {
    tasks: BTreeMap<TaskId, TaskSpec>,
    edges: BTreeSet<(TaskId, TaskId)>,
    loop_edge: Option<(TaskId, TaskId)>,
    max_iterations: u32,
}

/// Errors raised while parsing or validating a workflow document.
#[derive(Debug, Error, PartialEq)]
pub enum WorkflowError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate task id {0}")]
    DuplicateTask(TaskId),
    #[error("task id {0:?} is empty or contains whitespace")]
    BadTaskId(String),
    #[error("task {id} has non-positive nominal work {work}")]
    BadWork { id: TaskId, work: f64 },
    #[error("task {id} has negative output data {data}")]
    BadOutputData { id: TaskId, data: f64 },
    #[error("edge references unknown task {0}")]
    UnknownTask(TaskId),
    #[error("duplicate edge {0} -> {1}")]
    DuplicateEdge(TaskId, TaskId),
    #[error("dependency cycle through task {0}")]
    Cycle(TaskId),
    #[error("loop target {target} is not an ancestor of loop origin {origin}")]
    LoopNotAncestor { origin: TaskId, target: TaskId },
    #[error("loop declared more than once")]
    DuplicateLoop,
    #[error("max_iterations must be at least 1, got {0}")]
    BadIterations(u32),
    #[error("iteration {iteration} out of range, workflow runs {max} iteration(s)")]
    IterationOutOfRange { iteration: u32, max: u32 },
    #[error("workflow has no tasks")]
    Empty,
}

impl WorkflowGraph {
    /// Builds and validates a workflow from its parts.
    ///
    /// `loop_edge` is `(source, target)` and requires the target to be an
    /// ancestor of the source along the DAG edges. `max_iterations` must be 1
    /// when no loop edge is present.
    pub fn new(
        tasks: Vec<TaskSpec>,
        edges: Vec<(TaskId, TaskId)>,
        loop_edge: Option<(TaskId, TaskId)>,
        max_iterations: u32,
    ) -> Result<Self, WorkflowError> {
        if tasks.is_empty() {
            return Err(WorkflowError::Empty);
        }
        if max_iterations < 1 {
            return Err(WorkflowError::BadIterations(max_iterations));
        }
        let mut task_map = BTreeMap::new();
        for t in tasks {
            if t.id.0.is_empty() || t.id.0.chars().any(char::is_whitespace) {
                return Err(WorkflowError::BadTaskId(t.id.0));
            }
            if !(t.nominal_work > 0.0) {
                return Err(WorkflowError::BadWork {
                    id: t.id,
                    work: t.nominal_work,
                });
            }
            if !(t.output_data >= 0.0) {
                return Err(WorkflowError::BadOutputData {
                    id: t.id,
                    data: t.output_data,
                });
            }
            if task_map.insert(t.id.clone(), t.clone()).is_some() {
                return Err(WorkflowError::DuplicateTask(t.id));
            }
        }
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            for end in [&a, &b] {
                if !task_map.contains_key(end) {
                    return Err(WorkflowError::UnknownTask(end.clone()));
                }
            }
            if !edge_set.insert((a.clone(), b.clone())) {
                return Err(WorkflowError::DuplicateEdge(a, b));
            }
        }
        let graph = WorkflowGraph {
            tasks: task_map,
            edges: edge_set,
            loop_edge: None,
            max_iterations,
        };
        graph.check_acyclic()?;
        if let Some((src, tgt)) = &loop_edge {
            for end in [src, tgt] {
                if !graph.tasks.contains_key(end) {
                    return Err(WorkflowError::UnknownTask(end.clone()));
                }
            }
            if !graph.descendants(tgt).contains(src) {
                return Err(WorkflowError::LoopNotAncestor {
                    origin: src.clone(),
                    target: tgt.clone(),
                });
            }
        } else if max_iterations != 1 {
            return Err(WorkflowError::BadIterations(max_iterations));
        }
        Ok(WorkflowGraph {
            loop_edge,
            ..graph
        })
    }

    fn check_acyclic(&self) -> Result<(), WorkflowError> {
        let order = kahn_order(&self.tasks, &self.edges);
        if order.len() != self.tasks.len() {
            let in_order: BTreeSet<_> = order.into_iter().collect();
            let stuck = self
                .tasks
                .keys()
                .find(|id| !in_order.contains(*id))
                .expect("some task must be outside the order");
            return Err(WorkflowError::Cycle(stuck.clone()));
        }
        Ok(())
    }

    /// Tasks reachable from `start` along DAG edges, including `start` itself.
    fn descendants(&self, start: &TaskId) -> BTreeSet<TaskId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start.clone()];
        while let Some(id) = stack.pop() {
            if !seen.insert(id.clone()) {
                continue;
            }
            for (a, b) in &self.edges {
                if a == &id && !seen.contains(b) {
                    stack.push(b.clone());
                }
            }
        }
        seen
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskSpec> {
        self.tasks.get(id)
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(TaskId, TaskId)> {
        self.edges.iter()
    }

    pub fn loop_edge(&self) -> Option<&(TaskId, TaskId)> {
        self.loop_edge.as_ref()
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations
    }

    /// Topological order of the DAG, lexicographic among ready tasks.
    pub fn topological_order(&self) -> Vec<TaskId> {
        kahn_order(&self.tasks, &self.edges)
    }

    /// Materializes the set of task instances executed in iteration `k`.
    ///
    /// Iteration 0 contains every task. Later iterations contain the tasks
    /// reachable from the loop target. The loop edge itself never appears, so
    /// the result is acyclic.
    pub fn iteration_instance(&self, iteration: u32) -> Result<IterationDag, WorkflowError> {
        if iteration >= self.max_iterations {
            return Err(WorkflowError::IterationOutOfRange {
                iteration,
                max: self.max_iterations,
            });
        }
        let included: BTreeSet<TaskId> = if iteration == 0 {
            self.tasks.keys().cloned().collect()
        } else {
            let (_, target) = self
                .loop_edge
                .as_ref()
                .expect("iterations beyond 0 require a loop edge");
            self.descendants(target)
        };
        let tasks: Vec<TaskSpec> = included
            .iter()
            .map(|id| self.tasks[id].clone())
            .collect();
        let edges: Vec<(TaskId, TaskId)> = self
            .edges
            .iter()
            .filter(|(a, b)| included.contains(a) && included.contains(b))
            .cloned()
            .collect();
        Ok(IterationDag {
            iteration,
            tasks,
            edges,
        })
    }

    /// Renders the workflow in the document format parsed by [`parse_workflow`].
    pub fn render(&self) -> String {
        let mut out = String::new();
        for t in self.tasks.values() {
            out.push_str(&format!(
                "task {} {} {} {}\n",
                t.id, t.category, t.nominal_work, t.output_data
            ));
        }
        for (a, b) in &self.edges {
            out.push_str(&format!("edge {} {}\n", a, b));
        }
        if let Some((src, tgt)) = &self.loop_edge {
            out.push_str(&format!("loop {} {} {}\n", src, tgt, self.max_iterations));
        }
        out
    }
}

/// The acyclic task set of one iteration, with edges restricted to it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationDag {
    pub iteration: u32,
    /// Included tasks, sorted by id.
    pub tasks: Vec<TaskSpec>,
    /// DAG edges between included tasks.
    pub edges: Vec<(TaskId, TaskId)>,
}

impl IterationDag {
    pub fn instances(&self) -> impl Iterator<Item = TaskInstance> + '_ {
        self.tasks.iter().map(|t| TaskInstance {
            task_id: t.id.clone(),
            iteration: self.iteration,
        })
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| &t.id == id)
    }

    /// Predecessor ids per task, sorted.
    pub fn predecessors(&self, id: &TaskId) -> Vec<&TaskId> {
        self.edges
            .iter()
            .filter(|(_, b)| b == id)
            .map(|(a, _)| a)
            .collect()
    }

    /// Successor ids per task, sorted.
    pub fn successors(&self, id: &TaskId) -> Vec<&TaskId> {
        self.edges
            .iter()
            .filter(|(a, _)| a == id)
            .map(|(_, b)| b)
            .collect()
    }

    /// Topological order of the included tasks, lexicographic among ready ones.
    pub fn topological_order(&self) -> Vec<TaskId> {
        let map: BTreeMap<TaskId, TaskSpec> =
            self.tasks.iter().map(|t| (t.id.clone(), t.clone())).collect();
        let set: BTreeSet<(TaskId, TaskId)> = self.edges.iter().cloned().collect();
        kahn_order(&map, &set)
    }
}

fn kahn_order(
    tasks: &BTreeMap<TaskId, TaskSpec>,
    edges: &BTreeSet<(TaskId, TaskId)>,
) -> Vec<TaskId> {
    let mut indegree: BTreeMap<&TaskId, usize> = tasks.keys().map(|id| (id, 0)).collect();
    for (_, b) in edges {
        if let Some(d) = indegree.get_mut(b) {
            *d += 1;
        }
    }
    // Ready set is a BTreeSet, so ties resolve lexicographically.
    let mut ready: BTreeSet<&TaskId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(next) = ready.iter().next().cloned() {
        ready.remove(next);
        order.push(next.clone());
        for (a, b) in edges {
            if a == next {
                let d = indegree.get_mut(b).expect("edge endpoints are tasks");
                *d -= 1;
                if *d == 0 {
                    ready.insert(b);
                }
            }
        }
    }
    order
}

/// Parses a workflow document. See the module docs for the grammar.
pub fn parse_workflow(text: &str) -> Result<WorkflowGraph, WorkflowError> {
    let mut tasks = Vec::new();
    let mut edges = Vec::new();
    let mut loop_decl: Option<(TaskId, TaskId, u32)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let syntax = |msg: String| WorkflowError::Syntax { line: line_no, msg };
        match fields[0] {
            "task" => {
                if fields.len() != 5 {
                    return Err(syntax(format!(
                        "expected `task <id> <category> <nominal_work> <output_data>`, got {} field(s)",
                        fields.len()
                    )));
                }
                let nominal_work: f64 = fields[3]
                    .parse()
                    .map_err(|_| syntax(format!("invalid nominal_work {:?}", fields[3])))?;
                let output_data: f64 = fields[4]
                    .parse()
                    .map_err(|_| syntax(format!("invalid output_data {:?}", fields[4])))?;
                tasks.push(TaskSpec {
                    id: TaskId::new(fields[1]),
                    category: fields[2].to_string(),
                    nominal_work,
                    output_data,
                });
            }
            "edge" => {
                if fields.len() != 3 {
                    return Err(syntax(format!(
                        "expected `edge <from> <to>`, got {} field(s)",
                        fields.len()
                    )));
                }
                edges.push((TaskId::new(fields[1]), TaskId::new(fields[2])));
            }
            "loop" => {
                if fields.len() != 4 {
                    return Err(syntax(format!(
                        "expected `loop <from> <to> <max_iterations>`, got {} field(s)",
                        fields.len()
                    )));
                }
                if loop_decl.is_some() {
                    return Err(WorkflowError::DuplicateLoop);
                }
                let iters: u32 = fields[3]
                    .parse()
                    .map_err(|_| syntax(format!("invalid max_iterations {:?}", fields[3])))?;
                loop_decl = Some((TaskId::new(fields[1]), TaskId::new(fields[2]), iters));
            }
            other => {
                return Err(syntax(format!("unknown directive {:?}", other)));
            }
        }
    }
    let (loop_edge, max_iterations) = match loop_decl {
        Some((src, tgt, n)) => (Some((src, tgt)), n),
        None => (None, 1),
    };
    WorkflowGraph::new(tasks, edges, loop_edge, max_iterations)
}

/// Number of iterations the bundled dengue workflow runs by default.
pub const DENGUE_DEFAULT_ITERATIONS: u32 = 5;

/// The bundled dengue forecasting workflow.
///
/// An ingest task `A` fans out into six independent modeling tracks `B..G`,
/// one per input variable, which join at the forecast task `H`. A loop edge
/// from `H` back to `A` repeats the pipeline for five iterations. Track
/// workloads differ because the input variables differ in volume.
pub fn builtin_dengue_workflow() -> WorkflowGraph {
    let task = |id: &str, category: &str, work: f64, data: f64| TaskSpec {
        id: TaskId::new(id),
        category: category.to_string(),
        nominal_work: work,
        output_data: data,
    };
    let tasks = vec![
        task("A", "ingest", 600.0, 6.0),
        task("B", "model-climate", 3600.0, 1.0),
        task("C", "model-weather", 3200.0, 1.0),
        task("D", "model-incidence", 2000.0, 1.0),
        task("E", "model-geography", 1600.0, 1.0),
        task("F", "model-mobility", 1000.0, 1.0),
        task("G", "model-serotype", 600.0, 1.0),
        task("H", "forecast", 600.0, 0.5),
    ];
    let mut edges = Vec::new();
    for track in ["B", "C", "D", "E", "F", "G"] {
        edges.push((TaskId::new("A"), TaskId::new(track)));
        edges.push((TaskId::new(track), TaskId::new("H")));
    }
    WorkflowGraph::new(
        tasks,
        edges,
        Some((TaskId::new("H"), TaskId::new("A"))),
        DENGUE_DEFAULT_ITERATIONS,
    )
    .expect("builtin workflow is valid")
}
