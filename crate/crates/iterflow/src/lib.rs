//! Iterative workflow scheduling and cost simulation for hybrid clouds.
//!
//! The library plans and simulates workflows that loop: a DAG of tasks runs
//! for several iterations, and between iterations the system can learn from
//! observed runtimes and re-provision. Planning happens in three phases, all
//! timed by one deterministic dispatcher:
//!
//! 1. greedy placement for minimum makespan, provisioning freely,
//! 2. consolidation onto fewer machines at equal makespan,
//! 3. downgrading public machines to cheaper types inside the paid time slot.
//!
//! The simulator executes schedules with optional multiplicative runtime
//! noise, feeds measurements back into a runtime profile, and decides at each
//! iteration boundary whether a fresh plan is enough of an improvement to
//! adopt. Costs follow a billed-quantum model: public machines pay for every
//! started quantum of their lease, private machines are free.

pub mod cloud;
pub mod optimizer;
pub mod oracle;
pub mod profile;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod schedule;
pub mod scheduler;
pub mod sim;
pub mod workflow;
