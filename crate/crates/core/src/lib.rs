//! Human-robot collaborative scheduling.
//!
//! A shift is a sequence of jobs. Each job is a precedence graph of tasks
//! that a human operator and a robot share. Before a job starts,
//! [`assignment`] places every task on an agent and a level by solving an
//! exact integer program that trades assignment weights against cycle time
//! while keeping human workload metrics inside their bounds. While the job
//! runs, [`dynamics`] keeps the two agents busy: it lets the robot pull work
//! from the human side when it would otherwise wait, and it applies swap
//! requests from either agent. [`sim`] drives whole shifts through traces.

pub mod assignment;
pub mod dynamics;
pub mod model;
pub mod monitor;
pub mod quality;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use assignment::{assign, build_milp, MilpInstance, SolveError, SolveReport, Solver};
pub use model::{
    AgentId, Assignment, JobId, JobSpec, Level, MetricDef, MetricKind, MetricState, PerAgent,
    ShiftSpec, Task, TaskId,
};
pub use scenario::{assembly_shift, load_scenario, parse_scenario};
