//! Whole-shift runs: assign a job, execute it, fold the realized quality
//! into the state, move on to the next job.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{build_milp, SolveError, SolveReport, Solver};
use crate::dynamics::{to_millis, DynamicsError, JobReport, JobRun, RunOptions};
use crate::model::{
    AgentId, Assignment, JobId, JobSpec, MetricDef, MetricState, PerAgent, ShiftSpec, Task, TaskId,
};
use crate::monitor::{
    HumanEntry, MessageKind, Profile, RobotEntry, ScriptedMessage, Trace, TraceError,
};
use crate::quality::{evaluate, Exposure, MetricEvaluation, QualityError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("job {job}: {source}")]
    Solve { job: JobId, source: SolveError },
    #[error("job {job}: {source}")]
    Dynamics { job: JobId, source: DynamicsError },
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace does not match the scenario: {0}")]
    TraceMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftOptions {
    pub run: RunOptions,
    pub node_budget: u64,
    /// Replaces the trace seed when set.
    pub seed: Option<u64>,
}

impl Default for ShiftOptions {
    fn default() -> Self {
        ShiftOptions {
            run: RunOptions::default(),
            node_budget: crate::assignment::DEFAULT_NODE_BUDGET,
            seed: None,
        }
    }
}

impl ShiftOptions {
    pub fn without_reschedule(mut self) -> Self {
        self.run.reschedule = false;
        self
    }

    pub fn without_comms(mut self) -> Self {
        self.run.comms = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobOutcome {
    pub job: JobId,
    pub state_before: MetricState,
    pub assignment: Assignment,
    pub nodes_explored: u64,
    /// Metric estimate of the nominal assignment.
    pub planned: MetricEvaluation,
    pub report: JobReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub options: ShiftOptions,
    pub jobs: Vec<JobOutcome>,
    pub final_state: MetricState,
}

impl ShiftReport {
    pub fn job(&self, id: JobId) -> Option<&JobOutcome> {
        self.jobs.iter().find(|j| j.job == id)
    }

    pub fn total_cycle(&self) -> f64 {
        self.jobs.iter().map(|j| j.report.cycle_time).sum()
    }
}

/// Rejects trace entries for jobs or tasks the scenario does not have.
pub fn check_trace(shift: &ShiftSpec, trace: &Trace) -> Result<(), SimError> {
    trace.validate()?;
    let first = shift.jobs[0].id;
    let known = |job: Option<JobId>, task: TaskId| -> Result<(), SimError> {
        let id = job.unwrap_or(first);
        let spec = shift
            .job(id)
            .ok_or_else(|| SimError::TraceMismatch(format!("unknown job {id}")))?;
        if spec.task(task).is_none() {
            return Err(SimError::TraceMismatch(format!(
                "job {id} has no task {task}"
            )));
        }
        Ok(())
    };
    for h in &trace.human {
        known(h.job, h.task)?;
    }
    for r in &trace.robot {
        known(r.job, r.task)?;
    }
    for m in &trace.messages {
        known(m.job, m.task)?;
    }
    Ok(())
}

/// Runs every job of the shift in order.
pub fn run_shift(
    shift: &ShiftSpec,
    trace: &Trace,
    options: ShiftOptions,
) -> Result<ShiftReport, SimError> {
    check_trace(shift, trace)?;
    let mut trace = trace.clone();
    if let Some(seed) = options.seed {
        trace.seed = seed;
    }
    let first = shift.jobs[0].id;
    let mut state = MetricState::initial(&shift.metrics);
    let mut clock = 0;
    let mut jobs = Vec::with_capacity(shift.jobs.len());
    for job in &shift.jobs {
        let outcome = run_job(job, &shift.metrics, &state, &trace, first, options, clock)?;
        clock += to_millis(outcome.report.cycle_time);
        state = outcome.report.state_after.clone();
        jobs.push(outcome);
    }
    Ok(ShiftReport {
        options,
        jobs,
        final_state: state,
    })
}

/// Solves the assignment for `job` from the current quality state and
/// evaluates the metrics it predicts.
pub fn plan_job(
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    node_budget: u64,
) -> Result<(SolveReport, MetricEvaluation), SimError> {
    let solve = |source| SimError::Solve {
        job: job.id,
        source,
    };
    let inst = build_milp(job, state, metrics).map_err(solve)?;
    let solved = Solver::new(node_budget).solve(&inst).map_err(solve)?;
    let planned = evaluate(
        &Exposure::nominal(&solved.assignment, job),
        job,
        metrics,
        state,
    )?;
    Ok((solved, planned))
}

fn run_job(
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    trace: &Trace,
    first: JobId,
    options: ShiftOptions,
    start: u64,
) -> Result<JobOutcome, SimError> {
    let dynamics = |source| SimError::Dynamics {
        job: job.id,
        source,
    };
    let (solved, planned) = plan_job(job, metrics, state, options.node_budget)?;
    let mut run = JobRun::new(
        job.clone(),
        &solved.assignment,
        trace.for_job(job.id, first),
        options.run,
        start,
    )
    .map_err(dynamics)?;
    run.run_to_end().map_err(dynamics)?;
    let report = run.report(metrics, state).map_err(dynamics)?;
    Ok(JobOutcome {
        job: job.id,
        state_before: state.clone(),
        assignment: solved.assignment,
        nodes_explored: solved.nodes_explored,
        planned,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobDiff {
    pub job: JobId,
    pub cycle_on: f64,
    pub cycle_off: f64,
    pub idle_on: PerAgent<f64>,
    pub idle_off: PerAgent<f64>,
}

impl JobDiff {
    /// Negative when rescheduling shortens the job.
    pub fn delta_cycle(&self) -> f64 {
        self.cycle_on - self.cycle_off
    }

    pub fn delta_idle(&self) -> PerAgent<f64> {
        PerAgent::new(
            self.idle_on.human - self.idle_off.human,
            self.idle_on.robot - self.idle_off.robot,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDiff {
    pub jobs: Vec<JobDiff>,
    pub on: ShiftReport,
    pub off: ShiftReport,
}

impl PolicyDiff {
    pub fn total_delta_cycle(&self) -> f64 {
        self.jobs.iter().map(JobDiff::delta_cycle).sum()
    }

    pub fn table(&self) -> String {
        let mut out =
            String::from("job  c_on    c_off   dc      idleR_on idleR_off idleH_on idleH_off\n");
        for j in &self.jobs {
            out.push_str(&format!(
                "{:<4} {:<7.3} {:<7.3} {:<7.3} {:<8.3} {:<9.3} {:<8.3} {:.3}\n",
                j.job,
                j.cycle_on,
                j.cycle_off,
                j.delta_cycle(),
                j.idle_on.robot,
                j.idle_off.robot,
                j.idle_on.human,
                j.idle_off.human
            ));
        }
        out
    }
}

/// Runs the same trace with rescheduling on and off.
pub fn compare_policies(
    shift: &ShiftSpec,
    trace: &Trace,
    options: ShiftOptions,
) -> Result<PolicyDiff, SimError> {
    let mut on_opts = options;
    on_opts.run.reschedule = true;
    let on = run_shift(shift, trace, on_opts)?;
    let off = run_shift(shift, trace, on_opts.without_reschedule())?;
    let jobs = on
        .jobs
        .iter()
        .zip(&off.jobs)
        .map(|(a, b)| JobDiff {
            job: a.job,
            cycle_on: a.report.cycle_time,
            cycle_off: b.report.cycle_time,
            idle_on: a.report.idle,
            idle_off: b.report.idle,
        })
        .collect();
    Ok(PolicyDiff { jobs, on, off })
}

fn human(task: TaskId, duration: f64) -> HumanEntry {
    HumanEntry {
        job: None,
        task,
        duration,
        profile: Profile::Linear,
    }
}

fn robot(task: TaskId, duration: f64) -> RobotEntry {
    RobotEntry {
        job: None,
        task,
        duration: Some(duration),
        fail_after: None,
    }
}

/// First job of the assembly shift as observed: the weight task takes the
/// human 15 s, the packaging tasks run a little fast and the robot shaves
/// a second off each shape task. Everything else runs at nominal speed.
pub fn observed_trace() -> Trace {
    Trace {
        human: vec![
            human(5, 15.0),
            human(7, 23.0),
            human(8, 23.0),
            human(9, 18.0),
        ],
        robot: vec![
            robot(3, 11.0),
            robot(4, 11.0),
            robot(6, 20.0),
            robot(1, 12.0),
            robot(2, 12.0),
        ],
        messages: vec![],
        seed: 0,
        sigma: Some(0.0),
    }
}

/// The operator hands the weight task to the robot right after starting
/// it, then takes over a shape task from the robot's second level.
pub fn swap_trace() -> Trace {
    let message = |at, kind, task| ScriptedMessage {
        job: None,
        at,
        sender: AgentId::Human,
        kind,
        task,
    };
    Trace {
        messages: vec![
            message(1.0, MessageKind::Delegate, 5),
            message(30.0, MessageKind::Reassign, 2),
        ],
        seed: 0,
        sigma: Some(0.0),
        ..Trace::default()
    }
}

/// Random scripted trace over every task of every job: human durations are
/// nominal times a factor in `[0.6, 1.6]`, robot durations a factor in
/// `[0.8, 1.2]`. No messages and no failures.
pub fn random_trace(shift: &ShiftSpec, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Trace {
        seed,
        sigma: Some(0.0),
        ..Trace::default()
    };
    let round = |x: f64| (x * 10.0).round() / 10.0;
    for job in &shift.jobs {
        for t in &job.tasks {
            if let Some(h) = t.time_for(AgentId::Human) {
                trace.human.push(HumanEntry {
                    job: Some(job.id),
                    task: t.id,
                    duration: round(h * rng.random_range(0.6..1.6)).max(0.1),
                    profile: Profile::Linear,
                });
            }
            if let Some(r) = t.time_for(AgentId::Robot) {
                trace.robot.push(RobotEntry {
                    job: Some(job.id),
                    task: t.id,
                    duration: Some(round(r * rng.random_range(0.8..1.2)).max(0.1)),
                    fail_after: None,
                });
            }
        }
    }
    trace
}

/// Random job with `n` tasks: a random DAG (edges only from lower to
/// higher ids), integral nominal times in `[1, 20]`, and `metrics` quality
/// loads per task. Roughly one task in six is robot-incapable and one in
/// ten human-incapable, never both.
pub fn random_job(rng: &mut impl Rng, id: JobId, n: usize, metrics: usize) -> JobSpec {
    let mut tasks = Vec::with_capacity(n);
    for i in 1..=n as TaskId {
        let mut t = Task::new(
            i,
            rng.random_range(1..=20) as f64,
            rng.random_range(1..=20) as f64,
        )
        .with_attractiveness(rng.random_range(0..=10) as f64 / 10.0)
        .with_robot_distance(rng.random_range(0..=10) as f64 / 7.0)
        .with_quality_load(
            (0..metrics)
                .map(|_| rng.random_range(0..=3) as f64)
                .collect(),
        );
        match rng.random_range(0..30) {
            0..=4 => t = t.robot_incapable(),
            5..=7 => t = t.human_incapable(),
            _ => {}
        }
        t.apply_derived_weights();
        tasks.push(t);
    }
    let mut edges = Vec::new();
    for j in 2..=n as TaskId {
        for i in 1..j {
            if rng.random_bool(0.25) {
                edges.push((i, j));
            }
        }
    }
    JobSpec::new(id, tasks, edges).expect("edges point forward")
}
