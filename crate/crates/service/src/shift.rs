//! One live shift: a scheduler thread that owns the running job and paces
//! the simulation clock against wall time.

use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use hrsched::dynamics::{DynamicsError, Event, JobRun, Millis, RunOptions, ScheduleState};
use hrsched::model::{AgentId, Assignment, JobId, MetricState, ShiftSpec, TaskId};
use hrsched::monitor::{MessageKind, Trace};
use hrsched::quality::MetricEvaluation;
use hrsched::sim::{plan_job, JobOutcome, ShiftOptions, ShiftReport, SimError};
use serde::Serialize;
use tokio::sync::{oneshot, watch};

use crate::error::ApiError;

/// Longest the scheduler sleeps while a shift is running.
const TICK: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LogStatus {
    pub len: usize,
    pub closed: bool,
}

/// Append-only event log shared between the scheduler thread and any
/// number of stream subscribers.
pub struct EventLog {
    events: RwLock<Vec<Event>>,
    status: watch::Sender<LogStatus>,
}

impl EventLog {
    fn new() -> Self {
        EventLog {
            events: RwLock::new(Vec::new()),
            status: watch::Sender::new(LogStatus::default()),
        }
    }

    fn extend(&self, new: &[Event]) {
        if new.is_empty() {
            return;
        }
        let len = {
            let mut events = self.events.write().unwrap();
            events.extend_from_slice(new);
            events.len()
        };
        self.status.send_modify(|s| s.len = len);
    }

    fn close(&self) {
        self.status.send_modify(|s| s.closed = true);
    }

    pub fn get(&self, index: usize) -> Option<Event> {
        self.events.read().unwrap().get(index).cloned()
    }

    pub fn subscribe(&self) -> watch::Receiver<LogStatus> {
        self.status.subscribe()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Loaded,
    Running,
    Finished,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSummary {
    pub job: JobId,
    pub cycle_time: f64,
    pub metrics: MetricEvaluation,
}

/// Everything a console needs to draw the boards, taken in one go on the
/// scheduler thread.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub id: u64,
    #[serde(flatten)]
    pub status: Status,
    pub speed: f64,
    pub clock: Millis,
    pub job: Option<JobId>,
    pub schedule: Option<ScheduleState>,
    pub assignment: Option<Assignment>,
    pub human_estimate: Option<f64>,
    pub quality: MetricState,
    pub planned: Option<MetricEvaluation>,
    pub completed_jobs: Vec<JobSummary>,
}

pub enum Command {
    Start {
        speed: f64,
        reply: oneshot::Sender<Result<Snapshot, ApiError>>,
    },
    Snapshot {
        reply: oneshot::Sender<Snapshot>,
    },
    Message {
        kind: MessageKind,
        task: TaskId,
        reply: oneshot::Sender<Result<(), ApiError>>,
    },
    Complete {
        task: TaskId,
        reply: oneshot::Sender<Result<(), ApiError>>,
    },
    Report {
        reply: oneshot::Sender<Result<ShiftReport, ApiError>>,
    },
}

#[derive(Clone)]
pub struct ShiftHandle {
    pub commands: mpsc::Sender<Command>,
    pub log: Arc<EventLog>,
}

struct Current {
    run: JobRun,
    state_before: MetricState,
    assignment: Assignment,
    nodes_explored: u64,
    planned: MetricEvaluation,
    synced: usize,
}

struct LiveShift {
    id: u64,
    spec: ShiftSpec,
    trace: Trace,
    options: ShiftOptions,
    quality: MetricState,
    next_job: usize,
    current: Option<Current>,
    outcomes: Vec<JobOutcome>,
    status: Status,
    speed: f64,
    /// Wall instant and simulated time at which pacing last restarted.
    anchor: Option<(Instant, Millis)>,
    clock: Millis,
    log: Arc<EventLog>,
}

/// Plans the first job and starts the scheduler thread. The clock stays
/// frozen until the shift is started.
pub fn spawn(
    id: u64,
    spec: ShiftSpec,
    trace: Trace,
    run: RunOptions,
    node_budget: u64,
) -> Result<ShiftHandle, SimError> {
    let options = ShiftOptions {
        run: RunOptions { live: true, ..run },
        node_budget,
        seed: None,
    };
    let log = Arc::new(EventLog::new());
    let mut shift = LiveShift {
        id,
        quality: MetricState::initial(&spec.metrics),
        spec,
        trace,
        options,
        next_job: 0,
        current: None,
        outcomes: Vec::new(),
        status: Status::Loaded,
        speed: 1.0,
        anchor: None,
        clock: 0,
        log: log.clone(),
    };
    shift.open_next_job()?;
    let (commands, inbox) = mpsc::channel();
    thread::Builder::new()
        .name(format!("shift-{id}"))
        .spawn(move || shift.serve(inbox))
        .expect("spawning a scheduler thread");
    Ok(ShiftHandle { commands, log })
}

impl LiveShift {
    fn serve(mut self, inbox: mpsc::Receiver<Command>) {
        loop {
            let command = if self.status == Status::Running {
                match inbox.recv_timeout(self.wait()) {
                    Ok(c) => Some(c),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => return,
                }
            } else {
                match inbox.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            };
            self.pump();
            if let Some(c) = command {
                self.handle(c);
            }
        }
    }

    /// Wall time until the next scheduled event, capped at one tick.
    fn wait(&self) -> Duration {
        let (Some((wall, sim)), Some(next)) = (
            self.anchor,
            self.current.as_ref().and_then(|c| c.run.next_event_time()),
        ) else {
            return TICK;
        };
        let due =
            wall + Duration::from_secs_f64(next.saturating_sub(sim) as f64 / 1000.0 / self.speed);
        due.saturating_duration_since(Instant::now()).min(TICK)
    }

    fn target(&self) -> Millis {
        match self.anchor {
            Some((wall, sim)) => {
                sim + (wall.elapsed().as_secs_f64() * self.speed * 1000.0) as Millis
            }
            None => self.clock,
        }
    }

    fn handle(&mut self, command: Command) {
        match command {
            Command::Start { speed, reply } => {
                let r = self.start(speed).map(|()| self.snapshot());
                let _ = reply.send(r);
            }
            Command::Snapshot { reply } => {
                let _ = reply.send(self.snapshot());
            }
            Command::Message { kind, task, reply } => {
                let r = self.act(|run| run.post_message(AgentId::Human, kind, task));
                let _ = reply.send(r);
            }
            Command::Complete { task, reply } => {
                let r = self.act(|run| run.complete_human(task));
                let _ = reply.send(r);
            }
            Command::Report { reply } => {
                let r = match self.status {
                    Status::Finished => Ok(ShiftReport {
                        options: self.options,
                        jobs: self.outcomes.clone(),
                        final_state: self.quality.clone(),
                    }),
                    _ => Err(ApiError::Conflict("the shift has not finished".into())),
                };
                let _ = reply.send(r);
            }
        }
    }

    fn start(&mut self, speed: f64) -> Result<(), ApiError> {
        match self.status {
            Status::Finished => return Err(ApiError::Conflict("the shift is over".into())),
            Status::Failed { ref error } => return Err(ApiError::Conflict(error.clone())),
            Status::Loaded | Status::Running => {}
        }
        self.speed = speed;
        self.anchor = Some((Instant::now(), self.clock));
        self.status = Status::Running;
        Ok(())
    }

    /// Runs an operator action against the current job.
    fn act(
        &mut self,
        f: impl FnOnce(&mut JobRun) -> Result<Result<(), hrsched::dynamics::CommError>, DynamicsError>,
    ) -> Result<(), ApiError> {
        let Some(current) = self.current.as_mut() else {
            return Err(ApiError::Conflict("no job is running".into()));
        };
        let outcome = f(&mut current.run);
        self.sync();
        match outcome {
            Ok(r) => {
                self.roll_over();
                r.map_err(ApiError::from)
            }
            Err(e) => {
                self.fail(e.to_string());
                Err(ApiError::Internal(e.to_string()))
            }
        }
    }

    /// Advances the simulation to the paced wall-clock target.
    fn pump(&mut self) {
        if self.status != Status::Running {
            return;
        }
        let target = self.target();
        while let Some(current) = self.current.as_mut() {
            let step = match current.run.next_event_time() {
                Some(t) if t <= target => t,
                _ => target,
            };
            if let Err(e) = current.run.advance_to(step) {
                self.sync();
                self.fail(e.to_string());
                return;
            }
            self.sync();
            if !self.roll_over() && step == target {
                break;
            }
        }
        if self.current.is_some() {
            self.clock = self.clock.max(target);
        }
    }

    /// Copies new events of the running job into the shared log.
    fn sync(&mut self) {
        if let Some(c) = self.current.as_mut() {
            let events = c.run.events();
            self.log.extend(&events[c.synced..]);
            c.synced = events.len();
            self.clock = c.run.clock();
        }
    }

    /// Closes a finished job and opens the next one. Returns whether a job
    /// was closed.
    fn roll_over(&mut self) -> bool {
        if !self.current.as_ref().is_some_and(|c| c.run.is_finished()) {
            return false;
        }
        let c = self.current.take().unwrap();
        match c.run.report(&self.spec.metrics, &c.state_before) {
            Ok(report) => {
                self.quality = report.state_after.clone();
                self.outcomes.push(JobOutcome {
                    job: report.job,
                    state_before: c.state_before,
                    assignment: c.assignment,
                    nodes_explored: c.nodes_explored,
                    planned: c.planned,
                    report,
                });
            }
            Err(e) => {
                self.fail(e.to_string());
                return true;
            }
        }
        if let Err(e) = self.open_next_job() {
            self.fail(e.to_string());
        }
        true
    }

    fn open_next_job(&mut self) -> Result<(), SimError> {
        let Some(job) = self.spec.jobs.get(self.next_job).cloned() else {
            self.status = Status::Finished;
            self.log.close();
            return Ok(());
        };
        self.next_job += 1;
        let (solved, planned) = plan_job(
            &job,
            &self.spec.metrics,
            &self.quality,
            self.options.node_budget,
        )?;
        let dynamics = |source| SimError::Dynamics {
            job: job.id,
            source,
        };
        let trace = self.trace.for_job(job.id, self.spec.jobs[0].id);
        let run = JobRun::new(
            job.clone(),
            &solved.assignment,
            trace,
            self.options.run,
            self.clock,
        )
        .map_err(dynamics)?;
        self.current = Some(Current {
            run,
            state_before: self.quality.clone(),
            assignment: solved.assignment,
            nodes_explored: solved.nodes_explored,
            planned,
            synced: 0,
        });
        self.sync();
        // a job with nothing to do ends on the spot
        self.roll_over();
        Ok(())
    }

    fn fail(&mut self, error: String) {
        self.status = Status::Failed { error };
        self.current = None;
        self.log.close();
    }

    fn snapshot(&self) -> Snapshot {
        let c = self.current.as_ref();
        Snapshot {
            id: self.id,
            status: self.status.clone(),
            speed: self.speed,
            clock: self.clock,
            job: c.map(|c| c.run.job().id),
            schedule: c.map(|c| c.run.state().clone()),
            assignment: c.map(|c| c.assignment.clone()),
            human_estimate: c.and_then(|c| c.run.human_estimate()),
            quality: self.quality.clone(),
            planned: c.map(|c| c.planned.clone()),
            completed_jobs: self
                .outcomes
                .iter()
                .map(|o| JobSummary {
                    job: o.job,
                    cycle_time: o.report.cycle_time,
                    metrics: o.report.metrics.clone(),
                })
                .collect(),
        }
    }
}
