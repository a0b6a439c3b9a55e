//! Runtime execution of a nominal assignment.
//!
//! The scheduler walks the levels in order. Inside a level each agent pulls
//! the next ready task from its own tuple. When the robot runs out of work
//! while the human is still busy, [`reschedule`] pulls future robot tasks
//! that fit into the human's estimated remaining time. Swap requests from
//! either agent go through [`communicate`], human requests first.
//!
//! [`JobRun`] is a discrete-event engine over integer milliseconds. Events
//! at the same instant are ordered completion, then message, then task id,
//! and are applied together before the scheduler settles.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, Assignment, JobId, JobSpec, MetricDef, MetricState, PerAgent, TaskId};
use crate::monitor::{
    monitor_h, HumanTrace, JobTrace, MessageKind, RobotBehavior, ScriptedMessage,
};
use crate::quality::{evaluate, update_jq, Exposure, MetricEvaluation, QualityError, Realization};

/// Simulation time in milliseconds.
pub type Millis = u64;

/// Duration of the robot's homing move after an abort.
pub const DEFAULT_HOME_SECS: f64 = 5.0;

pub fn to_millis(secs: f64) -> Millis {
    (secs * 1000.0).round().max(0.0) as Millis
}

pub fn to_secs(ms: Millis) -> f64 {
    ms as f64 / 1000.0
}

/// An entry of a robot tuple: a job task or the synthetic homing move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Task(TaskId),
    Home,
}

impl Slot {
    pub fn task(self) -> Option<TaskId> {
        match self {
            Slot::Task(id) => Some(id),
            Slot::Home => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SlotRepr {
    Task(TaskId),
    Home(String),
}

impl Serialize for Slot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Slot::Task(id) => SlotRepr::Task(id),
            Slot::Home => SlotRepr::Home("home".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match SlotRepr::deserialize(d)? {
            SlotRepr::Task(id) => Ok(Slot::Task(id)),
            SlotRepr::Home(s) if s == "home" => Ok(Slot::Home),
            SlotRepr::Home(s) => Err(serde::de::Error::custom(format!("unknown slot {s:?}"))),
        }
    }
}

/// A task an agent is executing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Running {
    pub slot: Slot,
    pub start: Millis,
    pub level: usize,
    #[serde(skip)]
    token: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Current level, 1-based. One past the last level once the job is over.
    pub level: usize,
    #[serde(rename = "S_H")]
    pub human: Vec<VecDeque<TaskId>>,
    #[serde(rename = "S_R")]
    pub robot: Vec<VecDeque<Slot>>,
    pub current: PerAgent<Option<Running>>,
    pub completed: BTreeSet<TaskId>,
    pub dropped: BTreeSet<TaskId>,
    pub clock: Millis,
}

/// Where a task currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Queued(AgentId, usize),
    Running(AgentId),
    Completed,
    Dropped,
    Absent,
}

impl ScheduleState {
    pub fn from_assignment(assignment: &Assignment) -> Self {
        ScheduleState {
            level: 1,
            human: assignment
                .levels
                .iter()
                .map(|l| l.human.iter().copied().collect())
                .collect(),
            robot: assignment
                .levels
                .iter()
                .map(|l| l.robot.iter().map(|&t| Slot::Task(t)).collect())
                .collect(),
            current: PerAgent::default(),
            completed: BTreeSet::new(),
            dropped: BTreeSet::new(),
            clock: 0,
        }
    }

    pub fn level_count(&self) -> usize {
        self.human.len()
    }

    pub fn is_finished(&self) -> bool {
        self.level > self.level_count()
    }

    /// `End_H` / `End_R`: the agent has no task in progress.
    pub fn end(&self, agent: AgentId) -> bool {
        self.current[agent].is_none()
    }

    pub fn current_task(&self, agent: AgentId) -> Option<TaskId> {
        self.current[agent].and_then(|r| r.slot.task())
    }

    fn queue_len(&self, agent: AgentId, level: usize) -> usize {
        match agent {
            AgentId::Human => self.human.get(level - 1).map_or(0, VecDeque::len),
            AgentId::Robot => self.robot.get(level - 1).map_or(0, VecDeque::len),
        }
    }

    pub fn locate(&self, task: TaskId) -> Location {
        if self.completed.contains(&task) {
            return Location::Completed;
        }
        if self.dropped.contains(&task) {
            return Location::Dropped;
        }
        for agent in AgentId::ALL {
            if self.current_task(agent) == Some(task) {
                return Location::Running(agent);
            }
        }
        if let Some(l) = self.human.iter().position(|q| q.contains(&task)) {
            return Location::Queued(AgentId::Human, l + 1);
        }
        if let Some(l) = self
            .robot
            .iter()
            .position(|q| q.contains(&Slot::Task(task)))
        {
            return Location::Queued(AgentId::Robot, l + 1);
        }
        Location::Absent
    }

    fn remove_queued(&mut self, task: TaskId) {
        for q in &mut self.human {
            q.retain(|&t| t != task);
        }
        for q in &mut self.robot {
            q.retain(|&s| s != Slot::Task(task));
        }
    }

    /// Every task of `job` is in exactly one place: a queue, an agent's
    /// hands, the completed set or the dropped set.
    pub fn check_invariants(&self, job: &JobSpec) -> Result<(), String> {
        let mut seen: BTreeMap<TaskId, &str> = BTreeMap::new();
        let mut put = |id: TaskId, place: &'static str| match seen.insert(id, place) {
            Some(prev) => Err(format!("task {id} both in {prev} and {place}")),
            None => Ok(()),
        };
        for q in &self.human {
            for &t in q {
                put(t, "S_H")?;
            }
        }
        for q in &self.robot {
            for t in q.iter().filter_map(|s| s.task()) {
                put(t, "S_R")?;
            }
        }
        if let Some(t) = self.current_task(AgentId::Human) {
            put(t, "T_H")?;
        }
        if let Some(t) = self.current_task(AgentId::Robot) {
            put(t, "T_R")?;
        }
        for &t in &self.completed {
            put(t, "completed")?;
        }
        for &t in &self.dropped {
            put(t, "dropped")?;
        }
        let all: BTreeSet<TaskId> = job.task_ids().collect();
        let placed: BTreeSet<TaskId> = seen.keys().copied().collect();
        if all != placed {
            return Err(format!(
                "placed tasks {placed:?} differ from job tasks {all:?}"
            ));
        }
        Ok(())
    }
}

fn ready(job: &JobSpec, state: &ScheduleState, task: TaskId) -> bool {
    job.predecessors(task)
        .all(|p| state.completed.contains(&p) || state.dropped.contains(&p))
}

/// Pops the first task of `agent`'s tuple at the current level whose
/// predecessors are all done. `None` when the tuple is exhausted or blocked.
pub fn next(state: &mut ScheduleState, agent: AgentId, job: &JobSpec) -> Option<Slot> {
    let l = state.level.checked_sub(1)?;
    match agent {
        AgentId::Human => {
            let q = state.human.get(l)?;
            let pos = q.iter().position(|&t| ready(job, state, t))?;
            state.human[l].remove(pos).map(Slot::Task)
        }
        AgentId::Robot => {
            let q = state.robot.get(l)?;
            let pos = q.iter().position(|&s| match s {
                Slot::Home => true,
                Slot::Task(t) => ready(job, state, t),
            })?;
            state.robot[l].remove(pos)
        }
    }
}

/// A future robot task considered for pulling forward.
#[derive(Debug, Clone, PartialEq)]
pub struct FillCandidate {
    pub task: TaskId,
    pub time: f64,
    pub predecessors: Vec<TaskId>,
}

/// Greedy first-fit scan: keeps each candidate, in order, whose
/// predecessors are available or already kept and whose time still fits
/// in the budget.
pub fn fill(
    candidates: &[FillCandidate],
    available: &BTreeSet<TaskId>,
    budget: f64,
) -> Vec<TaskId> {
    let mut used = 0.0;
    let mut picked: Vec<TaskId> = Vec::new();
    for c in candidates {
        let ok = c
            .predecessors
            .iter()
            .all(|p| available.contains(p) || picked.contains(p));
        if ok && used + c.time <= budget {
            used += c.time;
            picked.push(c.task);
        }
    }
    picked
}

/// Pulls future robot tasks into the current level when the human's
/// remaining time `t_res` exceeds the shortest eligible one. Returns the
/// pulled tasks in execution order.
pub fn reschedule(state: &mut ScheduleState, job: &JobSpec, t_res: f64) -> Vec<TaskId> {
    let l = state.level;
    if l == 0 || l > state.level_count() {
        return Vec::new();
    }
    let mut available: BTreeSet<TaskId> = state.completed.clone();
    available.extend(state.dropped.iter().copied());
    available.extend(state.robot[l - 1].iter().filter_map(|s| s.task()));
    available.extend(state.current_task(AgentId::Robot));

    let candidates: Vec<FillCandidate> = state.robot[l..]
        .iter()
        .flatten()
        .filter_map(|s| s.task())
        .filter_map(|t| {
            let time = job.task(t)?.time_for(AgentId::Robot)?;
            Some(FillCandidate {
                task: t,
                time,
                predecessors: job.predecessors(t).collect(),
            })
        })
        .collect();
    let shortest = candidates
        .iter()
        .filter(|c| c.predecessors.iter().all(|p| available.contains(p)))
        .map(|c| c.time)
        .fold(f64::INFINITY, f64::min);
    if t_res.is_nan() || t_res <= shortest {
        return Vec::new();
    }
    let picked = fill(&candidates, &available, t_res);
    for &t in &picked {
        state.remove_queued(t);
        state.robot[l - 1].push_back(Slot::Task(t));
    }
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: AgentId,
    pub kind: MessageKind,
    pub task: TaskId,
    pub at: Millis,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
pub enum CommError {
    #[error("task {0} does not belong to the job")]
    UnknownTask(TaskId),
    #[error("swap of task {task} rejected: {reason}")]
    RejectedSwap { task: TaskId, reason: String },
    #[error("only the human can reassign")]
    InvalidSender,
    #[error("communication is disabled")]
    CommsDisabled,
    #[error("task {0} is not the human's current task")]
    NotExecuting(TaskId),
    #[error("the job is over")]
    JobFinished,
}

/// Effect of an accepted message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swap {
    pub task: TaskId,
    pub to: AgentId,
    pub level: usize,
    /// Execution interrupted by the swap.
    pub aborted: Option<(AgentId, Running)>,
}

fn rejected(task: TaskId, reason: &str) -> CommError {
    CommError::RejectedSwap {
        task,
        reason: reason.into(),
    }
}

fn apply(state: &mut ScheduleState, job: &JobSpec, m: &Message) -> Result<Swap, CommError> {
    let task = job.task(m.task).ok_or(CommError::UnknownTask(m.task))?;
    if m.kind == MessageKind::Reassign && m.sender != AgentId::Human {
        return Err(CommError::InvalidSender);
    }
    // reassign pulls from the robot; delegate pushes away from the sender
    let (from, to) = match m.kind {
        MessageKind::Reassign => (AgentId::Robot, AgentId::Human),
        MessageKind::Delegate => (m.sender, m.sender.other()),
    };
    if !task.can_execute(to) {
        return Err(rejected(m.task, &format!("{to} cannot execute it")));
    }
    let here = state.level;
    match state.locate(m.task) {
        Location::Running(a) if a == from => {
            let running = state.current[from].take().expect("running");
            match to {
                AgentId::Human => state.human[here - 1].push_front(m.task),
                AgentId::Robot => state.robot[here - 1].push_front(Slot::Task(m.task)),
            }
            if from == AgentId::Robot {
                state.robot[here - 1].push_front(Slot::Home);
            }
            Ok(Swap {
                task: m.task,
                to,
                level: here,
                aborted: Some((from, running)),
            })
        }
        Location::Queued(a, level) if a == from && level >= here => {
            state.remove_queued(m.task);
            match to {
                AgentId::Human => state.human[level - 1].push_front(m.task),
                AgentId::Robot => state.robot[level - 1].push_front(Slot::Task(m.task)),
            }
            Ok(Swap {
                task: m.task,
                to,
                level,
                aborted: None,
            })
        }
        _ => Err(rejected(m.task, &format!("not pending on the {from}"))),
    }
}

/// Applies the human's message, then the robot's.
pub fn communicate(
    state: &mut ScheduleState,
    job: &JobSpec,
    from_human: Option<&Message>,
    from_robot: Option<&Message>,
) -> PerAgent<Option<Result<Swap, CommError>>> {
    if state.is_finished() {
        return PerAgent::new(
            from_human.map(|_| Err(CommError::JobFinished)),
            from_robot.map(|_| Err(CommError::JobFinished)),
        );
    }
    let human = from_human.map(|m| apply(state, job, m));
    let robot = from_robot.map(|m| apply(state, job, m));
    PerAgent::new(human, robot)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub reschedule: bool,
    pub comms: bool,
    pub home_secs: f64,
    /// Human completions come from [`JobRun::complete_human`] instead of the
    /// trace.
    pub live: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            reschedule: true,
            comms: true,
            home_secs: DEFAULT_HOME_SECS,
            live: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    JobStart,
    LevelStart {
        level: usize,
    },
    Start {
        agent: AgentId,
        task: Slot,
        level: usize,
    },
    Complete {
        agent: AgentId,
        task: Slot,
        duration: f64,
    },
    Progress {
        task: TaskId,
        percent: f64,
        t_res: f64,
    },
    Failure {
        task: TaskId,
    },
    Abort {
        agent: AgentId,
        task: Slot,
    },
    Message {
        sender: AgentId,
        message: MessageKind,
        task: TaskId,
    },
    Rejected {
        sender: AgentId,
        message: MessageKind,
        task: TaskId,
        reason: String,
    },
    Reschedule {
        t_res: f64,
        pulled: Vec<TaskId>,
    },
    Dropped {
        tasks: Vec<TaskId>,
    },
    LevelEnd {
        level: usize,
        cycle: f64,
    },
    JobEnd {
        cycle: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: Millis,
    pub job: JobId,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Completed,
    Aborted,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub agent: AgentId,
    pub task: Slot,
    pub level: usize,
    pub start: f64,
    pub end: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobReport {
    pub job: JobId,
    pub executions: Vec<Execution>,
    pub level_cycles: Vec<f64>,
    pub cycle_time: f64,
    pub idle: PerAgent<f64>,
    pub realized: BTreeMap<TaskId, Realization>,
    pub metrics: MetricEvaluation,
    pub state_after: MetricState,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("level {0} cannot progress: every remaining task waits on another")]
    Deadlock(usize),
    #[error("the job has not finished")]
    NotFinished,
    #[error(transparent)]
    Quality(#[from] QualityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum PendingKind {
    Finish(AgentId, u64),
    Fail(u64),
    Message(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    at: Millis,
    class: u8,
    task: TaskId,
    seq: u64,
    kind: PendingKind,
}

#[derive(Debug, Clone, Copy)]
struct Inbound {
    id: u64,
    message: Message,
    failure: bool,
}

/// One job in execution.
#[derive(Debug, Clone)]
pub struct JobRun {
    job: JobSpec,
    trace: JobTrace,
    options: RunOptions,
    state: ScheduleState,
    started_at: Millis,
    level_started: Millis,
    pending: BinaryHeap<Reverse<Pending>>,
    scripted: Vec<Message>,
    inbox: PerAgent<VecDeque<Inbound>>,
    outcomes: BTreeMap<u64, Result<(), CommError>>,
    human_trace: Option<HumanTrace>,
    robot_behavior: Option<RobotBehavior>,
    checked: Option<(Millis, u64)>,
    seq: u64,
    tokens: u64,
    log: Vec<Event>,
    executions: Vec<Execution>,
    level_cycles: Vec<f64>,
    realized: BTreeMap<TaskId, Realization>,
}

impl JobRun {
    /// Starts `job` at absolute time `start` and runs it up to the first
    /// point where time has to pass.
    pub fn new(
        job: JobSpec,
        assignment: &Assignment,
        trace: JobTrace,
        options: RunOptions,
        start: Millis,
    ) -> Result<Self, DynamicsError> {
        let mut state = ScheduleState::from_assignment(assignment);
        state.clock = start;
        let scripted: Vec<Message> = trace
            .messages
            .iter()
            .map(|m: &ScriptedMessage| Message {
                sender: m.sender,
                kind: m.kind,
                task: m.task,
                at: start + to_millis(m.at),
            })
            .collect();
        let mut run = JobRun {
            job,
            trace,
            options,
            state,
            started_at: start,
            level_started: start,
            pending: BinaryHeap::new(),
            scripted,
            inbox: PerAgent::default(),
            outcomes: BTreeMap::new(),
            human_trace: None,
            robot_behavior: None,
            checked: None,
            seq: 0,
            tokens: 0,
            log: Vec::new(),
            executions: Vec::new(),
            level_cycles: Vec::new(),
            realized: BTreeMap::new(),
        };
        for i in 0..run.scripted.len() {
            let m = run.scripted[i];
            run.push(m.at, 1, m.task, PendingKind::Message(i));
        }
        run.emit(EventKind::JobStart);
        if run.state.is_finished() {
            run.emit(EventKind::JobEnd { cycle: 0.0 });
        } else {
            run.emit(EventKind::LevelStart { level: 1 });
        }
        run.settle()?;
        Ok(run)
    }

    pub fn job(&self) -> &JobSpec {
        &self.job
    }

    pub fn state(&self) -> &ScheduleState {
        &self.state
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_finished()
    }

    pub fn clock(&self) -> Millis {
        self.state.clock
    }

    /// Remaining-time estimate of the human's current task, if any.
    pub fn human_estimate(&self) -> Option<f64> {
        let running = self.state.current.human?;
        let task = running.slot.task()?;
        let nominal = self.job.task(task)?.time_for(AgentId::Human)?;
        monitor_h(
            self.human_trace.as_ref(),
            nominal,
            to_secs(running.start),
            to_secs(self.state.clock),
        )
        .ok()
    }

    pub fn next_event_time(&self) -> Option<Millis> {
        if self.is_finished() {
            return None;
        }
        self.pending.peek().map(|Reverse(p)| p.at)
    }

    /// Applies every event up to `t` and moves the clock to `t`.
    pub fn advance_to(&mut self, t: Millis) -> Result<(), DynamicsError> {
        while let Some(&Reverse(p)) = self.pending.peek() {
            if p.at > t || self.is_finished() {
                break;
            }
            let at = p.at;
            self.state.clock = self.state.clock.max(at);
            while let Some(&Reverse(q)) = self.pending.peek() {
                if q.at != at {
                    break;
                }
                self.pending.pop();
                self.handle(q);
            }
            self.settle()?;
        }
        if !self.is_finished() {
            self.state.clock = self.state.clock.max(t);
        }
        Ok(())
    }

    /// Delivers a message now and returns its outcome.
    pub fn post_message(
        &mut self,
        sender: AgentId,
        kind: MessageKind,
        task: TaskId,
    ) -> Result<Result<(), CommError>, DynamicsError> {
        if self.is_finished() {
            return Ok(Err(CommError::JobFinished));
        }
        if self.job.task(task).is_none() {
            return Ok(Err(CommError::UnknownTask(task)));
        }
        let id = self.enqueue(
            Message {
                sender,
                kind,
                task,
                at: self.state.clock,
            },
            false,
        );
        self.settle()?;
        Ok(self
            .outcomes
            .remove(&id)
            .unwrap_or(Err(CommError::JobFinished)))
    }

    /// The human declares their current task done.
    pub fn complete_human(&mut self, task: TaskId) -> Result<Result<(), CommError>, DynamicsError> {
        if self.is_finished() {
            return Ok(Err(CommError::JobFinished));
        }
        if self.job.task(task).is_none() {
            return Ok(Err(CommError::UnknownTask(task)));
        }
        match self.state.current.human {
            Some(r) if r.slot == Slot::Task(task) => {
                self.finish(AgentId::Human, r.token);
                self.settle()?;
                Ok(Ok(()))
            }
            _ => Ok(Err(CommError::NotExecuting(task))),
        }
    }

    /// Runs to the end using trace-driven completions.
    pub fn run_to_end(&mut self) -> Result<(), DynamicsError> {
        while let Some(t) = self.next_event_time() {
            self.advance_to(t)?;
        }
        if self.is_finished() {
            Ok(())
        } else {
            Err(DynamicsError::NotFinished)
        }
    }

    /// Closes the job: realized durations, cycle, idle times and the
    /// updated quality state.
    pub fn report(
        &self,
        metrics: &[MetricDef],
        state: &MetricState,
    ) -> Result<JobReport, DynamicsError> {
        if !self.is_finished() {
            return Err(DynamicsError::NotFinished);
        }
        let cycle_time = to_secs(self.state.clock - self.started_at);
        let mut busy = PerAgent::new(0.0, 0.0);
        for e in &self.executions {
            busy[e.agent] += e.end - e.start;
        }
        let realized = self.realized.clone();
        let metrics_eval = evaluate(
            &Exposure::realized(&realized, cycle_time),
            &self.job,
            metrics,
            state,
        )?;
        let state_after = update_jq(state, &self.job, metrics, &realized, cycle_time)?;
        Ok(JobReport {
            job: self.job.id,
            executions: self.executions.clone(),
            level_cycles: self.level_cycles.clone(),
            cycle_time,
            idle: PerAgent::new(cycle_time - busy.human, cycle_time - busy.robot),
            realized,
            metrics: metrics_eval,
            state_after,
            events: self.log.clone(),
        })
    }

    fn emit(&mut self, kind: EventKind) {
        self.log.push(Event {
            t: self.state.clock,
            job: self.job.id,
            kind,
        });
    }

    fn push(&mut self, at: Millis, class: u8, task: TaskId, kind: PendingKind) {
        self.seq += 1;
        self.pending.push(Reverse(Pending {
            at,
            class,
            task,
            seq: self.seq,
            kind,
        }));
    }

    fn enqueue(&mut self, message: Message, failure: bool) -> u64 {
        self.seq += 1;
        let entry = Inbound {
            id: self.seq,
            message,
            failure,
        };
        if failure {
            self.inbox[message.sender].push_front(entry);
        } else {
            self.inbox[message.sender].push_back(entry);
        }
        self.seq
    }

    fn handle(&mut self, p: Pending) {
        match p.kind {
            PendingKind::Finish(agent, token) => self.finish(agent, token),
            PendingKind::Fail(token) => {
                let Some(r) = self.state.current.robot.filter(|r| r.token == token) else {
                    return;
                };
                let Slot::Task(task) = r.slot else { return };
                self.emit(EventKind::Failure { task });
                let message = Message {
                    sender: AgentId::Robot,
                    kind: MessageKind::Delegate,
                    task,
                    at: self.state.clock,
                };
                self.enqueue(message, true);
            }
            PendingKind::Message(i) => {
                let m = self.scripted[i];
                self.enqueue(m, false);
            }
        }
    }

    fn record(&mut self, agent: AgentId, r: Running, outcome: Outcome) {
        self.executions.push(Execution {
            agent,
            task: r.slot,
            level: r.level,
            start: to_secs(r.start),
            end: to_secs(self.state.clock),
            outcome,
        });
    }

    fn finish(&mut self, agent: AgentId, token: u64) {
        let Some(r) = self.state.current[agent].filter(|r| r.token == token) else {
            return;
        };
        self.state.current[agent] = None;
        self.record(agent, r, Outcome::Completed);
        let duration = to_secs(self.state.clock - r.start);
        if let Slot::Task(task) = r.slot {
            self.state.completed.insert(task);
            self.realized
                .insert(task, Realization::Executed { agent, duration });
        }
        self.emit(EventKind::Complete {
            agent,
            task: r.slot,
            duration,
        });
    }

    fn start(&mut self, agent: AgentId, slot: Slot) {
        self.tokens += 1;
        let token = self.tokens;
        let now = self.state.clock;
        self.state.current[agent] = Some(Running {
            slot,
            start: now,
            level: self.state.level,
            token,
        });
        self.emit(EventKind::Start {
            agent,
            task: slot,
            level: self.state.level,
        });
        let id = slot.task().unwrap_or(0);
        match (agent, slot) {
            (AgentId::Robot, Slot::Home) => {
                self.robot_behavior = None;
                let at = now + to_millis(self.options.home_secs);
                self.push(at, 0, id, PendingKind::Finish(agent, token));
            }
            (AgentId::Robot, Slot::Task(task)) => {
                let nominal = self
                    .job
                    .task(task)
                    .and_then(|t| t.time_for(AgentId::Robot))
                    .unwrap_or(0.0);
                let b = self.trace.robot(task, nominal);
                self.robot_behavior = Some(b);
                match b.fail_after {
                    Some(f) if f < b.duration => {
                        self.push(now + to_millis(f), 0, id, PendingKind::Fail(token))
                    }
                    _ => self.push(
                        now + to_millis(b.duration).max(1),
                        0,
                        id,
                        PendingKind::Finish(agent, token),
                    ),
                }
            }
            (AgentId::Human, Slot::Task(task)) => {
                let nominal = self
                    .job
                    .task(task)
                    .and_then(|t| t.time_for(AgentId::Human))
                    .unwrap_or(0.0);
                let scripted = self.trace.human.get(&task).cloned();
                let h = if self.options.live {
                    scripted.unwrap_or_else(|| HumanTrace::linear(nominal.max(1e-3)))
                } else {
                    self.trace.human(task, nominal)
                };
                if !self.options.live {
                    let at = now + to_millis(h.duration).max(1);
                    self.push(at, 0, id, PendingKind::Finish(agent, token));
                }
                self.human_trace = Some(h);
            }
            (AgentId::Human, Slot::Home) => unreachable!("homing is robot-only"),
        }
    }

    fn robot_check(&mut self) -> bool {
        if !self.options.reschedule
            || !self.state.end(AgentId::Robot)
            || self.state.queue_len(AgentId::Robot, self.state.level) > 0
        {
            return false;
        }
        let Some(h) = self.state.current.human else {
            return false;
        };
        let Slot::Task(task) = h.slot else {
            return false;
        };
        if self.checked == Some((self.state.clock, h.token)) {
            return false;
        }
        self.checked = Some((self.state.clock, h.token));
        let Some(t_res) = self.human_estimate() else {
            return false;
        };
        let elapsed = to_secs(self.state.clock - h.start);
        let percent = self
            .human_trace
            .as_ref()
            .map_or(0.0, |t| t.percent_complete(elapsed));
        self.emit(EventKind::Progress {
            task,
            percent,
            t_res,
        });
        let pulled = reschedule(&mut self.state, &self.job, t_res);
        if pulled.is_empty() {
            return false;
        }
        self.emit(EventKind::Reschedule { t_res, pulled });
        true
    }

    fn take_message(&mut self, agent: AgentId) -> Option<Inbound> {
        loop {
            let m = self.inbox[agent].pop_front()?;
            if self.options.comms || m.failure {
                return Some(m);
            }
            self.outcomes.insert(m.id, Err(CommError::CommsDisabled));
            self.emit(EventKind::Rejected {
                sender: m.message.sender,
                message: m.message.kind,
                task: m.message.task,
                reason: CommError::CommsDisabled.to_string(),
            });
        }
    }

    fn read_messages(&mut self) -> bool {
        let human = self.take_message(AgentId::Human);
        let robot = self.take_message(AgentId::Robot);
        if human.is_none() && robot.is_none() {
            return false;
        }
        let results = communicate(
            &mut self.state,
            &self.job,
            human.as_ref().map(|m| &m.message),
            robot.as_ref().map(|m| &m.message),
        );
        for (inbound, result) in [(human, results.human), (robot, results.robot)] {
            let (Some(inbound), Some(result)) = (inbound, result) else {
                continue;
            };
            let m = inbound.message;
            match &result {
                Ok(swap) => {
                    self.emit(EventKind::Message {
                        sender: m.sender,
                        message: m.kind,
                        task: m.task,
                    });
                    if let Some((agent, running)) = swap.aborted {
                        let outcome = if inbound.failure {
                            Outcome::Failed
                        } else {
                            Outcome::Aborted
                        };
                        self.record(agent, running, outcome);
                        self.emit(EventKind::Abort {
                            agent,
                            task: running.slot,
                        });
                    }
                }
                Err(e) => {
                    self.emit(EventKind::Rejected {
                        sender: m.sender,
                        message: m.kind,
                        task: m.task,
                        reason: e.to_string(),
                    });
                    if inbound.failure {
                        self.drop_failed(m.task);
                    }
                }
            }
            self.outcomes.insert(inbound.id, result.map(|_| ()));
        }
        true
    }

    /// The robot failed a task the human cannot take over: the task and
    /// everything downstream of it are abandoned and the robot homes.
    fn drop_failed(&mut self, task: TaskId) {
        if let Some(r) = self
            .state
            .current
            .robot
            .filter(|r| r.slot == Slot::Task(task))
        {
            self.state.current.robot = None;
            self.record(AgentId::Robot, r, Outcome::Failed);
            self.emit(EventKind::Abort {
                agent: AgentId::Robot,
                task: r.slot,
            });
            let l = self.state.level;
            self.state.robot[l - 1].push_front(Slot::Home);
        }
        let mut gone = vec![task];
        gone.extend(self.job.descendants(task));
        let gone: Vec<TaskId> = gone
            .into_iter()
            .filter(|&t| !self.state.completed.contains(&t) && self.state.dropped.insert(t))
            .collect();
        for &t in &gone {
            self.state.remove_queued(t);
            self.realized.insert(t, Realization::Dropped);
        }
        self.emit(EventKind::Dropped { tasks: gone });
    }

    fn end_level(&mut self) {
        let l = self.state.level;
        let cycle = to_secs(self.state.clock - self.level_started);
        self.level_cycles.push(cycle);
        self.emit(EventKind::LevelEnd { level: l, cycle });
        self.state.level += 1;
        self.level_started = self.state.clock;
        if self.state.is_finished() {
            let cycle = to_secs(self.state.clock - self.started_at);
            self.emit(EventKind::JobEnd { cycle });
        } else {
            self.emit(EventKind::LevelStart {
                level: self.state.level,
            });
        }
    }

    fn settle(&mut self) -> Result<(), DynamicsError> {
        loop {
            if self.state.is_finished() {
                return Ok(());
            }
            let mut changed = self.robot_check();
            changed |= self.read_messages();
            for agent in AgentId::ALL {
                if self.state.end(agent) {
                    if let Some(slot) = next(&mut self.state, agent, &self.job) {
                        self.start(agent, slot);
                        changed = true;
                    }
                }
            }
            let idle = self.state.end(AgentId::Human) && self.state.end(AgentId::Robot);
            if idle {
                let l = self.state.level;
                let waiting = self.state.queue_len(AgentId::Human, l)
                    + self.state.queue_len(AgentId::Robot, l);
                let inbox_empty = self.inbox.human.is_empty() && self.inbox.robot.is_empty();
                if waiting == 0 && inbox_empty {
                    self.end_level();
                    changed = true;
                } else if waiting > 0 && !changed && inbox_empty {
                    return Err(DynamicsError::Deadlock(l));
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }
}

/// Executes one job under a trace and closes it with the quality update.
pub fn run_shift_job(
    job: &JobSpec,
    assignment: &Assignment,
    trace: JobTrace,
    options: RunOptions,
    metrics: &[MetricDef],
    state: &MetricState,
) -> Result<JobReport, DynamicsError> {
    let mut run = JobRun::new(job.clone(), assignment, trace, options, 0)?;
    run.run_to_end()?;
    run.report(metrics, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Level, Task};
    use crate::scenario::assembly_shift;

    fn j1_nominal() -> (JobSpec, Assignment) {
        let shift = assembly_shift();
        let a = Assignment {
            levels: vec![
                Level {
                    human: vec![5, 7, 8],
                    robot: vec![3, 4, 6],
                    cycle_time: 60.0,
                },
                Level {
                    human: vec![9],
                    robot: vec![1, 2],
                    cycle_time: 25.0,
                },
            ],
            objective: 6.3,
        };
        (shift.jobs[0].clone(), a)
    }

    fn msg(sender: AgentId, kind: MessageKind, task: TaskId) -> Message {
        Message {
            sender,
            kind,
            task,
            at: 0,
        }
    }

    #[test]
    fn next_pops_in_order_and_ends_empty() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        assert_eq!(next(&mut s, AgentId::Robot, &job), Some(Slot::Task(3)));
        s.completed.insert(3);
        assert_eq!(next(&mut s, AgentId::Robot, &job), Some(Slot::Task(4)));
        let mut empty = ScheduleState::from_assignment(&Assignment::default());
        assert_eq!(next(&mut empty, AgentId::Human, &job), None);
    }

    #[test]
    fn next_skips_tasks_with_unfinished_predecessors() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        s.robot[0] = VecDeque::from([Slot::Task(1), Slot::Task(6)]);
        assert_eq!(next(&mut s, AgentId::Robot, &job), Some(Slot::Task(6)));
        assert_eq!(next(&mut s, AgentId::Robot, &job), None);
    }

    #[test]
    fn fill_is_greedy_first_fit() {
        let c = |task, time| FillCandidate {
            task,
            time,
            predecessors: vec![],
        };
        let picked = fill(
            &[c(1, 12.0), c(2, 12.0), c(3, 25.0)],
            &BTreeSet::new(),
            25.0,
        );
        assert_eq!(picked, vec![1, 2]);
    }

    #[test]
    fn fill_respects_predecessors_of_earlier_picks() {
        let cands = [
            FillCandidate {
                task: 2,
                time: 3.0,
                predecessors: vec![1],
            },
            FillCandidate {
                task: 1,
                time: 3.0,
                predecessors: vec![],
            },
            FillCandidate {
                task: 3,
                time: 3.0,
                predecessors: vec![1],
            },
        ];
        assert_eq!(fill(&cands, &BTreeSet::new(), 100.0), vec![1, 3]);
    }

    #[test]
    fn reschedule_pulls_when_estimate_exceeds_shortest_task() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        s.robot[0].clear();
        s.human[0].clear();
        s.completed.extend([3, 4, 6, 5, 7]);
        // the human is 50% into task 8, nominal 25 s
        assert_eq!(reschedule(&mut s, &job, 12.5), vec![1]);
        assert_eq!(s.robot[0], VecDeque::from([Slot::Task(1)]));
        assert_eq!(s.robot[1], VecDeque::from([Slot::Task(2)]));
    }

    #[test]
    fn reschedule_is_noop_on_small_budget() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        s.robot[0].clear();
        s.completed.extend([3, 4, 6]);
        let before = s.clone();
        assert!(reschedule(&mut s, &job, 3.0).is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn reschedule_skips_tasks_with_pending_predecessors() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        s.robot[0].clear();
        s.completed.insert(3);
        // task 4 is still missing, so neither 1 nor 2 may run yet
        assert!(reschedule(&mut s, &job, 100.0).is_empty());
    }

    #[test]
    fn human_delegate_moves_task_to_front_of_robot_tuple() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Delegate, 5)),
            None,
        );
        assert!(matches!(r.human, Some(Ok(_))));
        assert_eq!(s.robot[0].front(), Some(&Slot::Task(5)));
        assert!(!s.human[0].contains(&5));
        s.check_invariants(&job).unwrap();
    }

    #[test]
    fn human_reassign_of_running_robot_task_sends_robot_home() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        s.level = 2;
        s.human[0].clear();
        s.robot[0].clear();
        s.completed.extend([3, 4, 5, 6, 7, 8]);
        s.robot[1].pop_front();
        s.current.robot = Some(Running {
            slot: Slot::Task(1),
            start: 0,
            level: 2,
            token: 1,
        });
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Reassign, 1)),
            None,
        );
        let swap = r.human.unwrap().unwrap();
        assert_eq!(swap.aborted.map(|a| a.0), Some(AgentId::Robot));
        assert_eq!(s.robot[1].front(), Some(&Slot::Home));
        assert_eq!(s.human[1].front(), Some(&1));
        assert!(s.current.robot.is_none());
        s.check_invariants(&job).unwrap();
    }

    #[test]
    fn human_reassign_of_queued_robot_task() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Reassign, 2)),
            None,
        );
        assert!(matches!(r.human, Some(Ok(Swap { level: 2, .. }))));
        assert_eq!(s.human[1].front(), Some(&2));
        assert_eq!(s.robot[1], VecDeque::from([Slot::Task(1)]));
    }

    #[test]
    fn empty_messages_change_nothing() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        let before = s.clone();
        let r = communicate(&mut s, &job, None, None);
        assert_eq!(r, PerAgent::new(None, None));
        assert_eq!(s, before);
    }

    #[test]
    fn capability_and_ownership_are_checked() {
        let (job, a) = j1_nominal();
        let mut s = ScheduleState::from_assignment(&a);
        let before = s.clone();
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Delegate, 7)),
            None,
        );
        assert!(matches!(
            r.human,
            Some(Err(CommError::RejectedSwap { task: 7, .. }))
        ));
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Reassign, 5)),
            None,
        );
        assert!(matches!(r.human, Some(Err(CommError::RejectedSwap { .. }))));
        let r = communicate(
            &mut s,
            &job,
            Some(&msg(AgentId::Human, MessageKind::Delegate, 42)),
            None,
        );
        assert_eq!(r.human, Some(Err(CommError::UnknownTask(42))));
        let r = communicate(
            &mut s,
            &job,
            None,
            Some(&msg(AgentId::Robot, MessageKind::Reassign, 3)),
        );
        assert_eq!(r.robot, Some(Err(CommError::InvalidSender)));
        assert_eq!(s, before);
    }

    #[test]
    fn robot_delegate_of_human_incapable_task_is_rejected() {
        let job = JobSpec::new(1, vec![Task::new(1, 5.0, 5.0).human_incapable()], vec![]).unwrap();
        let a = Assignment {
            levels: vec![Level {
                human: vec![],
                robot: vec![1],
                cycle_time: 5.0,
            }],
            objective: 0.0,
        };
        let mut s = ScheduleState::from_assignment(&a);
        let before = s.clone();
        let r = communicate(
            &mut s,
            &job,
            None,
            Some(&msg(AgentId::Robot, MessageKind::Delegate, 1)),
        );
        assert!(matches!(r.robot, Some(Err(CommError::RejectedSwap { .. }))));
        assert_eq!(s, before);
    }

    fn exact_trace(job: JobId) -> JobTrace {
        JobTrace::stochastic(job, 0, 0.0)
    }

    #[test]
    fn nominal_run_without_disturbance_matches_plan() {
        let (job, a) = j1_nominal();
        let opts = RunOptions {
            reschedule: false,
            ..RunOptions::default()
        };
        let report =
            run_shift_job(&job, &a, exact_trace(1), opts, &[], &MetricState::default()).unwrap();
        assert_eq!(report.level_cycles, vec![60.0, 25.0]);
        assert_eq!(report.cycle_time, 85.0);
        assert_eq!(report.realized.len(), 9);
    }

    #[test]
    fn empty_assignment_finishes_immediately() {
        let job = JobSpec::new(1, vec![], vec![]).unwrap();
        let report = run_shift_job(
            &job,
            &Assignment::default(),
            exact_trace(1),
            RunOptions::default(),
            &[],
            &MetricState::default(),
        )
        .unwrap();
        assert_eq!(report.cycle_time, 0.0);
        assert!(report.executions.is_empty());
        assert!(matches!(
            report.events.last().unwrap().kind,
            EventKind::JobEnd { .. }
        ));
    }

    #[test]
    fn robot_failure_hands_task_to_human_and_homes() {
        let (job, a) = j1_nominal();
        let mut trace = exact_trace(1);
        trace.robot.insert(3, (None, Some(2.0)));
        let report = run_shift_job(
            &job,
            &a,
            trace,
            RunOptions::default(),
            &[],
            &MetricState::default(),
        )
        .unwrap();
        assert_eq!(
            report.realized[&3],
            Realization::Executed {
                agent: AgentId::Human,
                duration: 15.0
            }
        );
        assert!(report
            .executions
            .iter()
            .any(|e| e.task == Slot::Home && e.agent == AgentId::Robot));
        assert!(report
            .executions
            .iter()
            .any(|e| e.task == Slot::Task(3) && e.outcome == Outcome::Failed));
    }

    #[test]
    fn failure_on_robot_only_task_drops_descendants() {
        let tasks = vec![
            Task::new(1, 5.0, 5.0).human_incapable(),
            Task::new(2, 5.0, 5.0),
        ];
        let job = JobSpec::new(1, tasks, vec![(1, 2)]).unwrap();
        let a = Assignment {
            levels: vec![
                Level {
                    human: vec![],
                    robot: vec![1],
                    cycle_time: 5.0,
                },
                Level {
                    human: vec![2],
                    robot: vec![],
                    cycle_time: 5.0,
                },
            ],
            objective: 0.0,
        };
        let mut trace = exact_trace(1);
        trace.robot.insert(1, (None, Some(1.0)));
        let report = run_shift_job(
            &job,
            &a,
            trace,
            RunOptions::default(),
            &[],
            &MetricState::default(),
        )
        .unwrap();
        assert_eq!(report.realized[&1], Realization::Dropped);
        assert_eq!(report.realized[&2], Realization::Dropped);
        assert_eq!(report.cycle_time, 6.0);
    }

    #[test]
    fn live_run_waits_for_human_completion() {
        let (job, a) = j1_nominal();
        let opts = RunOptions {
            live: true,
            ..RunOptions::default()
        };
        let mut run = JobRun::new(job, &a, exact_trace(1), opts, 0).unwrap();
        assert_eq!(run.state().current_task(AgentId::Human), Some(5));
        run.advance_to(5_000).unwrap();
        assert_eq!(run.human_estimate(), Some(5.0));
        assert_eq!(
            run.complete_human(7).unwrap(),
            Err(CommError::NotExecuting(7))
        );
        assert_eq!(
            run.complete_human(99).unwrap(),
            Err(CommError::UnknownTask(99))
        );
        run.complete_human(5).unwrap().unwrap();
        assert_eq!(run.state().current_task(AgentId::Human), Some(7));
        let r = run
            .post_message(AgentId::Human, MessageKind::Delegate, 7)
            .unwrap();
        assert!(matches!(r, Err(CommError::RejectedSwap { .. })));
        run.post_message(AgentId::Human, MessageKind::Reassign, 2)
            .unwrap()
            .unwrap();
        assert_eq!(run.state().human[1].front(), Some(&2));
    }

    #[test]
    fn event_json_carries_time_and_kind() {
        let e = Event {
            t: 1500,
            job: 1,
            kind: EventKind::Start {
                agent: AgentId::Robot,
                task: Slot::Home,
                level: 1,
            },
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["t"], 1500);
        assert_eq!(v["kind"], "start");
        assert_eq!(v["task"], "home");
        assert_eq!(serde_json::from_value::<Event>(v).unwrap(), e);
    }
}
