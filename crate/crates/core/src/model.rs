//! Domain types shared by every layer: agents, tasks, jobs, shifts, metric
//! definitions and accumulators, and the level-structured assignment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Task identifier, unique within a job.
pub type TaskId = u32;

/// Job identifier, unique within a shift.
pub type JobId = u32;

/// Metric identifier.
pub type MetricId = u32;

/// Weight added to the robot cost of a task the robot cannot execute.
pub const INCAPABLE_PENALTY: f64 = 1000.0;

/// Robot cost per meter travelled.
pub const DISTANCE_COST: f64 = 0.7;

/// The two agents of the collaborative cell.
///
/// The derived ordering ranks `Human` before `Robot`; the assignment solver
/// relies on it for deterministic tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentId {
    Human,
    Robot,
}

impl AgentId {
    pub const ALL: [AgentId; 2] = [AgentId::Human, AgentId::Robot];

    pub fn other(self) -> AgentId {
        match self {
            AgentId::Human => AgentId::Robot,
            AgentId::Robot => AgentId::Human,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            AgentId::Human => "H",
            AgentId::Robot => "R",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentId::Human => "human",
            AgentId::Robot => "robot",
        })
    }
}

/// A value held once per agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerAgent<T> {
    pub human: T,
    pub robot: T,
}

impl<T> PerAgent<T> {
    pub fn new(human: T, robot: T) -> Self {
        PerAgent { human, robot }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerAgent<U> {
        PerAgent {
            human: f(&self.human),
            robot: f(&self.robot),
        }
    }
}

impl<T> Index<AgentId> for PerAgent<T> {
    type Output = T;

    fn index(&self, agent: AgentId) -> &T {
        match agent {
            AgentId::Human => &self.human,
            AgentId::Robot => &self.robot,
        }
    }
}

impl<T> IndexMut<AgentId> for PerAgent<T> {
    fn index_mut(&mut self, agent: AgentId) -> &mut T {
        match agent {
            AgentId::Human => &mut self.human,
            AgentId::Robot => &mut self.robot,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("precedence graph of job {job} contains a cycle through tasks {cycle:?}")]
    Cycle { job: JobId, cycle: Vec<TaskId> },
    #[error("job {job}: task ids must be positive, got 0")]
    ZeroTaskId { job: JobId },
    #[error("job {job}: duplicate task id {task}")]
    DuplicateTask { job: JobId, task: TaskId },
    #[error("job {job}: precedence edge {from}->{to} references unknown task {missing}")]
    DanglingEdge {
        job: JobId,
        from: TaskId,
        to: TaskId,
        missing: TaskId,
    },
    #[error("job {job}: task {task} has no nominal time for either agent")]
    NoNominalTime { job: JobId, task: TaskId },
    #[error("job {job}: task {task} has invalid {field}: {value}")]
    InvalidValue {
        job: JobId,
        task: TaskId,
        field: &'static str,
        value: f64,
    },
    #[error(
        "job {job}: task {task} carries {got} quality loads, shift defines {expected} metrics"
    )]
    QualityLoadArity {
        job: JobId,
        task: TaskId,
        expected: usize,
        got: usize,
    },
    #[error("a shift needs at least one job")]
    EmptyShift,
    #[error("duplicate job id {0}")]
    DuplicateJob(JobId),
    #[error("duplicate metric id {0}")]
    DuplicateMetric(MetricId),
    #[error("metric {id} has non-positive bound {bound}")]
    InvalidBound { id: MetricId, bound: f64 },
}

/// Precedence cycle found by [`validate_dag`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("precedence cycle {0:?}")]
pub struct CycleError(pub Vec<TaskId>);

/// Atomic unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub description: String,
    /// Nominal execution time in seconds; `None` when the agent cannot do it.
    pub nominal_time: PerAgent<Option<f64>>,
    pub weight: PerAgent<f64>,
    pub quality_load: Vec<f64>,
    pub capability: PerAgent<bool>,
    pub attractiveness: f64,
    /// Distance the robot travels for this task, meters.
    pub robot_distance: f64,
}

impl Task {
    /// A task both agents can execute, with weights derived from the
    /// (zero) distance and attractiveness.
    pub fn new(id: TaskId, human_time: f64, robot_time: f64) -> Self {
        let mut task = Task {
            id,
            description: String::new(),
            nominal_time: PerAgent::new(Some(human_time), Some(robot_time)),
            weight: PerAgent::default(),
            quality_load: Vec::new(),
            capability: PerAgent::new(true, true),
            attractiveness: 0.0,
            robot_distance: 0.0,
        };
        task.apply_derived_weights();
        task
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn with_quality_load(mut self, load: Vec<f64>) -> Self {
        self.quality_load = load;
        self
    }

    /// Marks the robot as unable to execute this task.
    pub fn robot_incapable(mut self) -> Self {
        self.capability.robot = false;
        self.nominal_time.robot = None;
        self.apply_derived_weights();
        self
    }

    pub fn human_incapable(mut self) -> Self {
        self.capability.human = false;
        self.nominal_time.human = None;
        self
    }

    pub fn with_attractiveness(mut self, u: f64) -> Self {
        self.attractiveness = u;
        self.apply_derived_weights();
        self
    }

    pub fn with_robot_distance(mut self, meters: f64) -> Self {
        self.robot_distance = meters;
        self.apply_derived_weights();
        self
    }

    /// Overrides the derived weights.
    pub fn with_weights(mut self, human: f64, robot: f64) -> Self {
        self.weight = PerAgent::new(human, robot);
        self
    }

    pub fn apply_derived_weights(&mut self) {
        let (robot, human) = derive_weights(self);
        self.weight = PerAgent::new(human, robot);
    }

    /// Whether `agent` may be assigned this task at all.
    pub fn can_execute(&self, agent: AgentId) -> bool {
        self.capability[agent] && self.nominal_time[agent].is_some()
    }

    /// Nominal time for `agent`, only when the agent can execute the task.
    pub fn time_for(&self, agent: AgentId) -> Option<f64> {
        if self.capability[agent] {
            self.nominal_time[agent]
        } else {
            None
        }
    }
}

/// Returns `(w_robot, w_human)`: the robot pays for distance plus a large
/// penalty when incapable, the human weight is the task attractiveness.
pub fn derive_weights(task: &Task) -> (f64, f64) {
    let incapable = if task.capability.robot { 0.0 } else { 1.0 };
    let robot = DISTANCE_COST * task.robot_distance + INCAPABLE_PENALTY * incapable;
    (robot, task.attractiveness)
}

/// A job: tasks plus the precedence DAG between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub id: JobId,
    /// Sorted by task id.
    pub tasks: Vec<Task>,
    /// `(i, j)`: task `i` must finish before task `j` starts.
    pub precedence: Vec<(TaskId, TaskId)>,
}

impl JobSpec {
    /// Validated constructor. Tasks are sorted by id and edges deduplicated.
    pub fn new(
        id: JobId,
        mut tasks: Vec<Task>,
        precedence: Vec<(TaskId, TaskId)>,
    ) -> Result<Self, ModelError> {
        tasks.sort_by_key(|t| t.id);
        let mut seen = HashSet::new();
        for task in &tasks {
            if task.id == 0 {
                return Err(ModelError::ZeroTaskId { job: id });
            }
            if !seen.insert(task.id) {
                return Err(ModelError::DuplicateTask {
                    job: id,
                    task: task.id,
                });
            }
            if task.nominal_time.human.is_none() && task.nominal_time.robot.is_none() {
                return Err(ModelError::NoNominalTime {
                    job: id,
                    task: task.id,
                });
            }
            for agent in AgentId::ALL {
                if let Some(t) = task.nominal_time[agent] {
                    if !(t.is_finite() && t > 0.0) {
                        return Err(ModelError::InvalidValue {
                            job: id,
                            task: task.id,
                            field: "nominal_time",
                            value: t,
                        });
                    }
                }
                let w = task.weight[agent];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(ModelError::InvalidValue {
                        job: id,
                        task: task.id,
                        field: "weight",
                        value: w,
                    });
                }
            }
            for &k in &task.quality_load {
                if !(k.is_finite() && k >= 0.0) {
                    return Err(ModelError::InvalidValue {
                        job: id,
                        task: task.id,
                        field: "quality_load",
                        value: k,
                    });
                }
            }
        }
        let mut edges: Vec<(TaskId, TaskId)> = Vec::with_capacity(precedence.len());
        for (from, to) in precedence {
            for endpoint in [from, to] {
                if !seen.contains(&endpoint) {
                    return Err(ModelError::DanglingEdge {
                        job: id,
                        from,
                        to,
                        missing: endpoint,
                    });
                }
            }
            if !edges.contains(&(from, to)) {
                edges.push((from, to));
            }
        }
        let job = JobSpec {
            id,
            tasks,
            precedence: edges,
        };
        validate_dag(&job).map_err(|CycleError(cycle)| ModelError::Cycle { job: id, cycle })?;
        Ok(job)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, id: TaskId) -> Option<&Task> {
        self.index_of(id).map(|i| &self.tasks[i])
    }

    pub fn index_of(&self, id: TaskId) -> Option<usize> {
        self.tasks.binary_search_by_key(&id, |t| t.id).ok()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.tasks.iter().map(|t| t.id)
    }

    pub fn predecessors(&self, id: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.precedence
            .iter()
            .filter(move |&&(_, to)| to == id)
            .map(|&(from, _)| from)
    }

    pub fn successors(&self, id: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.precedence
            .iter()
            .filter(move |&&(from, _)| from == id)
            .map(|&(_, to)| to)
    }

    /// All tasks reachable from `id` through precedence edges, excluding `id`.
    pub fn descendants(&self, id: TaskId) -> BTreeSet<TaskId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![id];
        while let Some(t) = stack.pop() {
            for s in self.successors(t) {
                if out.insert(s) {
                    stack.push(s);
                }
            }
        }
        out
    }

    /// Largest finite nominal time over all tasks and agents.
    pub fn max_nominal_time(&self) -> Option<f64> {
        self.tasks
            .iter()
            .flat_map(|t| AgentId::ALL.into_iter().filter_map(move |a| t.time_for(a)))
            .fold(None, |acc: Option<f64>, t| {
                Some(acc.map_or(t, |m| m.max(t)))
            })
    }
}

/// Checks that the precedence relation of `job` is acyclic. On failure the
/// error lists the task ids along one cycle.
pub fn validate_dag(job: &JobSpec) -> Result<(), CycleError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let ids: Vec<TaskId> = job.task_ids().collect();
    let pos = |id: TaskId| ids.binary_search(&id).ok();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); ids.len()];
    for &(from, to) in &job.precedence {
        match (pos(from), pos(to)) {
            (Some(a), Some(b)) => adj[a].push(b),
            // edges to unknown tasks cannot close a cycle
            _ => continue,
        }
    }
    let mut mark = vec![Mark::New; ids.len()];
    let mut parent = vec![usize::MAX; ids.len()];
    for root in 0..ids.len() {
        if mark[root] != Mark::New {
            continue;
        }
        // iterative DFS: (node, next child index)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = adj[node].get(*next) {
                *next += 1;
                match mark[child] {
                    Mark::New => {
                        mark[child] = Mark::Active;
                        parent[child] = node;
                        stack.push((child, 0));
                    }
                    Mark::Active => {
                        let mut cycle = vec![ids[child]];
                        let mut cur = node;
                        while cur != child {
                            cycle.push(ids[cur]);
                            cur = parent[cur];
                        }
                        cycle[1..].reverse();
                        return Err(CycleError(cycle));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Minimal feasible level of every task: 1 for sources, otherwise one more
/// than the deepest predecessor.
pub fn longest_path_levels(job: &JobSpec) -> BTreeMap<TaskId, u32> {
    let order = topological_order(job);
    let mut level: BTreeMap<TaskId, u32> = BTreeMap::new();
    for id in order {
        let l = job
            .predecessors(id)
            .map(|p| level.get(&p).copied().unwrap_or(1) + 1)
            .max()
            .unwrap_or(1);
        level.insert(id, l);
    }
    level
}

/// Kahn's algorithm, smallest ready id first. Assumes the job is acyclic.
pub fn topological_order(job: &JobSpec) -> Vec<TaskId> {
    topological_order_by(job, |id| id)
}

/// Kahn's algorithm picking, among ready tasks, the one with the smallest
/// `priority(id)`.
pub fn topological_order_by<K: Ord>(job: &JobSpec, priority: impl Fn(TaskId) -> K) -> Vec<TaskId> {
    let mut indegree: BTreeMap<TaskId, usize> = job.task_ids().map(|id| (id, 0)).collect();
    for &(_, to) in &job.precedence {
        *indegree.get_mut(&to).expect("validated edge") += 1;
    }
    let mut ready: Vec<TaskId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&id, _)| id)
        .collect();
    let mut order = Vec::with_capacity(job.len());
    while !ready.is_empty() {
        let (at, _) = ready
            .iter()
            .enumerate()
            .min_by_key(|(_, &id)| (priority(id), id))
            .expect("non-empty");
        let id = ready.swap_remove(at);
        order.push(id);
        for s in job.successors(id) {
            let d = indegree.get_mut(&s).expect("validated edge");
            *d -= 1;
            if *d == 0 {
                ready.push(s);
            }
        }
    }
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// Cumulative load: cost plus the sum of human task loads.
    Summed,
    /// Time-averaged load over the metric's time frame.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub id: MetricId,
    pub kind: MetricKind,
    pub bound: f64,
}

impl MetricDef {
    pub fn summed(id: MetricId, bound: f64) -> Self {
        MetricDef {
            id,
            kind: MetricKind::Summed,
            bound,
        }
    }

    pub fn average(id: MetricId, bound: f64) -> Self {
        MetricDef {
            id,
            kind: MetricKind::Average,
            bound,
        }
    }
}

/// A shift: ordered jobs evaluated against a common set of metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub jobs: Vec<JobSpec>,
    pub metrics: Vec<MetricDef>,
}

impl ShiftSpec {
    pub fn new(jobs: Vec<JobSpec>, metrics: Vec<MetricDef>) -> Result<Self, ModelError> {
        if jobs.is_empty() {
            return Err(ModelError::EmptyShift);
        }
        let mut job_ids = HashSet::new();
        for job in &jobs {
            if !job_ids.insert(job.id) {
                return Err(ModelError::DuplicateJob(job.id));
            }
            for task in &job.tasks {
                if task.quality_load.len() != metrics.len() {
                    return Err(ModelError::QualityLoadArity {
                        job: job.id,
                        task: task.id,
                        expected: metrics.len(),
                        got: task.quality_load.len(),
                    });
                }
            }
        }
        let mut metric_ids = HashSet::new();
        for m in &metrics {
            if !metric_ids.insert(m.id) {
                return Err(ModelError::DuplicateMetric(m.id));
            }
            if !(m.bound.is_finite() && m.bound > 0.0) {
                return Err(ModelError::InvalidBound {
                    id: m.id,
                    bound: m.bound,
                });
            }
        }
        Ok(ShiftSpec { jobs, metrics })
    }

    pub fn job(&self, id: JobId) -> Option<&JobSpec> {
        self.jobs.iter().find(|j| j.id == id)
    }
}

/// Cross-job accumulator of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAccumulator {
    pub id: MetricId,
    /// Raw accumulated cost from previous jobs.
    #[serde(rename = "C0")]
    pub cumulative_cost: f64,
    /// Elapsed time of the metric's time frame, seconds.
    #[serde(rename = "t_m")]
    pub elapsed: f64,
}

/// Quality state carried from job to job.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricState {
    pub metrics: Vec<MetricAccumulator>,
}

impl MetricState {
    /// Zero cost and zero elapsed time for every metric.
    pub fn initial(metrics: &[MetricDef]) -> Self {
        MetricState {
            metrics: metrics
                .iter()
                .map(|m| MetricAccumulator {
                    id: m.id,
                    cumulative_cost: 0.0,
                    elapsed: 0.0,
                })
                .collect(),
        }
    }

    pub fn get(&self, id: MetricId) -> Option<&MetricAccumulator> {
        self.metrics.iter().find(|m| m.id == id)
    }

    pub fn get_mut(&mut self, id: MetricId) -> Option<&mut MetricAccumulator> {
        self.metrics.iter_mut().find(|m| m.id == id)
    }

    /// Accumulator for `id`, zero when the state does not track it yet.
    pub fn for_metric(&self, id: MetricId) -> MetricAccumulator {
        self.get(id).copied().unwrap_or(MetricAccumulator {
            id,
            cumulative_cost: 0.0,
            elapsed: 0.0,
        })
    }

    pub fn with(mut self, id: MetricId, cumulative_cost: f64, elapsed: f64) -> Self {
        match self.get_mut(id) {
            Some(acc) => {
                acc.cumulative_cost = cumulative_cost;
                acc.elapsed = elapsed;
            }
            None => self.metrics.push(MetricAccumulator {
                id,
                cumulative_cost,
                elapsed,
            }),
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.metrics
            .iter()
            .all(|m| m.cumulative_cost.is_finite() && m.elapsed.is_finite())
    }
}

/// One level of an assignment: the tasks each agent runs sequentially, in
/// parallel with the other agent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Level {
    #[serde(rename = "S_H")]
    pub human: Vec<TaskId>,
    #[serde(rename = "S_R")]
    pub robot: Vec<TaskId>,
    /// Cycle time of the level, seconds.
    #[serde(rename = "c")]
    pub cycle_time: f64,
}

impl Level {
    pub fn tasks(&self, agent: AgentId) -> &[TaskId] {
        match agent {
            AgentId::Human => &self.human,
            AgentId::Robot => &self.robot,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.human.is_empty() && self.robot.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssignmentError {
    #[error("task {0} is not placed")]
    Missing(TaskId),
    #[error("task {0} is placed more than once")]
    Duplicate(TaskId),
    #[error("task {0} does not belong to the job")]
    Unknown(TaskId),
    #[error("task {task} placed on {agent}, which cannot execute it")]
    Incapable { task: TaskId, agent: AgentId },
    #[error("edge {from}->{to} violates level order")]
    Precedence { from: TaskId, to: TaskId },
    #[error("level {level}: cycle time {cycle} below {agent} workload {workload}")]
    CycleTime {
        level: usize,
        agent: AgentId,
        cycle: f64,
        workload: f64,
    },
}

/// Nominal schedule of one job.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub levels: Vec<Level>,
    pub objective: f64,
}

impl Assignment {
    /// 1-based level and agent of `task`.
    pub fn placement(&self, task: TaskId) -> Option<(usize, AgentId)> {
        self.levels.iter().enumerate().find_map(|(l, level)| {
            AgentId::ALL
                .into_iter()
                .find(|&a| level.tasks(a).contains(&task))
                .map(|a| (l + 1, a))
        })
    }

    pub fn total_cycle_time(&self) -> f64 {
        self.levels.iter().map(|l| l.cycle_time).sum()
    }

    /// Tasks of `agent` per level, as in `S_H` / `S_R`.
    pub fn tuples(&self, agent: AgentId) -> Vec<Vec<TaskId>> {
        self.levels
            .iter()
            .map(|l| l.tasks(agent).to_vec())
            .collect()
    }

    /// Per-level task sets of `agent`, ignoring order.
    pub fn level_sets(&self, agent: AgentId) -> Vec<BTreeSet<TaskId>> {
        self.levels
            .iter()
            .map(|l| l.tasks(agent).iter().copied().collect())
            .collect()
    }

    /// Nominal workload of `agent` at each level.
    pub fn workloads(&self, job: &JobSpec, agent: AgentId) -> Vec<f64> {
        self.levels
            .iter()
            .map(|l| {
                l.tasks(agent)
                    .iter()
                    .filter_map(|&id| job.task(id).and_then(|t| t.time_for(agent)))
                    .sum()
            })
            .collect()
    }

    /// Checks unique placement, capability, strict level precedence and
    /// cycle-time dominance.
    pub fn validate(&self, job: &JobSpec) -> Result<(), AssignmentError> {
        const EPS: f64 = 1e-6;
        let mut placed: BTreeMap<TaskId, usize> = BTreeMap::new();
        for (l, level) in self.levels.iter().enumerate() {
            for agent in AgentId::ALL {
                let mut workload = 0.0;
                for &id in level.tasks(agent) {
                    let task = job.task(id).ok_or(AssignmentError::Unknown(id))?;
                    let time = task
                        .time_for(agent)
                        .ok_or(AssignmentError::Incapable { task: id, agent })?;
                    workload += time;
                    if placed.insert(id, l + 1).is_some() {
                        return Err(AssignmentError::Duplicate(id));
                    }
                }
                if level.cycle_time + EPS < workload {
                    return Err(AssignmentError::CycleTime {
                        level: l + 1,
                        agent,
                        cycle: level.cycle_time,
                        workload,
                    });
                }
            }
        }
        for id in job.task_ids() {
            if !placed.contains_key(&id) {
                return Err(AssignmentError::Missing(id));
            }
        }
        for &(from, to) in &job.precedence {
            if placed[&from] >= placed[&to] {
                return Err(AssignmentError::Precedence { from, to });
            }
        }
        Ok(())
    }
}
