//! Nominal task assignment.
//!
//! Every task gets an agent and a level. Levels run one after the other, and
//! inside a level both agents work through their tasks in parallel. The
//! model minimizes
//!
//! ```text
//!   sum of assignment weights + (sum of level cycle times) / t_max
//! ```
//!
//! subject to: unique placement, cycle time at least each agent's workload
//! per level, strict level order along precedence edges, summed quality
//! metrics within bounds, and average quality metrics within bounds. The
//! average constraint is multiplied through by its positive denominator,
//!
//! ```text
//!   C0 + sum_human t_H * k  <=  bound * (t_m + sum_l c_l)
//! ```
//!
//! which is linear in the placements and cycle times jointly. For a fixed
//! placement the best cycle times are therefore the per-level workload maxima,
//! inflated on the last level just enough to satisfy every average bound.
//!
//! The solver is an exact depth-first branch and bound over (agent, level)
//! choices, one task at a time in topological order.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AgentId, Assignment, JobId, JobSpec, Level, MetricDef, MetricId, MetricKind, MetricState,
    PerAgent, TaskId,
};

/// Default cap on explored branch-and-bound nodes.
pub const DEFAULT_NODE_BUDGET: u64 = 10_000_000;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("task {0} cannot be executed by either agent")]
    InfeasibleStructure(TaskId),
    #[error("metric state is not finite")]
    NonFiniteState,
    #[error("quality bounds cannot be met by any assignment")]
    Infeasible,
    #[error("node budget of {0} exhausted before optimality was proven")]
    NodeBudgetExceeded(u64),
}

/// `C0 + sum over human tasks of load <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummedConstraint {
    pub metric: MetricId,
    pub cumulative: f64,
    /// Per task index.
    pub load: Vec<f64>,
    pub bound: f64,
}

/// `cumulative + sum over human tasks of load <= bound * (elapsed + c)`,
/// with `load = t_H * k` per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageConstraint {
    pub metric: MetricId,
    pub cumulative: f64,
    pub elapsed: f64,
    pub load: Vec<f64>,
    pub bound: f64,
}

impl AverageConstraint {
    /// Smallest total cycle time satisfying the constraint for a given
    /// human load sum.
    pub fn required_cycle(&self, human_load: f64) -> f64 {
        (self.cumulative + human_load) / self.bound - self.elapsed
    }
}

/// Coefficient tables of the assignment program for one job.
///
/// Tasks are indexed in ascending id order. The binaries `x[a][i][l]` are
/// implicit: a solution is one `(agent, level)` placement per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpInstance {
    pub job: JobId,
    pub task_ids: Vec<TaskId>,
    /// Number of levels `L`.
    pub levels: usize,
    pub t_a_max: f64,
    pub weight: Vec<PerAgent<f64>>,
    /// Nominal time per agent; `None` forbids the placement outright.
    pub time: Vec<PerAgent<Option<f64>>>,
    /// Edges as task index pairs.
    pub precedence: Vec<(usize, usize)>,
    pub summed: Vec<SummedConstraint>,
    pub average: Vec<AverageConstraint>,
}

/// Counts of each constraint group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintCounts {
    pub unique_assignment: usize,
    pub workload: usize,
    pub precedence: usize,
    pub summed: usize,
    pub average: usize,
}

impl MilpInstance {
    pub fn task_count(&self) -> usize {
        self.task_ids.len()
    }

    pub fn binary_count(&self) -> usize {
        2 * self.task_count() * self.levels
    }

    pub fn continuous_count(&self) -> usize {
        self.levels
    }

    pub fn constraint_counts(&self) -> ConstraintCounts {
        ConstraintCounts {
            unique_assignment: self.task_count(),
            workload: 2 * self.levels,
            precedence: self.precedence.len(),
            summed: self.summed.len(),
            average: self.average.len(),
        }
    }

    /// Exact objective and cycle times of a placement (1-based levels), or
    /// `None` when the placement violates a hard constraint.
    pub fn evaluate(&self, placement: &[(AgentId, usize)]) -> Option<(f64, Vec<f64>)> {
        if placement.len() != self.task_count() {
            return None;
        }
        let used = placement.iter().map(|p| p.1).max().unwrap_or(0);
        if placement.iter().any(|&(_, l)| l == 0 || l > self.levels) {
            return None;
        }
        let mut work = vec![PerAgent::new(0.0, 0.0); used];
        let mut weight = 0.0;
        for (i, &(agent, level)) in placement.iter().enumerate() {
            let t = self.time[i][agent]?;
            work[level - 1][agent] += t;
            weight += self.weight[i][agent];
        }
        for &(a, b) in &self.precedence {
            if placement[a].1 >= placement[b].1 {
                return None;
            }
        }
        for c in &self.summed {
            let total: f64 = c.cumulative
                + placement
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.0 == AgentId::Human)
                    .map(|(i, _)| c.load[i])
                    .sum::<f64>();
            if total > c.bound + EPS {
                return None;
            }
        }
        let mut cycles: Vec<f64> = work.iter().map(|w| w.human.max(w.robot)).collect();
        let base: f64 = cycles.iter().sum();
        let required = self
            .average
            .iter()
            .map(|c| {
                let load = placement
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.0 == AgentId::Human)
                    .map(|(i, _)| c.load[i])
                    .sum::<f64>();
                c.required_cycle(load)
            })
            .fold(0.0f64, f64::max);
        if required > base {
            match cycles.last_mut() {
                Some(last) => *last += required - base,
                None => cycles.push(required),
            }
        }
        let total = base.max(required);
        Some((weight + total / self.t_a_max, cycles))
    }
}

/// The level count searched: one level per task is always enough.
pub fn choose_level_count(job: &JobSpec) -> usize {
    job.len().max(1)
}

/// Builds the assignment program for `job` under the current quality state.
pub fn build_milp(
    job: &JobSpec,
    state: &MetricState,
    metrics: &[MetricDef],
) -> Result<MilpInstance, SolveError> {
    if !state.is_finite() {
        return Err(SolveError::NonFiniteState);
    }
    for task in &job.tasks {
        if !task.can_execute(AgentId::Human) && !task.can_execute(AgentId::Robot) {
            return Err(SolveError::InfeasibleStructure(task.id));
        }
    }
    let task_ids: Vec<TaskId> = job.task_ids().collect();
    let index = |id: TaskId| task_ids.binary_search(&id).expect("validated edge");
    let precedence = job
        .precedence
        .iter()
        .map(|&(a, b)| (index(a), index(b)))
        .collect();
    let mut summed = Vec::new();
    let mut average = Vec::new();
    for (m, def) in metrics.iter().enumerate() {
        let acc = state.for_metric(def.id);
        let k = |t: &crate::model::Task| t.quality_load.get(m).copied().unwrap_or(0.0);
        match def.kind {
            MetricKind::Summed => summed.push(SummedConstraint {
                metric: def.id,
                cumulative: acc.cumulative_cost,
                load: job.tasks.iter().map(k).collect(),
                bound: def.bound,
            }),
            MetricKind::Average => average.push(AverageConstraint {
                metric: def.id,
                cumulative: acc.cumulative_cost,
                elapsed: acc.elapsed,
                load: job
                    .tasks
                    .iter()
                    .map(|t| t.time_for(AgentId::Human).unwrap_or(0.0) * k(t))
                    .collect(),
                bound: def.bound,
            }),
        }
    }
    Ok(MilpInstance {
        job: job.id,
        levels: choose_level_count(job),
        t_a_max: job.max_nominal_time().unwrap_or(1.0),
        weight: job.tasks.iter().map(|t| t.weight).collect(),
        time: job
            .tasks
            .iter()
            .map(|t| PerAgent::new(t.time_for(AgentId::Human), t.time_for(AgentId::Robot)))
            .collect(),
        task_ids,
        precedence,
        summed,
        average,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub assignment: Assignment,
    pub objective: f64,
    pub nodes_explored: u64,
    pub wall_time: Duration,
    pub proven_optimal: bool,
}

/// Exact solver. Among equal-objective optima it returns the placement whose
/// `(level, agent)` vector, read in ascending task id with the human ranked
/// before the robot, is lexicographically smallest.
#[derive(Debug, Clone, Copy)]
pub struct Solver {
    pub node_budget: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Solver {
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

type Placement = (AgentId, usize);

struct Search<'a> {
    inst: &'a MilpInstance,
    order: Vec<usize>,
    preds: Vec<Vec<usize>>,
    /// Highest level a task may take so its longest successor chain fits.
    max_level: Vec<usize>,
    /// Suffix sums over `order`: cheapest weight, shortest time, and time of
    /// tasks only one agent can do.
    rest_weight: Vec<f64>,
    rest_time: Vec<f64>,
    rest_only: Vec<PerAgent<f64>>,
    /// Suffix sum of the cheapest `weight + time / (2 t_max)` per task.
    rest_blend: Vec<f64>,

    label: Vec<Option<Placement>>,
    work: Vec<PerAgent<f64>>,
    per_level: Vec<usize>,
    cycle_sum: f64,
    total: PerAgent<f64>,
    weight: f64,
    summed_load: Vec<f64>,
    average_load: Vec<f64>,

    best: Option<(f64, Vec<Placement>)>,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl Solver {
    pub fn new(node_budget: u64) -> Self {
        Solver { node_budget }
    }

    pub fn solve(&self, inst: &MilpInstance) -> Result<SolveReport, SolveError> {
        let started = Instant::now();
        let n = inst.task_count();
        if n == 0 {
            return Ok(SolveReport {
                assignment: Assignment::default(),
                objective: 0.0,
                nodes_explored: 0,
                wall_time: started.elapsed(),
                proven_optimal: true,
            });
        }
        let mut search = Search::new(inst, self.node_budget);
        search.dfs(0);
        if search.exhausted {
            return Err(SolveError::NodeBudgetExceeded(self.node_budget));
        }
        let (_, placement) = search.best.take().ok_or(SolveError::Infeasible)?;
        let (objective, cycles) = inst
            .evaluate(&placement)
            .expect("search only keeps feasible placements");
        let mut levels: Vec<Level> = cycles
            .into_iter()
            .map(|cycle_time| Level {
                cycle_time,
                ..Level::default()
            })
            .collect();
        for (i, &(agent, level)) in placement.iter().enumerate() {
            let slot = &mut levels[level - 1];
            match agent {
                AgentId::Human => slot.human.push(inst.task_ids[i]),
                AgentId::Robot => slot.robot.push(inst.task_ids[i]),
            }
        }
        Ok(SolveReport {
            assignment: Assignment { levels, objective },
            objective,
            nodes_explored: search.nodes,
            wall_time: started.elapsed(),
            proven_optimal: true,
        })
    }
}

impl<'a> Search<'a> {
    fn new(inst: &'a MilpInstance, budget: u64) -> Self {
        let n = inst.task_count();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for &(a, b) in &inst.precedence {
            preds[b].push(a);
            succs[a].push(b);
        }
        // Follow ascending ids wherever precedence allows, so the decided
        // prefix lines up with the tie-break key and ties prune early.
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut ready: BinaryHeap<Reverse<usize>> =
            (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(Reverse(s));
                }
            }
        }

        // height[i]: number of tasks on the longest chain strictly below i
        let mut height = vec![0usize; n];
        for &i in order.iter().rev() {
            height[i] = succs[i].iter().map(|&s| height[s] + 1).max().unwrap_or(0);
        }
        let max_level = height.iter().map(|h| inst.levels - h).collect();

        let mut rest_weight = vec![0.0; n + 1];
        let mut rest_time = vec![0.0; n + 1];
        let mut rest_only = vec![PerAgent::new(0.0, 0.0); n + 1];
        let mut rest_blend = vec![0.0; n + 1];
        let half = 0.5 / inst.t_a_max;
        for pos in (0..n).rev() {
            let i = order[pos];
            let t = inst.time[i];
            let w = inst.weight[i];
            let (min_w, min_t) = match (t.human, t.robot) {
                (Some(h), Some(r)) => (w.human.min(w.robot), h.min(r)),
                (Some(h), None) => (w.human, h),
                (None, Some(r)) => (w.robot, r),
                (None, None) => unreachable!("rejected by build_milp"),
            };
            rest_weight[pos] = rest_weight[pos + 1] + min_w;
            let blend = AgentId::ALL
                .into_iter()
                .filter_map(|a| t[a].map(|t| w[a] + t * half))
                .fold(f64::INFINITY, f64::min);
            rest_blend[pos] = rest_blend[pos + 1] + blend;
            rest_time[pos] = rest_time[pos + 1] + min_t;
            let mut only = rest_only[pos + 1];
            match (t.human, t.robot) {
                (Some(h), None) => only.human += h,
                (None, Some(r)) => only.robot += r,
                _ => {}
            }
            rest_only[pos] = only;
        }

        Search {
            inst,
            order,
            preds,
            max_level,
            rest_weight,
            rest_time,
            rest_only,
            rest_blend,
            label: vec![None; n],
            work: vec![PerAgent::new(0.0, 0.0); inst.levels + 1],
            per_level: vec![0; inst.levels + 1],
            cycle_sum: 0.0,
            total: PerAgent::new(0.0, 0.0),
            weight: 0.0,
            summed_load: vec![0.0; inst.summed.len()],
            average_load: vec![0.0; inst.average.len()],
            best: None,
            nodes: 0,
            budget,
            exhausted: false,
        }
    }

    fn max_used(&self) -> usize {
        (1..=self.inst.levels)
            .rev()
            .find(|&l| self.per_level[l] > 0)
            .unwrap_or(0)
    }

    /// Lower bound on the objective of any completion of the current
    /// partial placement, `pos` tasks into `order`.
    fn bound(&self, pos: usize) -> f64 {
        let spread = (self.total.human + self.total.robot + self.rest_time[pos]) / 2.0;
        let only = self.rest_only[pos];
        let mut cycle = self
            .cycle_sum
            .max(spread)
            .max(self.total.human + only.human)
            .max(self.total.robot + only.robot);
        for (c, &load) in self.inst.average.iter().zip(&self.average_load) {
            cycle = cycle.max(c.required_cycle(load));
        }
        let separate = self.weight + self.rest_weight[pos] + cycle / self.inst.t_a_max;
        // every level lasts at least half its combined workload
        let blended = self.weight
            + (self.total.human + self.total.robot) * 0.5 / self.inst.t_a_max
            + self.rest_blend[pos];
        separate.max(blended)
    }

    /// Compares the decided prefix (ascending task index) against the
    /// incumbent. `Greater` means no completion can win a tie.
    fn prefix_vs_best(&self, best: &[Placement]) -> Ordering {
        for (mine, theirs) in self.label.iter().zip(best) {
            match mine {
                None => return Ordering::Less,
                Some(p) => match key(*p).cmp(&key(*theirs)) {
                    Ordering::Equal => continue,
                    other => return other,
                },
            }
        }
        Ordering::Equal
    }

    fn prune(&self, pos: usize) -> bool {
        let Some((best_obj, best)) = &self.best else {
            return false;
        };
        let bound = self.bound(pos);
        if bound > best_obj + EPS {
            return true;
        }
        // no strictly better completion exists; only a tie with a smaller key could still win
        bound >= best_obj - EPS && self.prefix_vs_best(best) != Ordering::Less
    }

    fn place(&mut self, i: usize, agent: AgentId, level: usize) {
        let t = self.inst.time[i][agent].expect("allowed");
        let before = self.work[level].human.max(self.work[level].robot);
        self.work[level][agent] += t;
        let after = self.work[level].human.max(self.work[level].robot);
        self.cycle_sum += after - before;
        self.per_level[level] += 1;
        self.total[agent] += t;
        self.weight += self.inst.weight[i][agent];
        if agent == AgentId::Human {
            for (acc, c) in self.summed_load.iter_mut().zip(&self.inst.summed) {
                *acc += c.load[i];
            }
            for (acc, c) in self.average_load.iter_mut().zip(&self.inst.average) {
                *acc += c.load[i];
            }
        }
        self.label[i] = Some((agent, level));
    }

    fn unplace(&mut self, i: usize, agent: AgentId, level: usize) {
        let t = self.inst.time[i][agent].expect("allowed");
        let before = self.work[level].human.max(self.work[level].robot);
        self.work[level][agent] -= t;
        let after = self.work[level].human.max(self.work[level].robot);
        self.cycle_sum += after - before;
        self.per_level[level] -= 1;
        self.total[agent] -= t;
        self.weight -= self.inst.weight[i][agent];
        if agent == AgentId::Human {
            for (acc, c) in self.summed_load.iter_mut().zip(&self.inst.summed) {
                *acc -= c.load[i];
            }
            for (acc, c) in self.average_load.iter_mut().zip(&self.inst.average) {
                *acc -= c.load[i];
            }
        }
        self.label[i] = None;
    }

    fn summed_ok(&self) -> bool {
        self.inst
            .summed
            .iter()
            .zip(&self.summed_load)
            .all(|(c, &load)| c.cumulative + load <= c.bound + EPS)
    }

    fn gaps_ok(&self, remaining: usize) -> bool {
        let used = self.max_used();
        let empty = (1..=used).filter(|&l| self.per_level[l] == 0).count();
        empty <= remaining
    }

    fn leaf(&mut self) {
        let base = self.cycle_sum;
        let required = self
            .inst
            .average
            .iter()
            .zip(&self.average_load)
            .map(|(c, &load)| c.required_cycle(load))
            .fold(0.0f64, f64::max);
        let objective = self.weight + base.max(required) / self.inst.t_a_max;
        let placement: Vec<Placement> = self.label.iter().map(|p| p.expect("leaf")).collect();
        let replace = match &self.best {
            None => true,
            Some((best_obj, best)) => {
                objective < best_obj - EPS
                    || (objective <= best_obj + EPS && compare_keys(&placement, best).is_lt())
            }
        };
        if replace {
            self.best = Some((objective, placement));
        }
    }

    fn dfs(&mut self, pos: usize) {
        if self.exhausted {
            return;
        }
        if pos == self.order.len() {
            self.leaf();
            return;
        }
        let i = self.order[pos];
        let lo = self.preds[i]
            .iter()
            .map(|&p| self.label[p].expect("topological order").1 + 1)
            .max()
            .unwrap_or(1);
        let remaining_after = self.order.len() - pos - 1;
        let hi = self.max_level[i].min(self.max_used() + 1 + remaining_after);
        let mut children: Vec<(f64, usize, AgentId)> = Vec::new();
        for level in lo..=hi {
            for agent in AgentId::ALL {
                if self.inst.time[i][agent].is_none() {
                    continue;
                }
                self.place(i, agent, level);
                if self.summed_ok() && self.gaps_ok(remaining_after) {
                    children.push((self.bound(pos + 1), level, agent));
                }
                self.unplace(i, agent, level);
            }
        }
        children.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        for (_, level, agent) in children {
            self.nodes += 1;
            if self.nodes > self.budget {
                self.exhausted = true;
                return;
            }
            self.place(i, agent, level);
            if !self.prune(pos + 1) {
                self.dfs(pos + 1);
            }
            self.unplace(i, agent, level);
            if self.exhausted {
                return;
            }
        }
    }
}

fn key((agent, level): Placement) -> (usize, AgentId) {
    (level, agent)
}

fn compare_keys(a: &[Placement], b: &[Placement]) -> Ordering {
    a.iter().map(|&p| key(p)).cmp(b.iter().map(|&p| key(p)))
}

/// Builds and solves in one call with the default solver.
pub fn assign(
    job: &JobSpec,
    state: &MetricState,
    metrics: &[MetricDef],
) -> Result<SolveReport, SolveError> {
    let inst = build_milp(job, state, metrics)?;
    Solver::default().solve(&inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MetricState, Task};
    use crate::scenario::assembly_shift;
    use std::collections::BTreeSet;

    fn sets(a: &Assignment, agent: AgentId) -> Vec<BTreeSet<TaskId>> {
        a.level_sets(agent)
    }

    fn set(ids: &[TaskId]) -> BTreeSet<TaskId> {
        ids.iter().copied().collect()
    }

    #[test]
    fn first_job_instance_shape() {
        let shift = assembly_shift();
        let j1 = &shift.jobs[0];
        let inst = build_milp(j1, &MetricState::initial(&shift.metrics), &shift.metrics).unwrap();
        assert_eq!(inst.levels, 9);
        assert_eq!(inst.binary_count(), 2 * 9 * 9);
        assert_eq!(inst.continuous_count(), 9);
        assert_eq!(inst.t_a_max, 25.0);
        let counts = inst.constraint_counts();
        assert_eq!(counts.average, 1);
        assert_eq!(counts.summed, 0);
        assert_eq!(counts.precedence, 4);
        assert_eq!(inst.average[0].bound, 1.1);
        // human-only tasks are forbidden for the robot
        assert!(inst.time[6].robot.is_none());
    }

    #[test]
    fn single_task_without_metrics() {
        let job = JobSpec::new(1, vec![Task::new(1, 5.0, 8.0)], vec![]).unwrap();
        let inst = build_milp(&job, &MetricState::default(), &[]).unwrap();
        assert_eq!(inst.binary_count(), 2);
        let c = inst.constraint_counts();
        assert_eq!((c.precedence, c.summed, c.average), (0, 0, 0));
        let report = Solver::default().solve(&inst).unwrap();
        assert_eq!(report.assignment.levels.len(), 1);
    }

    #[test]
    fn task_nobody_can_do_is_rejected() {
        let mut task = Task::new(1, 5.0, 5.0);
        task.capability = PerAgent::new(false, false);
        let job = JobSpec {
            id: 1,
            tasks: vec![task],
            precedence: vec![],
        };
        assert_eq!(
            build_milp(&job, &MetricState::default(), &[]),
            Err(SolveError::InfeasibleStructure(1))
        );
    }

    #[test]
    fn first_job_level_sets() {
        let shift = assembly_shift();
        let j1 = &shift.jobs[0];
        let report = assign(j1, &MetricState::initial(&shift.metrics), &shift.metrics).unwrap();
        let a = &report.assignment;
        assert_eq!(sets(a, AgentId::Human), vec![set(&[5, 7, 8]), set(&[9])]);
        assert_eq!(sets(a, AgentId::Robot), vec![set(&[3, 4, 6]), set(&[1, 2])]);
        assert!((report.objective - 6.3).abs() < 1e-9);
        assert_eq!(a.total_cycle_time(), 85.0);
        assert!(a.validate(j1).is_ok());
        assert!(report.proven_optimal);
    }

    #[test]
    fn second_job_after_heavy_first_job_keeps_loads_off_the_human() {
        let shift = assembly_shift();
        let j2 = &shift.jobs[1];
        let state = MetricState::initial(&shift.metrics).with(1, 135.0, 79.0);
        let a = assign(j2, &state, &shift.metrics).unwrap().assignment;
        for level in &a.levels {
            assert!(!level.human.contains(&5) && !level.human.contains(&6));
        }
        assert_eq!(sets(&a, AgentId::Human), vec![set(&[3]), set(&[1, 2])]);
        assert_eq!(sets(&a, AgentId::Robot), vec![set(&[4]), set(&[5, 6])]);
    }

    #[test]
    fn chain_forces_one_level_per_task() {
        let tasks = (1..=3).map(|i| Task::new(i, 4.0, 4.0)).collect();
        let job = JobSpec::new(1, tasks, vec![(1, 2), (2, 3)]).unwrap();
        let a = assign(&job, &MetricState::default(), &[])
            .unwrap()
            .assignment;
        assert_eq!(a.levels.len(), 3);
        assert!(a.levels.iter().all(|l| !l.is_empty()));
    }

    #[test]
    fn average_bound_inflates_the_last_level() {
        // the human must do the loaded task; the bound forces a pause
        let task = Task::new(1, 10.0, 1.0)
            .robot_incapable()
            .with_quality_load(vec![2.0]);
        let job = JobSpec::new(1, vec![task], vec![]).unwrap();
        let metrics = [MetricDef::average(1, 1.0)];
        let report = assign(&job, &MetricState::initial(&metrics), &metrics).unwrap();
        // 10 * 2 / c <= 1  =>  c >= 20
        assert!((report.assignment.levels[0].cycle_time - 20.0).abs() < 1e-9);
    }

    #[test]
    fn exceeded_summed_bound_is_infeasible() {
        let task = Task::new(1, 10.0, 1.0)
            .robot_incapable()
            .with_quality_load(vec![5.0]);
        let job = JobSpec::new(1, vec![task], vec![]).unwrap();
        let metrics = [MetricDef::summed(1, 4.0)];
        assert_eq!(
            assign(&job, &MetricState::initial(&metrics), &metrics),
            Err(SolveError::Infeasible)
        );
    }

    #[test]
    fn tiny_budget_is_reported() {
        let shift = assembly_shift();
        let inst = build_milp(
            &shift.jobs[0],
            &MetricState::initial(&shift.metrics),
            &shift.metrics,
        )
        .unwrap();
        assert_eq!(
            Solver::new(5).solve(&inst),
            Err(SolveError::NodeBudgetExceeded(5))
        );
    }

    #[test]
    fn empty_job_solves_trivially() {
        let job = JobSpec::new(1, vec![], vec![]).unwrap();
        let report = assign(&job, &MetricState::default(), &[]).unwrap();
        assert!(report.assignment.levels.is_empty());
        assert_eq!(report.objective, 0.0);
    }
}
