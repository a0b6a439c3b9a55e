//! Job-quality metrics and the cross-job accumulator.
//!
//! A summed metric is the cumulative cost plus the loads of every task the
//! human executes. An average metric divides the cumulative cost plus the
//! duration-weighted loads of the human's tasks by the elapsed time of the
//! metric's time frame plus the job's cycle time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AgentId, Assignment, JobSpec, MetricDef, MetricId, MetricKind, MetricState, TaskId,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("unknown metric {0}")]
    UnknownMetric(MetricId),
    #[error("metric {0}: time frame plus cycle time is zero")]
    ZeroHorizon(MetricId),
    #[error("task {0} has no realization")]
    MissingRealization(TaskId),
    #[error("task {0} does not belong to the job")]
    UnknownTask(TaskId),
}

/// What the human did (or is planned to do) during one job: each human
/// task with its duration, plus the job's cycle time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Exposure {
    pub human_tasks: Vec<(TaskId, f64)>,
    pub cycle: f64,
}

impl Exposure {
    /// Planned exposure: nominal human times and the assignment's cycle time.
    pub fn nominal(assignment: &Assignment, job: &JobSpec) -> Self {
        let human_tasks = assignment
            .levels
            .iter()
            .flat_map(|l| l.human.iter())
            .filter_map(|&id| {
                job.task(id)
                    .and_then(|t| t.nominal_time.human)
                    .map(|d| (id, d))
            })
            .collect();
        Exposure {
            human_tasks,
            cycle: assignment.total_cycle_time(),
        }
    }

    /// Realized exposure from executed tasks.
    pub fn realized(realized: &BTreeMap<TaskId, Realization>, cycle: f64) -> Self {
        let human_tasks = realized
            .iter()
            .filter_map(|(&id, r)| match *r {
                Realization::Executed {
                    agent: AgentId::Human,
                    duration,
                } => Some((id, duration)),
                _ => None,
            })
            .collect();
        Exposure { human_tasks, cycle }
    }
}

/// How a task of a finished job ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum Realization {
    Executed {
        agent: AgentId,
        duration: f64,
    },
    /// Abandoned: no agent could take it over after a failure.
    Dropped,
}

fn metric_index(metrics: &[MetricDef], m: MetricId) -> Result<usize, QualityError> {
    metrics
        .iter()
        .position(|d| d.id == m)
        .ok_or(QualityError::UnknownMetric(m))
}

fn load(job: &JobSpec, task: TaskId, index: usize) -> Result<f64, QualityError> {
    let task = job.task(task).ok_or(QualityError::UnknownTask(task))?;
    Ok(task.quality_load.get(index).copied().unwrap_or(0.0))
}

pub fn summed_metric(
    exposure: &Exposure,
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    m: MetricId,
) -> Result<f64, QualityError> {
    let index = metric_index(metrics, m)?;
    let mut total = state.for_metric(m).cumulative_cost;
    for &(id, _) in &exposure.human_tasks {
        total += load(job, id, index)?;
    }
    Ok(total)
}

pub fn average_metric(
    exposure: &Exposure,
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    m: MetricId,
) -> Result<f64, QualityError> {
    let index = metric_index(metrics, m)?;
    let acc = state.for_metric(m);
    let mut numerator = acc.cumulative_cost;
    for &(id, duration) in &exposure.human_tasks {
        numerator += duration * load(job, id, index)?;
    }
    let horizon = acc.elapsed + exposure.cycle;
    if horizon <= 0.0 {
        return Err(QualityError::ZeroHorizon(m));
    }
    Ok(numerator / horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub id: MetricId,
    pub kind: MetricKind,
    pub value: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// Every metric of the shift evaluated on one exposure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricEvaluation {
    pub metrics: Vec<MetricValue>,
}

impl MetricEvaluation {
    pub fn all_satisfied(&self) -> bool {
        self.metrics.iter().all(|m| m.satisfied)
    }

    pub fn get(&self, id: MetricId) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.id == id)
    }
}

/// Evaluates all metrics. A zero horizon with no load evaluates to 0.
pub fn evaluate(
    exposure: &Exposure,
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
) -> Result<MetricEvaluation, QualityError> {
    let mut out = Vec::with_capacity(metrics.len());
    for def in metrics {
        let value = match def.kind {
            MetricKind::Summed => summed_metric(exposure, job, metrics, state, def.id)?,
            MetricKind::Average => match average_metric(exposure, job, metrics, state, def.id) {
                Ok(v) => v,
                Err(QualityError::ZeroHorizon(_)) => 0.0,
                Err(e) => return Err(e),
            },
        };
        out.push(MetricValue {
            id: def.id,
            kind: def.kind,
            value,
            bound: def.bound,
            satisfied: value <= def.bound,
        });
    }
    Ok(MetricEvaluation { metrics: out })
}

/// Folds a finished job into the accumulator: human-executed tasks add their
/// load (summed metrics) or realized duration times load (average metrics),
/// and every metric's time frame grows by the realized cycle time.
pub fn update_jq(
    state: &MetricState,
    job: &JobSpec,
    metrics: &[MetricDef],
    realized: &BTreeMap<TaskId, Realization>,
    realized_cycle: f64,
) -> Result<MetricState, QualityError> {
    for id in job.task_ids() {
        if !realized.contains_key(&id) {
            return Err(QualityError::MissingRealization(id));
        }
    }
    let mut next = state.clone();
    for (index, def) in metrics.iter().enumerate() {
        let mut added = 0.0;
        for (&id, r) in realized {
            if let Realization::Executed {
                agent: AgentId::Human,
                duration,
            } = *r
            {
                let k = load(job, id, index)?;
                added += match def.kind {
                    MetricKind::Summed => k,
                    MetricKind::Average => duration * k,
                };
            }
        }
        let acc = state.for_metric(def.id);
        next = next.with(
            def.id,
            acc.cumulative_cost + added,
            acc.elapsed + realized_cycle.max(0.0),
        );
    }
    Ok(next)
}
