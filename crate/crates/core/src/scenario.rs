//! JSON file formats: scenarios, metric state and assignments.
//!
//! All durations are decimal seconds. A scenario looks like
//!
//! ```json
//! { "jobs": [ { "id": 1,
//!               "tasks": [ { "id": 1, "desc": "pick", "t_R": 12, "t_H": 15,
//!                            "D_R": 0.142857, "capability_R": true, "u": 0.4, "k": [0] } ],
//!               "precedence": [[3, 1]] } ],
//!   "metrics": [ { "id": 1, "kind": "average", "bound": 1.1 } ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Assignment, JobId, JobSpec, MetricDef, MetricState, ModelError, PerAgent, ShiftSpec, Task,
    TaskId,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub id: TaskId,
    #[serde(default)]
    pub desc: String,
    #[serde(rename = "t_R", default)]
    pub t_robot: Option<f64>,
    #[serde(rename = "t_H", default)]
    pub t_human: Option<f64>,
    #[serde(rename = "D_R", default)]
    pub robot_distance: f64,
    #[serde(rename = "capability_R", default = "default_true")]
    pub robot_capable: bool,
    #[serde(default)]
    pub u: f64,
    #[serde(default)]
    pub k: Vec<f64>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: JobId,
    pub tasks: Vec<TaskRecord>,
    #[serde(default)]
    pub precedence: Vec<(TaskId, TaskId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub jobs: Vec<JobRecord>,
    #[serde(default)]
    pub metrics: Vec<MetricDef>,
}

impl TaskRecord {
    fn into_task(self) -> Task {
        let robot_capable = self.robot_capable && self.t_robot.is_some();
        let mut task = Task {
            id: self.id,
            description: self.desc,
            nominal_time: PerAgent::new(self.t_human, self.t_robot),
            weight: PerAgent::default(),
            quality_load: self.k,
            capability: PerAgent::new(self.t_human.is_some(), robot_capable),
            attractiveness: self.u,
            robot_distance: self.robot_distance,
        };
        task.apply_derived_weights();
        task
    }

    fn from_task(task: &Task) -> Self {
        TaskRecord {
            id: task.id,
            desc: task.description.clone(),
            t_robot: task.nominal_time.robot,
            t_human: task.nominal_time.human,
            robot_distance: task.robot_distance,
            robot_capable: task.capability.robot,
            u: task.attractiveness,
            k: task.quality_load.clone(),
        }
    }
}

impl ScenarioFile {
    pub fn into_shift(self) -> Result<ShiftSpec, ModelError> {
        let jobs = self
            .jobs
            .into_iter()
            .map(|j| {
                JobSpec::new(
                    j.id,
                    j.tasks.into_iter().map(TaskRecord::into_task).collect(),
                    j.precedence,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        ShiftSpec::new(jobs, self.metrics)
    }

    pub fn from_shift(shift: &ShiftSpec) -> Self {
        ScenarioFile {
            jobs: shift
                .jobs
                .iter()
                .map(|j| JobRecord {
                    id: j.id,
                    tasks: j.tasks.iter().map(TaskRecord::from_task).collect(),
                    precedence: j.precedence.clone(),
                })
                .collect(),
            metrics: shift.metrics.clone(),
        }
    }
}

pub fn parse_scenario(json: &str) -> Result<ShiftSpec, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(json)?;
    Ok(file.into_shift()?)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ShiftSpec, ScenarioError> {
    parse_scenario(&read(path.as_ref())?)
}

pub fn parse_state(json: &str) -> Result<MetricState, ScenarioError> {
    Ok(serde_json::from_str(json)?)
}

pub fn load_state(path: impl AsRef<Path>) -> Result<MetricState, ScenarioError> {
    parse_state(&read(path.as_ref())?)
}

pub fn assignment_json(assignment: &Assignment) -> serde_json::Value {
    serde_json::to_value(assignment).expect("assignment serializes")
}

pub(crate) fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// The two-job assembly shift used throughout the test suite: nine tasks in
/// the first job, the six shared tasks in the second, one average lifted
/// weight metric bounded at 1.1.
pub const ASSEMBLY_SHIFT_JSON: &str = include_str!("../scenarios/assembly_shift.json");

pub fn assembly_shift() -> ShiftSpec {
    parse_scenario(ASSEMBLY_SHIFT_JSON).expect("bundled scenario is valid")
}
