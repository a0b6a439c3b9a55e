//! Simulated perception: how far along the human is, and whether the robot
//! finished or failed.
//!
//! A trace scripts what actually happens during a shift. Tasks it does not
//! mention fall back to stochastic human durations (nominal times a
//! lognormal factor) and nominal robot durations.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AgentId, JobId, TaskId};

/// Spread of the stochastic human duration factor.
pub const DEFAULT_SIGMA: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MonitorError {
    #[error("no task is being executed")]
    NotExecuting,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error("task {task}: {reason}")]
    InvalidEntry { task: TaskId, reason: String },
    #[error("trace sigma must be finite and nonnegative")]
    InvalidSigma,
}

/// Completion fraction as a function of elapsed time.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Profile {
    #[default]
    Linear,
    /// `(elapsed seconds, fraction)` breakpoints, interpolated linearly.
    /// `(0, 0)` and `(duration, 1)` are implied.
    Points(Vec<(f64, f64)>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ProfileRepr {
    Name(String),
    Points(Vec<(f64, f64)>),
}

impl Serialize for Profile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Profile::Linear => ProfileRepr::Name("linear".into()),
            Profile::Points(p) => ProfileRepr::Points(p.clone()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Profile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match ProfileRepr::deserialize(d)? {
            ProfileRepr::Name(n) if n == "linear" => Ok(Profile::Linear),
            ProfileRepr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown profile {n:?}, expected \"linear\" or breakpoints"
            ))),
            ProfileRepr::Points(p) => Ok(Profile::Points(p)),
        }
    }
}

/// How one human task occurrence actually unfolds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTrace {
    pub duration: f64,
    #[serde(default)]
    pub profile: Profile,
}

impl HumanTrace {
    pub fn linear(duration: f64) -> Self {
        HumanTrace {
            duration,
            profile: Profile::Linear,
        }
    }

    pub fn validate(&self, task: TaskId) -> Result<(), TraceError> {
        let bad = |reason: &str| {
            Err(TraceError::InvalidEntry {
                task,
                reason: reason.into(),
            })
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return bad("duration must be positive");
        }
        if let Profile::Points(points) = &self.profile {
            let mut prev = (0.0, 0.0);
            for &(t, p) in points {
                if !(0.0..=1.0).contains(&p) || !(0.0..=self.duration).contains(&t) {
                    return bad("profile point out of range");
                }
                if t < prev.0 || p < prev.1 {
                    return bad("profile must be nondecreasing");
                }
                prev = (t, p);
            }
        }
        Ok(())
    }

    /// Fraction complete after `elapsed` seconds, in `[0, 1]`.
    pub fn percent_complete(&self, elapsed: f64) -> f64 {
        if elapsed <= 0.0 {
            return 0.0;
        }
        if elapsed >= self.duration {
            return 1.0;
        }
        match &self.profile {
            Profile::Linear => elapsed / self.duration,
            Profile::Points(points) => {
                let mut prev = (0.0, 0.0);
                for &next in points.iter().chain(std::iter::once(&(self.duration, 1.0))) {
                    if elapsed <= next.0 {
                        let span = next.0 - prev.0;
                        if span <= 0.0 {
                            return next.1;
                        }
                        return prev.1 + (next.1 - prev.1) * (elapsed - prev.0) / span;
                    }
                    prev = next;
                }
                1.0
            }
        }
    }
}

/// How one robot task occurrence actually unfolds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotBehavior {
    pub duration: f64,
    /// The task times out this many seconds after it starts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_after: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobotStatus {
    Running,
    Done,
    Failed,
}

/// Estimated remaining time of the human's current task: the unfinished
/// fraction of its nominal time.
pub fn remaining_time(percent_complete: f64, nominal: f64) -> f64 {
    (1.0 - percent_complete.clamp(0.0, 1.0)) * nominal
}

/// Remaining-time estimate for a task started at `start`, or
/// `NotExecuting` when the human is idle.
pub fn monitor_h(
    current: Option<&HumanTrace>,
    nominal: f64,
    start: f64,
    clock: f64,
) -> Result<f64, MonitorError> {
    let trace = current.ok_or(MonitorError::NotExecuting)?;
    Ok(remaining_time(
        trace.percent_complete(clock - start),
        nominal,
    ))
}

pub fn monitor_r(behavior: &RobotBehavior, start: f64, clock: f64) -> RobotStatus {
    let elapsed = clock - start;
    match behavior.fail_after {
        Some(f) if f < behavior.duration && elapsed >= f => RobotStatus::Failed,
        _ if elapsed >= behavior.duration => RobotStatus::Done,
        _ => RobotStatus::Running,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Reassign,
    Delegate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanEntry {
    /// Job the entry belongs to; the first job of the shift when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobId>,
    pub task: TaskId,
    pub duration: f64,
    #[serde(default)]
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobId>,
    pub task: TaskId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_after: Option<f64>,
}

/// A message injected at `at` seconds after its job starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedMessage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job: Option<JobId>,
    pub at: f64,
    pub sender: AgentId,
    pub kind: MessageKind,
    pub task: TaskId,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    #[serde(default)]
    pub human: Vec<HumanEntry>,
    #[serde(default)]
    pub robot: Vec<RobotEntry>,
    #[serde(default)]
    pub messages: Vec<ScriptedMessage>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl Trace {
    pub fn validate(&self) -> Result<(), TraceError> {
        if let Some(s) = self.sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(TraceError::InvalidSigma);
            }
        }
        for h in &self.human {
            HumanTrace {
                duration: h.duration,
                profile: h.profile.clone(),
            }
            .validate(h.task)?;
        }
        for r in &self.robot {
            let bad = |reason: &str| TraceError::InvalidEntry {
                task: r.task,
                reason: reason.into(),
            };
            if r.duration.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
                return Err(bad("duration must be positive"));
            }
            if r.fail_after.is_some_and(|f| !(f.is_finite() && f >= 0.0)) {
                return Err(bad("fail_after must be nonnegative"));
            }
        }
        for m in &self.messages {
            if !(m.at.is_finite() && m.at >= 0.0) {
                return Err(TraceError::InvalidEntry {
                    task: m.task,
                    reason: "message time must be nonnegative".into(),
                });
            }
        }
        Ok(())
    }

    /// The part of the trace that applies to `job`. Entries without a job
    /// belong to `first_job`.
    pub fn for_job(&self, job: JobId, first_job: JobId) -> JobTrace {
        let applies = |j: Option<JobId>| j.unwrap_or(first_job) == job;
        let mut messages: Vec<ScriptedMessage> = self
            .messages
            .iter()
            .filter(|m| applies(m.job))
            .cloned()
            .collect();
        messages.sort_by(|a, b| a.at.total_cmp(&b.at));
        JobTrace {
            job,
            seed: self.seed,
            sigma: self.sigma.unwrap_or(DEFAULT_SIGMA),
            human: self
                .human
                .iter()
                .filter(|h| applies(h.job))
                .map(|h| {
                    (
                        h.task,
                        HumanTrace {
                            duration: h.duration,
                            profile: h.profile.clone(),
                        },
                    )
                })
                .collect(),
            robot: self
                .robot
                .iter()
                .filter(|r| applies(r.job))
                .map(|r| (r.task, (r.duration, r.fail_after)))
                .collect(),
            messages,
        }
    }
}

/// Resolved trace of one job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobTrace {
    pub job: JobId,
    pub seed: u64,
    pub sigma: f64,
    pub human: BTreeMap<TaskId, HumanTrace>,
    pub robot: BTreeMap<TaskId, (Option<f64>, Option<f64>)>,
    pub messages: Vec<ScriptedMessage>,
}

impl JobTrace {
    /// Nothing scripted; human durations are stochastic.
    pub fn stochastic(job: JobId, seed: u64, sigma: f64) -> Self {
        JobTrace {
            job,
            seed,
            sigma,
            human: BTreeMap::new(),
            robot: BTreeMap::new(),
            messages: Vec::new(),
        }
    }

    pub fn human(&self, task: TaskId, nominal: f64) -> HumanTrace {
        if let Some(h) = self.human.get(&task) {
            return h.clone();
        }
        let factor = if self.sigma > 0.0 {
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(self.seed, self.job, task, AgentId::Human));
            LogNormal::new(0.0, self.sigma)
                .expect("sigma validated")
                .sample(&mut rng)
        } else {
            1.0
        };
        // keep at least a millisecond so the task is observable
        HumanTrace::linear((nominal * factor).max(1e-3))
    }

    pub fn robot(&self, task: TaskId, nominal: f64) -> RobotBehavior {
        let (duration, fail_after) = self.robot.get(&task).copied().unwrap_or((None, None));
        RobotBehavior {
            duration: duration.unwrap_or(nominal),
            fail_after,
        }
    }
}

/// Independent RNG stream per (seed, job, task, agent).
pub fn stream_seed(seed: u64, job: JobId, task: TaskId, agent: AgentId) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [job as u64, task as u64, agent as u64] {
        x = splitmix(x ^ v);
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
