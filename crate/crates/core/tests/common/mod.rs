//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hrsched::assignment::assign;
use hrsched::dynamics::{EventKind, JobRun, RunOptions, Slot};
use hrsched::model::{AgentId, Assignment, JobSpec, MetricDef, MetricKind, MetricState, TaskId};
use hrsched::monitor::{HumanEntry, MessageKind, Profile, RobotEntry, ScriptedMessage, Trace};
use hrsched::quality::{average_metric, summed_metric, Exposure};
use hrsched::sim::random_job;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best objective over every placement of every task on an agent and a
/// level, levels numbered without gaps. `None` when nothing is feasible.
pub fn brute_force(job: &JobSpec, metrics: &[MetricDef], state: &MetricState) -> Option<f64> {
    let n = job.len();
    if n == 0 {
        return Some(0.0);
    }
    let t_max = job
        .tasks
        .iter()
        .flat_map(|t| [t.nominal_time.human, t.nominal_time.robot])
        .flatten()
        .fold(0.0f64, f64::max);
    let mut best: Option<f64> = None;
    let mut levels = vec![1usize; n];
    loop {
        let top = *levels.iter().max().unwrap();
        let gapless = (1..=top).all(|l| levels.contains(&l));
        if gapless {
            for mask in 0u32..(1 << n) {
                if let Some(obj) = objective(job, metrics, state, &levels, mask, t_max) {
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
        }
        // odometer over levels in 1..=n
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            levels[i] += 1;
            if levels[i] <= n {
                break;
            }
            levels[i] = 1;
            i += 1;
        }
    }
}

fn objective(
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    levels: &[usize],
    human_mask: u32,
    t_max: f64,
) -> Option<f64> {
    let top = *levels.iter().max().unwrap();
    let mut work = vec![(0.0f64, 0.0f64); top + 1];
    let mut weight = 0.0;
    let is_human = |i: usize| human_mask & (1 << i) != 0;
    for (i, t) in job.tasks.iter().enumerate() {
        let (agent, slot) = if is_human(i) {
            (AgentId::Human, &mut work[levels[i]].0)
        } else {
            (AgentId::Robot, &mut work[levels[i]].1)
        };
        if !t.capability[agent] {
            return None;
        }
        *slot += t.nominal_time[agent]?;
        weight += t.weight[agent];
    }
    for &(a, b) in &job.precedence {
        let ia = job.index_of(a).unwrap();
        let ib = job.index_of(b).unwrap();
        if levels[ia] >= levels[ib] {
            return None;
        }
    }
    let mut cycle: f64 = work.iter().map(|w| w.0.max(w.1)).sum();
    for (m, def) in metrics.iter().enumerate() {
        let acc = state.for_metric(def.id);
        let human = job.tasks.iter().enumerate().filter(|(i, _)| is_human(*i));
        match def.kind {
            MetricKind::Summed => {
                let total: f64 =
                    acc.cumulative_cost + human.map(|(_, t)| t.quality_load[m]).sum::<f64>();
                if total > def.bound + 1e-9 {
                    return None;
                }
            }
            MetricKind::Average => {
                let load: f64 = human
                    .map(|(_, t)| t.nominal_time.human.unwrap() * t.quality_load[m])
                    .sum();
                // stretch the job until the time average drops to the bound
                let needed = (acc.cumulative_cost + load) / def.bound - acc.elapsed;
                cycle = cycle.max(needed);
            }
        }
    }
    Some(weight + cycle / t_max)
}

/// Checks every assignment constraint by direct evaluation.
pub fn check_constraints(
    job: &JobSpec,
    metrics: &[MetricDef],
    state: &MetricState,
    a: &Assignment,
) -> Result<(), String> {
    a.validate(job).map_err(|e| e.to_string())?;
    if a.levels.iter().any(|l| l.is_empty()) {
        return Err("empty level in result".into());
    }
    let exposure = Exposure::nominal(a, job);
    for def in metrics {
        let value = match def.kind {
            MetricKind::Summed => summed_metric(&exposure, job, metrics, state, def.id),
            MetricKind::Average => {
                average_metric(&exposure, job, metrics, state, def.id).or(Ok(0.0))
            }
        }
        .map_err(|e: hrsched::quality::QualityError| e.to_string())?;
        if value > def.bound + 1e-6 {
            return Err(format!(
                "metric {} = {value} above bound {}",
                def.id, def.bound
            ));
        }
    }
    Ok(())
}

/// Random instance: job of 1..=6 tasks, up to two metrics of random kinds,
/// random carried state.
pub fn random_instance(seed: u64) -> (JobSpec, Vec<MetricDef>, MetricState) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let m = rng.random_range(0..=2);
    let job = hrsched::sim::random_job(&mut rng, 1, n, m);
    let metrics: Vec<MetricDef> = (0..m as u32)
        .map(|id| {
            if rng.random_bool(0.5) {
                MetricDef::summed(id + 1, rng.random_range(1..=12) as f64)
            } else {
                MetricDef::average(id + 1, rng.random_range(1..=20) as f64 / 10.0)
            }
        })
        .collect();
    let mut state = MetricState::initial(&metrics);
    for def in &metrics {
        let c0 = rng.random_range(0..=40) as f64;
        let tm = rng.random_range(0..=60) as f64;
        state = state.with(
            def.id,
            if def.kind == MetricKind::Summed {
                c0 / 10.0
            } else {
                c0
            },
            tm,
        );
    }
    (job, metrics, state)
}

/// Random job plus a disturbed trace: odd durations, robot timeouts and
/// swap requests from both sides.
pub fn disturbed(seed: u64) -> (JobSpec, Trace) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=7);
    let job = random_job(&mut rng, 1, n, 0);
    let mut trace = Trace {
        seed,
        sigma: Some(0.3),
        ..Trace::default()
    };
    for t in &job.tasks {
        if rng.random_bool(0.5) {
            if let Some(h) = t.time_for(AgentId::Human) {
                trace.human.push(HumanEntry {
                    job: None,
                    task: t.id,
                    duration: h * rng.random_range(0.5..2.0),
                    profile: Profile::Points(vec![(0.0, 0.0)]),
                });
            }
        }
        if rng.random_bool(0.3) {
            trace.robot.push(RobotEntry {
                job: None,
                task: t.id,
                duration: Some(rng.random_range(1.0..25.0)),
                fail_after: rng.random_bool(0.5).then(|| rng.random_range(0.0..5.0)),
            });
        }
    }
    for _ in 0..rng.random_range(0..6) {
        let sender = if rng.random_bool(0.8) {
            AgentId::Human
        } else {
            AgentId::Robot
        };
        let kind = if rng.random_bool(0.5) {
            MessageKind::Delegate
        } else {
            MessageKind::Reassign
        };
        trace.messages.push(ScriptedMessage {
            job: None,
            at: rng.random_range(0.0..60.0),
            sender,
            kind,
            task: rng.random_range(1..=n as TaskId + 1),
        });
    }
    (job, trace)
}

pub fn options(seed: u64) -> RunOptions {
    RunOptions {
        reschedule: !seed.is_multiple_of(3),
        comms: !seed.is_multiple_of(5),
        ..RunOptions::default()
    }
}

/// Drives a run event by event, checking the state after every step.
pub fn run_checked(job: &JobSpec, trace: &Trace, opts: RunOptions) -> Result<JobRun, String> {
    let a = assign(job, &MetricState::default(), &[]).map_err(|e| e.to_string())?;
    let mut run = JobRun::new(job.clone(), &a.assignment, trace.for_job(1, 1), opts, 0)
        .map_err(|e| e.to_string())?;
    run.state().check_invariants(job)?;
    let mut steps = 0;
    while let Some(t) = run.next_event_time() {
        let before: BTreeSet<TaskId> = run.state().completed.clone();
        run.advance_to(t).map_err(|e| e.to_string())?;
        run.state().check_invariants(job)?;
        if !before.is_subset(&run.state().completed) {
            return Err("completed set shrank".into());
        }
        steps += 1;
        if steps > 10_000 {
            return Err("run does not terminate".into());
        }
    }
    if !run.is_finished() {
        return Err("run stalled".into());
    }
    Ok(run)
}

/// Every task ends up completed or dropped, completed tasks finish exactly
/// once, and nothing starts before all of its predecessors have finished.
pub fn check_execution(job: &JobSpec, run: &JobRun) -> Result<(), String> {
    let s = run.state();
    let done: BTreeSet<TaskId> = s.completed.union(&s.dropped).copied().collect();
    if done != job.task_ids().collect::<BTreeSet<_>>() {
        return Err(format!("tasks lost: settled {done:?}"));
    }
    let mut finished: BTreeMap<TaskId, u64> = BTreeMap::new();
    for e in run.events() {
        match e.kind {
            EventKind::Complete {
                task: Slot::Task(t),
                ..
            } => {
                if finished.insert(t, e.t).is_some() {
                    return Err(format!("task {t} finished twice"));
                }
            }
            EventKind::Start {
                task: Slot::Task(t),
                ..
            } => {
                for p in job.predecessors(t) {
                    if !finished.get(&p).is_some_and(|&f| f <= e.t) {
                        return Err(format!("task {t} started at {} before {p} finished", e.t));
                    }
                }
            }
            _ => {}
        }
    }
    if finished.keys().copied().collect::<BTreeSet<_>>() != s.completed {
        return Err("completion events disagree with the completed set".into());
    }
    Ok(())
}
