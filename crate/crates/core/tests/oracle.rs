mod common;

use common::{brute_force, check_constraints, random_instance};
use hrsched::assignment::{assign, build_milp, SolveError, Solver};
use hrsched::model::{AgentId, JobSpec, MetricDef, MetricState};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn solver_matches_exhaustive_enumeration(seed in any::<u64>()) {
        let (job, metrics, state) = random_instance(seed);
        let expected = brute_force(&job, &metrics, &state);
        match assign(&job, &state, &metrics) {
            Ok(report) => {
                let best = expected.expect("solver found a placement the oracle rejects");
                prop_assert!((report.objective - best).abs() < 1e-7,
                    "solver {} oracle {}", report.objective, best);
                prop_assert!(report.proven_optimal);
                if let Err(e) = check_constraints(&job, &metrics, &state, &report.assignment) {
                    return Err(TestCaseError::fail(e));
                }
            }
            Err(SolveError::Infeasible) => prop_assert!(expected.is_none()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn extra_quality_constraint_never_helps(seed in any::<u64>(), bound in 1u32..15) {
        let (job, metrics, state) = random_instance(seed);
        let Ok(base) = assign(&job, &state, &metrics) else { return Ok(()) };
        let mut tighter = metrics.clone();
        let id = metrics.len() as u32 + 1;
        tighter.push(MetricDef::summed(id, bound as f64));
        let job = with_extra_load(&job, seed);
        match assign(&job, &state, &tighter) {
            Ok(r) => prop_assert!(r.objective >= base.objective - 1e-9),
            Err(SolveError::Infeasible) => {}
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn scaling_times_keeps_the_optimal_placement(seed in any::<u64>(), factor in 2u32..6) {
        let (job, _, _) = random_instance(seed);
        let state = MetricState::default();
        let base = assign(&job, &state, &[]).unwrap();
        let mut scaled = job.clone();
        for t in &mut scaled.tasks {
            t.nominal_time.human = t.nominal_time.human.map(|x| x * factor as f64);
            t.nominal_time.robot = t.nominal_time.robot.map(|x| x * factor as f64);
        }
        let again = assign(&scaled, &state, &[]).unwrap();
        for id in job.task_ids() {
            prop_assert_eq!(base.assignment.placement(id), again.assignment.placement(id));
        }
    }

    #[test]
    fn average_constraint_holds_on_every_output(seed in any::<u64>()) {
        let (job, metrics, state) = random_instance(seed);
        if let Ok(report) = assign(&job, &state, &metrics) {
            let exposure = hrsched::quality::Exposure::nominal(&report.assignment, &job);
            for (m, def) in metrics.iter().enumerate() {
                if def.kind != hrsched::model::MetricKind::Average {
                    continue;
                }
                let acc = state.for_metric(def.id);
                let load: f64 = exposure
                    .human_tasks
                    .iter()
                    .map(|&(id, d)| d * job.task(id).unwrap().quality_load[m])
                    .sum();
                // multiplied-through form
                prop_assert!(acc.cumulative_cost + load
                    <= def.bound * (acc.elapsed + exposure.cycle) + 1e-6);
            }
        }
    }
}

/// Adds a random load for the extra metric to every task.
fn with_extra_load(job: &JobSpec, seed: u64) -> JobSpec {
    let mut job = job.clone();
    for (i, t) in job.tasks.iter_mut().enumerate() {
        t.quality_load.push(((seed >> (i % 32)) & 3) as f64);
    }
    job
}

#[test]
fn instance_counts_scale_with_task_count() {
    for seed in 0..20 {
        let (job, metrics, state) = random_instance(seed);
        let inst = build_milp(&job, &state, &metrics).unwrap();
        assert_eq!(inst.binary_count(), 2 * job.len() * inst.levels);
        assert_eq!(inst.continuous_count(), inst.levels);
        let finite_max = job
            .tasks
            .iter()
            .flat_map(|t| AgentId::ALL.map(|a| t.time_for(a)))
            .flatten()
            .fold(0.0, f64::max);
        assert_eq!(inst.t_a_max, finite_max);
    }
}

#[test]
fn layered_graph_uses_four_levels() {
    use hrsched::model::Task;
    // two sources, a three-deep middle, one sink
    let tasks = (1..=7).map(|i| Task::new(i, 10.0, 10.0)).collect();
    let edges = vec![
        (1, 3),
        (2, 3),
        (2, 4),
        (3, 5),
        (4, 5),
        (4, 6),
        (5, 7),
        (6, 7),
    ];
    let job = JobSpec::new(1, tasks, edges).unwrap();
    let report = assign(&job, &MetricState::default(), &[]).unwrap();
    assert_eq!(report.assignment.levels.len(), 4);
}

#[test]
fn node_budget_is_configurable() {
    let (job, metrics, state) = random_instance(11);
    let inst = build_milp(&job, &state, &metrics).unwrap();
    let full = Solver::default().solve(&inst);
    assert!(full.is_ok() || full == Err(SolveError::Infeasible));
    assert_eq!(
        Solver::new(0).solve(&inst).unwrap_err(),
        SolveError::NodeBudgetExceeded(0)
    );
}
