//! Batch sweeps over independent solves and simulations.
//!
//! With the `parallel` feature (on by default) [`Mode::Parallel`] spreads
//! the items over rayon's thread pool; without it every sweep runs
//! sequentially. Results always come back in input order.

use serde::{Deserialize, Serialize};

use crate::assignment::{MilpInstance, SolveError, SolveReport, Solver};
use crate::model::{JobId, ShiftSpec};
use crate::monitor::Trace;
use crate::sim::{compare_policies, ShiftOptions, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Parallel,
    Sequential,
}

pub fn map<T, R, F>(mode: Mode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

pub fn solve_all(
    mode: Mode,
    solver: Solver,
    instances: &[MilpInstance],
) -> Vec<Result<SolveReport, SolveError>> {
    map(mode, instances, |inst| solver.solve(inst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub seed: u64,
    pub job: JobId,
    pub cycle_on: f64,
    pub cycle_off: f64,
}

impl PolicyPoint {
    pub fn delta(&self) -> f64 {
        self.cycle_on - self.cycle_off
    }
}

/// Paired on/off runs of `shift` under one stochastic trace per seed.
pub fn policy_sweep(
    mode: Mode,
    shift: &ShiftSpec,
    seeds: &[u64],
    sigma: f64,
    options: ShiftOptions,
) -> Result<Vec<PolicyPoint>, SimError> {
    let runs = map(mode, seeds, |&seed| {
        let trace = Trace {
            seed,
            sigma: Some(sigma),
            ..Trace::default()
        };
        compare_policies(shift, &trace, options).map(|d| {
            d.jobs
                .iter()
                .map(|j| PolicyPoint {
                    seed,
                    job: j.job,
                    cycle_on: j.cycle_on,
                    cycle_off: j.cycle_off,
                })
                .collect::<Vec<_>>()
        })
    });
    let mut out = Vec::new();
    for r in runs {
        out.extend(r?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::assembly_shift;

    #[test]
    fn modes_agree() {
        let shift = assembly_shift();
        let seeds: Vec<u64> = (0..8).collect();
        let opts = ShiftOptions::default();
        let a = policy_sweep(Mode::Parallel, &shift, &seeds, 0.25, opts).unwrap();
        let b = policy_sweep(Mode::Sequential, &shift, &seeds, 0.25, opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16);
    }

    #[test]
    fn map_keeps_order() {
        let v: Vec<u32> = (0..100).collect();
        assert_eq!(
            map(Mode::Parallel, &v, |x| x * 2),
            map(Mode::Sequential, &v, |x| x * 2)
        );
    }
}
