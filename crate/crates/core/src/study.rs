//! Temporal refinement studies against the manufactured solution.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{error_vs_exact, ConvergenceTable, StepRecord};
use crate::error::{Error, Result};
use crate::timestepping::{run_simulation, StepMode};

/// Relative perturbation of the random time grids.
pub const RANDOM_AMPLITUDE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Random { seed: u64 },
}

/// Result of one forced run with `N` steps.
#[derive(Debug, Clone)]
pub struct ForcedRun {
    pub steps: usize,
    /// Max-norm error against the exact solution at the horizon.
    pub error: f64,
    pub records: Vec<StepRecord>,
}

/// `cfg` with `N` steps of the requested kind. Random grids draw with
/// `seed + N` so each refinement level gets its own perturbation.
pub fn with_steps(cfg: &RunConfig, steps: usize, kind: GridKind) -> Result<RunConfig> {
    if steps == 0 {
        return Err(Error::Parameter("need at least one step".into()));
    }
    let mut cfg = cfg.clone();
    cfg.time.steps = match kind {
        GridKind::Uniform => StepMode::Uniform {
            tau: cfg.time.horizon / steps as f64,
        },
        GridKind::Random { seed } => StepMode::Random {
            steps,
            amplitude: RANDOM_AMPLITUDE,
            seed: seed.wrapping_add(steps as u64),
        },
    };
    Ok(cfg)
}

/// Runs a forced configuration and measures the final-time error.
pub fn forced_run(cfg: &RunConfig) -> Result<ForcedRun> {
    if !cfg.forcing.enabled {
        return Err(Error::ConfigInvalid {
            field: "forcing.enabled".into(),
            message: "refinement studies need the manufactured forcing".into(),
        });
    }
    let sim = cfg.simulation()?;
    let exact = cfg.manufactured();
    let dim = cfg.grid.dim;
    let out = run_simulation(&sim, cfg.initial_field()?)?;
    let t = out.records.last().map_or(0.0, |r| r.t);
    let error = error_vs_exact(&out.field, cfg.grid.origin, t, |x, t| exact.exact(x, t, dim));
    Ok(ForcedRun {
        steps: out.records.len(),
        error,
        records: out.records,
    })
}

/// Runs every refinement level concurrently and tabulates the errors.
pub fn convergence_study(cfg: &RunConfig, ns: &[usize], kind: GridKind) -> Result<(ConvergenceTable, Vec<ForcedRun>)> {
    let runs: Vec<ForcedRun> = ns
        .par_iter()
        .map(|&n| forced_run(&with_steps(cfg, n, kind)?))
        .collect::<Result<_>>()?;
    let mut table = ConvergenceTable::new();
    for (&n, run) in ns.iter().zip(&runs) {
        table.push(n, cfg.time.horizon, run.error)?;
    }
    Ok((table, runs))
}
