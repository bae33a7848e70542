//! Time grids (uniform, randomly perturbed, energy-adaptive), the
//! manufactured-solution forcing, and the simulation driver.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{check_energy_dissipation, check_mbp, StepRecord};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::linsolve::KrylovConfig;
use crate::physics::{discrete_energy, Mobility};
use crate::schemes::{dscn_step, dsbe_step, first_step, Forcing, SchemeKind, SchemeParams, StepInput};

/// `max{τ_min, τ_max / sqrt(1 + α |dE/dt|²)}`, clamped to `[τ_min, τ_max]`.
pub fn next_tau_adaptive(tau_max: f64, tau_min: f64, alpha: f64, de_dt: f64) -> f64 {
    let raw = tau_max / (1.0 + alpha * de_dt * de_dt).sqrt();
    // NaN (e.g. α = ∞ with dE/dt = 0) falls back to the flat-energy limit.
    let raw = if raw.is_nan() { tau_max } else { raw };
    raw.max(tau_min).min(tau_max)
}

/// `N = round(T / τ)` equal steps, or steps of `τ` with a shortened last step
/// when `T / τ` is not an integer.
pub fn build_uniform_steps(tau: f64, horizon: f64) -> Vec<f64> {
    if horizon <= 0.0 {
        return Vec::new();
    }
    let ratio = horizon / tau;
    let n = ratio.round();
    if (ratio - n).abs() <= 1e-9 * ratio.max(1.0) && n >= 1.0 {
        return vec![horizon / n; n as usize];
    }
    let full = ratio.floor() as usize;
    let mut steps = vec![tau; full];
    steps.push(horizon - tau * full as f64);
    steps
}

/// `N = round(T / τ̄)` steps `τ̄ (1 + a u_k)` with `u_k ~ U[-1, 1]`, rescaled
/// by a common factor so that they sum to `T`.
pub fn build_random_steps(tau_mean: f64, amplitude: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::Parameter(format!("perturbation amplitude must lie in [0, 1), got {amplitude}")));
    }
    if !(tau_mean > 0.0) {
        return Err(Error::Parameter(format!("mean step must be > 0, got {tau_mean}")));
    }
    if horizon <= 0.0 {
        return Ok(Vec::new());
    }
    let n = ((horizon / tau_mean).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..n)
        .map(|_| tau_mean * (1.0 + amplitude * rng.gen_range(-1.0..=1.0)))
        .collect();
    let scale = horizon / raw.iter().sum::<f64>();
    let mut steps: Vec<f64> = raw.iter().map(|t| t * scale).collect();
    // Absorb the rounding of the rescale into the last step.
    let head: f64 = steps[..n - 1].iter().sum();
    steps[n - 1] = horizon - head;
    Ok(steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepMode {
    Uniform { tau: f64 },
    Random { steps: usize, amplitude: f64, seed: u64 },
    Adaptive { tau_max: f64, tau_min: f64, alpha: f64 },
}

impl StepMode {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            StepMode::Uniform { tau } if !(tau.is_finite() && tau > 0.0) => {
                Err(format!("uniform step must be > 0, got {tau}"))
            }
            StepMode::Random { steps, amplitude, .. } => {
                if steps == 0 {
                    Err("random mode needs at least one step".into())
                } else if !(0.0..1.0).contains(&amplitude) {
                    Err(format!("amplitude must lie in [0, 1), got {amplitude}"))
                } else {
                    Ok(())
                }
            }
            StepMode::Adaptive { tau_max, tau_min, alpha } => {
                if !(tau_min > 0.0 && tau_min <= tau_max && tau_max.is_finite()) {
                    Err(format!("need 0 < tau_min <= tau_max, got {tau_min} and {tau_max}"))
                } else if !(alpha >= 0.0) {
                    Err(format!("alpha must be >= 0, got {alpha}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Produces the step sequence of a run, one step at a time.
#[derive(Debug, Clone)]
pub struct StepController {
    mode: StepMode,
    horizon: f64,
    planned: Vec<f64>,
    last_rate: Option<f64>,
}

impl StepController {
    pub fn new(mode: StepMode, horizon: f64) -> Result<Self> {
        mode.validate().map_err(Error::Parameter)?;
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(Error::Parameter(format!("horizon must be >= 0, got {horizon}")));
        }
        let planned = match mode {
            StepMode::Uniform { tau } => build_uniform_steps(tau, horizon),
            StepMode::Random { steps, amplitude, seed } => {
                build_random_steps(horizon / steps as f64, amplitude, horizon, seed)?
            }
            StepMode::Adaptive { .. } => Vec::new(),
        };
        Ok(Self {
            mode,
            horizon,
            planned,
            last_rate: None,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Energy rate `(Eⁿ - Eⁿ⁻¹)/τ_n` used for the most recent adaptive step.
    pub fn last_rate(&self) -> Option<f64> {
        self.last_rate
    }

    /// Step `τ_{n+1}` to take from time `t` after `n` steps, or `None` once
    /// the horizon is reached. `history` is `(Eⁿ⁻¹, Eⁿ, τ_n)` when n ≥ 1.
    pub fn next_tau(&mut self, n: usize, t: f64, history: Option<(f64, f64, f64)>) -> Option<f64> {
        match self.mode {
            StepMode::Uniform { .. } | StepMode::Random { .. } => self.planned.get(n).copied(),
            StepMode::Adaptive { tau_max, tau_min, alpha } => {
                let remaining = self.horizon - t;
                if remaining <= 1e-13 * self.horizon.max(1.0) {
                    return None;
                }
                let tau = match history {
                    Some((e_prev, e_now, tau_n)) => {
                        let rate = (e_now - e_prev) / tau_n;
                        self.last_rate = Some(rate);
                        next_tau_adaptive(tau_max, tau_min, alpha, rate)
                    }
                    None => tau_max,
                };
                if tau >= remaining * (1.0 - 1e-12) {
                    Some(remaining)
                } else {
                    Some(tau)
                }
            }
        }
    }
}

/// Manufactured solution `φ = e^{-t} Π_a sin(x_a)` of the forced equation
/// `φ_t = -M(φ) μ + g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub eps: f64,
    pub mobility: Mobility,
    pub origin: f64,
}

impl ManufacturedSolution {
    pub fn exact(&self, x: [f64; 3], t: f64, dim: usize) -> f64 {
        (-t).exp() * x.iter().take(dim).map(|v| v.sin()).product::<f64>()
    }

    /// `g = φ_t + M(φ) μ` with `Δφ = -dφ`, `μ = dε²φ - φ + φ³`.
    pub fn source(&self, x: [f64; 3], t: f64, dim: usize) -> f64 {
        let phi = self.exact(x, t, dim);
        let mu = (dim as f64 * self.eps * self.eps - 1.0) * phi + phi * phi * phi;
        -phi + self.mobility.eval(phi) * mu
    }
}

impl Forcing for ManufacturedSolution {
    fn sample(&self, grid: &GridSpec, t: f64) -> Field {
        let dim = grid.dim();
        Field::from_fn(*grid, self.origin, |x| self.source(x, t, dim))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    Off,
    #[default]
    Warn,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorPolicy {
    pub mbp: MonitorMode,
    pub energy: MonitorMode,
    /// Allowed excess of `‖φ‖_∞` over 1.
    pub mbp_slack: f64,
    /// Relative slack for step-to-step energy decrease (DsBE).
    pub energy_slack: f64,
    /// Absolute slack for `Eⁿ ≤ E⁰` (DsCN).
    pub energy_bound_slack: f64,
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        Self {
            mbp: MonitorMode::Warn,
            energy: MonitorMode::Warn,
            mbp_slack: 1e-8,
            energy_slack: 1e-8,
            energy_bound_slack: 1e-6,
        }
    }
}

/// Everything needed to advance a field from `t = 0` to the horizon.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub params: SchemeParams,
    pub mobility: Mobility,
    pub horizon: f64,
    pub steps: StepMode,
    pub solver: KrylovConfig,
    pub forcing: Option<ManufacturedSolution>,
    pub monitors: MonitorPolicy,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub field: Field,
    pub records: Vec<StepRecord>,
    pub initial_energy: f64,
    /// Monitor violations that were logged rather than aborting.
    pub warnings: usize,
}

/// Runs the simulation; see [`run_simulation_with`].
pub fn run_simulation(sim: &Simulation, phi0: Field) -> Result<SimulationOutcome> {
    run_simulation_with(sim, phi0, |_, _| Ok(()))
}

/// Advances `phi0` to the horizon, calling `observe` after every step.
///
/// DsCN takes its first step with DsBE. Monitors are skipped for forced
/// runs, whose solutions need not respect the bound or the energy law.
pub fn run_simulation_with(
    sim: &Simulation,
    phi0: Field,
    mut observe: impl FnMut(&StepRecord, &Field) -> Result<()>,
) -> Result<SimulationOutcome> {
    phi0.ensure_finite()?;
    let mut controller = StepController::new(sim.steps, sim.horizon)?;
    let eps = sim.params.eps();
    let initial_energy = discrete_energy(&phi0, eps);
    let monitored = sim.forcing.is_none();
    if monitored && sim.monitors.mbp != MonitorMode::Off {
        let v = check_mbp(crate::grid::max_norm(&phi0), sim.monitors.mbp_slack);
        if !v.pass {
            return Err(Error::Parameter(format!(
                "initial field violates the unit bound by {:.3e}",
                v.violation
            )));
        }
    }

    let forcing = sim.forcing.as_ref().map(|f| f as &dyn Forcing);
    let mut phi_n = phi0;
    let mut phi_nm1: Option<Field> = None;
    let mut t = 0.0;
    let mut n = 0usize;
    let mut energy_n = initial_energy;
    let mut history: Option<(f64, f64, f64)> = None;
    let mut records = Vec::new();
    let mut warnings = 0usize;

    while let Some(tau) = controller.next_tau(n, t, history) {
        let mut input = StepInput::new(&phi_n, tau).at_time(t);
        if let Some(g) = forcing {
            input = input.with_forcing(g);
        }
        let (next, report) = match (sim.params.kind(), &phi_nm1, history) {
            (SchemeKind::DsBE, _, _) => dsbe_step(&sim.params, &sim.mobility, &input, &sim.solver)?,
            (SchemeKind::DsCN, None, _) | (SchemeKind::DsCN, _, None) => {
                first_step(&sim.params, &sim.mobility, &input, &sim.solver)?
            }
            (SchemeKind::DsCN, Some(prev), Some((_, _, tau_n))) => {
                let input = input.with_history(prev, tau_n);
                let (next, _, report) = dscn_step(&sim.params, &sim.mobility, &input, &sim.solver)?;
                (next, report)
            }
        };
        let mut t_next = t + tau;
        if (t_next - sim.horizon).abs() <= 1e-12 * sim.horizon.max(1.0) {
            t_next = sim.horizon;
        }
        let energy_next = discrete_energy(&next, eps);
        let record = StepRecord::new(n + 1, t_next, tau, &next, energy_next, energy_n, &report);

        if monitored {
            if sim.monitors.mbp != MonitorMode::Off {
                let v = check_mbp(record.max_norm, sim.monitors.mbp_slack);
                if !v.pass {
                    let msg = format!("max norm exceeds 1 by {:.3e}", v.violation);
                    if sim.monitors.mbp == MonitorMode::Abort {
                        return Err(Error::MonitorAbort { step: n + 1, message: msg });
                    }
                    warn!("step {}: {msg}", n + 1);
                    warnings += 1;
                }
            }
            if sim.monitors.energy != MonitorMode::Off {
                let v = match sim.params.kind() {
                    SchemeKind::DsBE => check_energy_dissipation(
                        energy_n,
                        energy_next,
                        sim.monitors.energy_slack * (1.0 + energy_n.abs()),
                    ),
                    SchemeKind::DsCN => check_energy_dissipation(
                        initial_energy,
                        energy_next,
                        sim.monitors.energy_bound_slack,
                    ),
                };
                if !v.pass {
                    let msg = format!("energy rises by {:.3e}", v.violation);
                    if sim.monitors.energy == MonitorMode::Abort {
                        return Err(Error::MonitorAbort { step: n + 1, message: msg });
                    }
                    warn!("step {}: {msg}", n + 1);
                    warnings += 1;
                }
            }
        }

        observe(&record, &next)?;
        records.push(record);
        history = Some((energy_n, energy_next, tau));
        phi_nm1 = Some(std::mem::replace(&mut phi_n, next));
        energy_n = energy_next;
        t = t_next;
        n += 1;
    }

    Ok(SimulationOutcome {
        field: phi_n,
        records,
        initial_energy,
        warnings,
    })
}
