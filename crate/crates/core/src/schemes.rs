//! One time step of the dynamically stabilized backward Euler (DsBE) and
//! Crank–Nicolson (DsCN) schemes, plus the step-size and stabilization bounds
//! that make them bound-preserving and energy-stable.
//!
//! Both schemes reduce to a single linear system per step,
//!
//! ```text
//! [ c I + diag(M̃) (a I - b Δ_h) ] φⁿ⁺¹ = rhs
//! ```
//!
//! where `M̃` is the mobility frozen at `φⁿ` (DsBE) or at the cut-off
//! extrapolation `φ̂` (DsCN), and
//!
//! | scheme | c          | a      | b      |
//! |--------|------------|--------|--------|
//! | DsBE   | 1/τ        | S₁     | ε²     |
//! | DsCN   | 1/τ + S₂τ  | S₁/2   | ε²/2   |
//!
//! Rows where the mobility vanishes reduce to `c x = rhs`; no cell is ever
//! divided by its mobility.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, Field, GridSpec};
use crate::linsolve::{krylov_solve, KrylovConfig, LinearOperator, SolveReport};
use crate::physics::{reaction, Mobility, REACTION_LIPSCHITZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeKind {
    #[serde(rename = "dsbe")]
    DsBE,
    #[serde(rename = "dscn")]
    DsCN,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeParams {
    eps: f64,
    s1: f64,
    s2: f64,
    kind: SchemeKind,
}

impl SchemeParams {
    pub fn new(kind: SchemeKind, eps: f64, s1: f64, s2: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::Parameter(format!("interface width ε must be > 0, got {eps}")));
        }
        if !(s1 >= REACTION_LIPSCHITZ) || !s1.is_finite() {
            return Err(Error::Parameter(format!("stabilization requires S₁ ≥ 2, got {s1}")));
        }
        if !(s2.is_finite() && s2 >= 0.0) {
            return Err(Error::Parameter(format!("stabilization requires S₂ ≥ 0, got {s2}")));
        }
        Ok(Self { eps, s1, s2, kind })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn s1(&self) -> f64 {
        self.s1
    }
    pub fn s2(&self) -> f64 {
        self.s2
    }
    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn with_s2(self, s2: f64) -> Result<Self> {
        Self::new(self.kind, self.eps, self.s1, s2)
    }
}

/// Source term `g(x, t)` of a forced equation, sampled on a grid.
pub trait Forcing: Sync {
    fn sample(&self, grid: &GridSpec, t: f64) -> Field;
}

/// Everything one step needs besides the parameters.
#[derive(Clone, Copy)]
pub struct StepInput<'a> {
    pub phi_n: &'a Field,
    pub phi_nm1: Option<&'a Field>,
    /// `τ_{n+1}`.
    pub tau: f64,
    /// `τ_n`, needed for the ratio `r = τ_{n+1}/τ_n` in DsCN.
    pub tau_prev: Option<f64>,
    /// Time `t_n` at the start of the step (only used for forcing).
    pub t_n: f64,
    pub forcing: Option<&'a dyn Forcing>,
}

impl<'a> StepInput<'a> {
    pub fn new(phi_n: &'a Field, tau: f64) -> Self {
        Self {
            phi_n,
            phi_nm1: None,
            tau,
            tau_prev: None,
            t_n: 0.0,
            forcing: None,
        }
    }

    pub fn with_history(mut self, phi_nm1: &'a Field, tau_prev: f64) -> Self {
        self.phi_nm1 = Some(phi_nm1);
        self.tau_prev = Some(tau_prev);
        self
    }

    pub fn at_time(mut self, t_n: f64) -> Self {
        self.t_n = t_n;
        self
    }

    pub fn with_forcing(mut self, forcing: &'a dyn Forcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Parameter(format!("time step must be > 0, got {}", self.tau)));
        }
        self.phi_n.ensure_finite()?;
        if let Some(prev) = self.phi_nm1 {
            prev.ensure_same_grid(self.phi_n)?;
            prev.ensure_finite()?;
            match self.tau_prev {
                Some(tp) if tp.is_finite() && tp > 0.0 => {}
                other => {
                    return Err(Error::Usage(format!(
                        "previous level given without a positive previous step ({other:?})"
                    )))
                }
            }
        }
        Ok(())
    }
}

/// `c I + diag(mob) (a I - b Δ_h)`.
pub struct StepOperator {
    grid: GridSpec,
    shift: f64,
    mobility: Vec<f64>,
    reaction_coef: f64,
    diffusion_coef: f64,
}

impl StepOperator {
    pub fn new(
        mobility: &Field,
        shift: f64,
        reaction_coef: f64,
        diffusion_coef: f64,
    ) -> Self {
        Self {
            grid: *mobility.grid(),
            shift,
            mobility: mobility.values().to_vec(),
            reaction_coef,
            diffusion_coef,
        }
    }

    /// The DsBE operator `(1/τ) I + S₁ M(φⁿ) - ε² M(φⁿ) Δ_h`.
    pub fn dsbe(params: &SchemeParams, mobility: &Mobility, phi_n: &Field, tau: f64) -> Self {
        Self::new(&mobility.field(phi_n), 1.0 / tau, params.s1, params.eps * params.eps)
    }

    /// The DsCN operator `(1/τ + S₂τ) I + (S₁/2) M(φ̂) - (ε²/2) M(φ̂) Δ_h`.
    pub fn dscn(params: &SchemeParams, mobility: &Mobility, phi_hat: &Field, tau: f64) -> Self {
        Self::new(
            &mobility.field(phi_hat),
            1.0 / tau + params.s2 * tau,
            0.5 * params.s1,
            0.5 * params.eps * params.eps,
        )
    }

    pub fn mobility(&self) -> &[f64] {
        &self.mobility
    }
}

impl LinearOperator for StepOperator {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        laplacian_into(&self.grid, x, out);
        let (c, a, b) = (self.shift, self.reaction_coef, self.diffusion_coef);
        for ((o, &xi), &m) in out.iter_mut().zip(x).zip(&self.mobility) {
            *o = c * xi + m * (a * xi - b * *o);
        }
    }

    fn diagonal(&self) -> Field {
        let lap_diag = 2.0 * self.grid.dim() as f64 / self.grid.spacing().powi(2);
        let (c, a, b) = (self.shift, self.reaction_coef, self.diffusion_coef);
        let values = self.mobility.iter().map(|m| c + m * (a + b * lap_diag)).collect();
        Field::from_vec(self.grid, values).expect("diagonal of a finite operator is finite")
    }
}

fn add_forcing(rhs: &mut Field, forcing: Option<&dyn Forcing>, t: f64) -> Result<()> {
    if let Some(g) = forcing {
        let src = g.sample(rhs.grid(), t);
        src.ensure_same_grid(rhs)?;
        for (r, s) in rhs.values_mut().iter_mut().zip(src.values()) {
            *r += s;
        }
    }
    Ok(())
}

/// Right-hand side of the DsBE system,
/// `(1/τ)φⁿ + M(φⁿ)(f(φⁿ) + S₁φⁿ)` plus `g(t_{n+1})` when forced.
pub fn dsbe_rhs(params: &SchemeParams, mobility: &Mobility, input: &StepInput) -> Result<Field> {
    let inv_tau = 1.0 / input.tau;
    let s1 = params.s1;
    let m = *mobility;
    let mut rhs = input.phi_n.map(move |p| inv_tau * p + m.eval(p) * (reaction(p) + s1 * p));
    add_forcing(&mut rhs, input.forcing, input.t_n + input.tau)?;
    Ok(rhs)
}

/// Advances one DsBE step. Returns `φⁿ⁺¹` and the linear-solve report.
pub fn dsbe_step(
    params: &SchemeParams,
    mobility: &Mobility,
    input: &StepInput,
    solver: &KrylovConfig,
) -> Result<(Field, SolveReport)> {
    input.validate()?;
    let op = StepOperator::dsbe(params, mobility, input.phi_n, input.tau);
    let rhs = dsbe_rhs(params, mobility, input)?;
    let (next, report) = krylov_solve(&op, &rhs, input.phi_n, solver)?;
    next.ensure_finite()?;
    Ok((next, report))
}

/// First step of DsCN: one DsBE step with the same `S₁`.
pub fn first_step(
    params: &SchemeParams,
    mobility: &Mobility,
    input: &StepInput,
    solver: &KrylovConfig,
) -> Result<(Field, SolveReport)> {
    dsbe_step(params, mobility, input, solver)
}

/// Cut-off extrapolation `clamp((1 + r/2)φⁿ - (r/2)φⁿ⁻¹, -1, 1)`.
pub fn dscn_predict(phi_n: &Field, phi_nm1: &Field, ratio: f64) -> Result<Field> {
    phi_n.ensure_same_grid(phi_nm1)?;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Parameter(format!("step ratio must be > 0, got {ratio}")));
    }
    let half = 0.5 * ratio;
    let values = phi_n
        .values()
        .iter()
        .zip(phi_nm1.values())
        .map(|(&a, &b)| ((1.0 + half) * a - half * b).clamp(-1.0, 1.0))
        .collect();
    Field::from_vec(*phi_n.grid(), values)
}

/// Right-hand side of the DsCN system, `Qⁿφⁿ + M(φ̂)(f(φ̂) + S₁φ̂)` plus
/// `g(t_{n+1/2})` when forced, with
/// `Qⁿ = (1/τ + S₂τ) I - (S₁/2) M(φ̂) + (ε²/2) M(φ̂) Δ_h`.
pub fn dscn_rhs(
    params: &SchemeParams,
    mobility: &Mobility,
    phi_hat: &Field,
    input: &StepInput,
) -> Result<Field> {
    let phi_n = input.phi_n;
    let grid = *phi_n.grid();
    let tau = input.tau;
    let shift = 1.0 / tau + params.s2 * tau;
    let half_s1 = 0.5 * params.s1;
    let half_eps2 = 0.5 * params.eps * params.eps;
    let mut rhs = Field::zeros(grid);
    laplacian_into(&grid, phi_n.values(), rhs.values_mut());
    for ((r, &p), &q) in rhs.values_mut().iter_mut().zip(phi_n.values()).zip(phi_hat.values()) {
        let m = mobility.eval(q);
        let explicit = shift * p - half_s1 * m * p + half_eps2 * m * *r;
        *r = explicit + m * (reaction(q) + params.s1 * q);
    }
    add_forcing(&mut rhs, input.forcing, input.t_n + 0.5 * tau)?;
    Ok(rhs)
}

/// Advances one DsCN step (n ≥ 1). Returns `φⁿ⁺¹`, the predictor `φ̂` and
/// the solve report.
pub fn dscn_step(
    params: &SchemeParams,
    mobility: &Mobility,
    input: &StepInput,
    solver: &KrylovConfig,
) -> Result<(Field, Field, SolveReport)> {
    input.validate()?;
    let (phi_nm1, tau_prev) = match (input.phi_nm1, input.tau_prev) {
        (Some(p), Some(t)) => (p, t),
        _ => {
            return Err(Error::Usage(
                "DsCN needs the previous level and step; use first_step for n = 0".into(),
            ))
        }
    };
    let phi_hat = dscn_predict(input.phi_n, phi_nm1, input.tau / tau_prev)?;
    let op = StepOperator::dscn(params, mobility, &phi_hat, input.tau);
    let rhs = dscn_rhs(params, mobility, &phi_hat, input)?;
    let (next, report) = krylov_solve(&op, &rhs, input.phi_n, solver)?;
    next.ensure_finite()?;
    Ok((next, phi_hat, report))
}

/// Smallest `S₂` making DsCN bound-preserving for every step size:
/// `(S₁K/4 + dε²K/(2h²))²`.
pub fn compute_s2_min(params: &SchemeParams, mobility: &Mobility, grid: &GridSpec) -> f64 {
    s2_lower_bound(params.s1, params.eps, mobility, grid)
}

pub fn s2_lower_bound(s1: f64, eps: f64, mobility: &Mobility, grid: &GridSpec) -> f64 {
    let k = mobility.max_on_unit_interval();
    let h2 = grid.spacing() * grid.spacing();
    let root = s1 * k / 4.0 + grid.dim() as f64 * eps * eps * k / (2.0 * h2);
    root * root
}

/// Largest step for which DsCN with `S₂ = 0` is bound-preserving,
/// `2 / (S₁K + 2dKε²/h²)`; infinite when the mobility bound is zero.
pub fn mbp_tau_bound(params: &SchemeParams, mobility: &Mobility, grid: &GridSpec) -> f64 {
    let k = mobility.max_on_unit_interval();
    if k == 0.0 {
        return f64::INFINITY;
    }
    let h2 = grid.spacing() * grid.spacing();
    2.0 / (params.s1 * k + 2.0 * grid.dim() as f64 * k * params.eps * params.eps / h2)
}

/// Step bound `min{1, 1/(4K(1 + S₂))}` under which DsCN keeps the energy
/// below its initial value; infinite when the mobility bound is zero.
pub fn energy_stable_tau_bound(params: &SchemeParams, mobility: &Mobility) -> f64 {
    let k = mobility.max_on_unit_interval();
    if k == 0.0 {
        return f64::INFINITY;
    }
    f64::min(1.0, 1.0 / (4.0 * k * (1.0 + params.s2)))
}
