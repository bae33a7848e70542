//! Double-well potential, mobility models and the discrete free energy.

use serde::{Deserialize, Serialize};

use crate::grid::{apply_laplacian, dot_raw, Field};

/// `max |f'|` over `[-1, 1]` for the double well.
pub const REACTION_LIPSCHITZ: f64 = 2.0;

/// Reaction term `f(s) = -F'(s) = s - s³`.
#[inline]
pub fn reaction(s: f64) -> f64 {
    s - s * s * s
}

/// Double-well potential `F(s) = (1 - s²)² / 4`.
#[inline]
pub fn potential(s: f64) -> f64 {
    let w = 1.0 - s * s;
    0.25 * w * w
}

/// Phase-dependent mobility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mobility {
    Constant { value: f64 },
    /// `(1 - s²)^m`, vanishing at both pure phases.
    TwoSided { exponent: f64 },
    /// `(1 + s) / 2`, vanishing only at `s = -1`.
    OneSided,
}

impl Mobility {
    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Mobility::Constant { value } => value,
            Mobility::TwoSided { exponent } => {
                let base = 1.0 - s * s;
                if exponent.fract() == 0.0 && exponent.abs() <= 64.0 {
                    base.powi(exponent as i32)
                } else {
                    base.max(0.0).powf(exponent)
                }
            }
            Mobility::OneSided => 0.5 * (1.0 + s),
        }
    }

    /// `K_M = max_{s ∈ [-1,1]} M(s)`.
    pub fn max_on_unit_interval(&self) -> f64 {
        match *self {
            Mobility::Constant { value } => value,
            Mobility::TwoSided { .. } => 1.0,
            Mobility::OneSided => 1.0,
        }
    }

    /// Pointwise mobility of a field.
    pub fn field(&self, phi: &Field) -> Field {
        let m = *self;
        phi.map(move |s| m.eval(s))
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Mobility::Constant { value } if !(value.is_finite() && value >= 0.0) => {
                Err(format!("constant mobility must be finite and >= 0, got {value}"))
            }
            Mobility::TwoSided { exponent } if !(exponent.is_finite() && exponent > 0.0) => {
                Err(format!("mobility exponent m must be > 0, got {exponent}"))
            }
            _ => Ok(()),
        }
    }
}

/// Discrete energy `-(ε²/2)⟨Δ_h u, u⟩ + ⟨F(u), 1⟩`.
pub fn discrete_energy(u: &Field, eps: f64) -> f64 {
    let lap = apply_laplacian(u);
    let vol = u.grid().cell_volume();
    let gradient = -0.5 * eps * eps * vol * dot_raw(lap.values(), u.values());
    let bulk = u.map(potential);
    let ones = vec![1.0; u.values().len()];
    gradient + vol * dot_raw(bulk.values(), &ones)
}
