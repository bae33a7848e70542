//! Initial phase fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    /// Independent `U[lo, hi]` draws per cell, in lexicographic order.
    RandomUniform { lo: f64, hi: f64, seed: u64 },
    /// Six-petal shape `0.9 tanh((1.5 + 1.2 cos 6θ - 2πr) / sqrt(2λ))`
    /// around the centre of the unit square. `λ = ε²` is the usual choice.
    Flower { lambda: f64 },
    /// Union of two balls of radius 0.2 centred at `x = ±0.14`,
    /// `max_i 0.9 tanh((0.2 - |x - c_i|) / ε)`.
    Bubbles3d,
    /// `sin x sin y` (product of sines over all axes).
    Manufactured,
    Constant { value: f64 },
}

impl InitialCondition {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            InitialCondition::RandomUniform { lo, hi, .. } if !(lo <= hi && lo.is_finite() && hi.is_finite()) => {
                Err(format!("need lo <= hi, got {lo} and {hi}"))
            }
            InitialCondition::Flower { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                Err(format!("flower width lambda must be > 0, got {lambda}"))
            }
            InitialCondition::Constant { value } if !value.is_finite() => {
                Err("constant initial value must be finite".into())
            }
            _ => Ok(()),
        }
    }

    /// Samples the initial field; `origin` is the position of the first node
    /// and `eps` the interface width (used by the bubble profile).
    pub fn build(&self, grid: GridSpec, origin: f64, eps: f64) -> Field {
        match *self {
            InitialCondition::RandomUniform { lo, hi, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..grid.len())
                    .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                    .collect();
                Field::from_vec(grid, values).expect("finite draws")
            }
            InitialCondition::Flower { lambda } => {
                let width = (2.0 * lambda).sqrt();
                Field::from_fn(grid, origin, |x| {
                    let (dx, dy) = (x[0] - 0.5, x[1] - 0.5);
                    // cos 6θ has period π/3, so atan2 agrees with arctan(dy/dx).
                    let theta = dy.atan2(dx);
                    let r = (dx * dx + dy * dy).sqrt();
                    0.9 * ((1.5 + 1.2 * (6.0 * theta).cos() - 2.0 * PI * r) / width).tanh()
                })
            }
            InitialCondition::Bubbles3d => Field::from_fn(grid, origin, |x| {
                let bubble = |cx: f64| {
                    let r = ((x[0] - cx).powi(2) + x[1] * x[1] + x[2] * x[2]).sqrt();
                    0.9 * ((0.2 - r) / eps).tanh()
                };
                bubble(-0.14).max(bubble(0.14))
            }),
            InitialCondition::Manufactured => {
                let dim = grid.dim();
                Field::from_fn(grid, origin, |x| x.iter().take(dim).map(|v| v.sin()).product())
            }
            InitialCondition::Constant { value } => Field::constant(grid, value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{max_norm, max_value, min_value};

    #[test]
    fn random_uniform_is_seeded_and_in_range() {
        let g = GridSpec::new(2, 32, 1.0).unwrap();
        let ic = InitialCondition::RandomUniform { lo: -0.8, hi: 0.8, seed: 5 };
        let a = ic.build(g, 0.0, 0.01);
        assert_eq!(a, ic.build(g, 0.0, 0.01));
        assert!(min_value(&a) >= -0.8 && max_value(&a) <= 0.8);
        assert!(max_value(&a) > 0.7 && min_value(&a) < -0.7);
    }

    #[test]
    fn flower_profile() {
        let g = GridSpec::new(2, 128, 1.0).unwrap();
        let phi = InitialCondition::Flower { lambda: 1e-4 }.build(g, 0.0, 0.01);
        assert!(max_norm(&phi) <= 0.9);
        // Centre inside, corner outside.
        assert!(phi.values()[g.coords_to_index([64, 64, 0])] > 0.89);
        assert!(phi.values()[0] < -0.89);
    }

    #[test]
    fn bubbles_profile() {
        let g = GridSpec::new(3, 32, 1.0).unwrap();
        let phi = InitialCondition::Bubbles3d.build(g, -0.5, 0.03);
        assert!(max_norm(&phi) <= 0.9);
        // Node (16, 16, 16) sits at the origin, 0.14 from both centres.
        let centre = phi.values()[g.coords_to_index([16, 16, 16])];
        assert!((centre - 0.9 * (0.06f64 / 0.03).tanh()).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        assert!(InitialCondition::Flower { lambda: 0.0 }.validate().is_err());
        assert!(InitialCondition::RandomUniform { lo: 1.0, hi: 0.0, seed: 0 }.validate().is_err());
        assert!(InitialCondition::Manufactured.validate().is_ok());
    }
}
