//! Structure-preserving finite-difference solver for the Allen–Cahn
//! equation with phase-dependent (possibly degenerate) mobility
//!
//! ```text
//! φ_t = M(φ) (ε² Δφ + φ - φ³)
//! ```
//!
//! on a periodic box. Two linearly implicit schemes are provided: a
//! stabilized backward Euler step (DsBE, first order) and a stabilized
//! Crank–Nicolson step (DsCN, second order). Both keep `‖φ‖_∞ ≤ 1`
//! unconditionally for admissible stabilization constants.
//!
//! ```
//! use acmob::config::preset_experiment;
//! use acmob::timestepping::run_simulation;
//!
//! let mut cfg = preset_experiment("coarsening_2d").unwrap();
//! cfg.grid.cells = 16;
//! cfg.time.horizon = 0.5;
//! let sim = cfg.simulation().unwrap();
//! let out = run_simulation(&sim, cfg.initial_field().unwrap()).unwrap();
//! assert!(out.records.iter().all(|r| r.max_norm <= 1.0));
//! ```

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod initial;
pub mod linsolve;
pub mod output;
pub mod physics;
pub mod schemes;
pub mod study;
pub mod timestepping;

pub use error::{Error, Result};
