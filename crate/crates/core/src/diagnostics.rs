//! Per-step monitors, error measurement and convergence-order estimation,
//! plus a few shape metrics used to judge long-time dynamics.

use crate::error::{Error, Result};
use crate::grid::{max_norm, max_value, min_value, Field};
use crate::linsolve::SolveReport;

/// One row of per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    /// Time after the step.
    pub t: f64,
    pub tau: f64,
    pub energy: f64,
    pub max_val: f64,
    pub min_val: f64,
    pub max_norm: f64,
    pub solver_iters: usize,
    pub solver_residual: f64,
    /// `max(0, ‖φ‖_∞ - 1)`.
    pub mbp_violation: f64,
    /// `max(0, Eⁿ - Eⁿ⁻¹)`.
    pub energy_increase: f64,
}

impl StepRecord {
    pub fn new(
        n: usize,
        t: f64,
        tau: f64,
        phi: &Field,
        energy: f64,
        prev_energy: f64,
        report: &SolveReport,
    ) -> Self {
        let max_norm = max_norm(phi);
        Self {
            n,
            t,
            tau,
            energy,
            max_val: max_value(phi),
            min_val: min_value(phi),
            max_norm,
            solver_iters: report.iterations,
            solver_residual: report.final_residual,
            mbp_violation: (max_norm - 1.0).max(0.0),
            energy_increase: (energy - prev_energy).max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    /// Amount by which the monitored quantity exceeds its bound (0 if none).
    pub violation: f64,
}

/// Maximum-bound check: `max(0, ‖φ‖_∞ - 1) ≤ slack`.
pub fn check_mbp(max_norm: f64, slack: f64) -> Verdict {
    let violation = (max_norm - 1.0).max(0.0);
    Verdict {
        pass: violation <= slack,
        violation,
    }
}

/// Energy check: `E_curr ≤ E_prev + slack`.
pub fn check_energy_dissipation(prev: f64, curr: f64, slack: f64) -> Verdict {
    let violation = (curr - prev).max(0.0);
    Verdict {
        pass: curr <= prev + slack,
        violation,
    }
}

/// Default mixed slack `1e-8 (1 + |E|)` for energy comparisons.
pub fn energy_slack(energy: f64) -> f64 {
    1e-8 * (1.0 + energy.abs())
}

/// `max_i |φ_i - exact(x_i, t)|`, nodes placed from `origin`.
pub fn error_vs_exact(phi: &Field, origin: f64, t: f64, exact: impl Fn([f64; 3], f64) -> f64 + Sync) -> f64 {
    let reference = Field::from_fn(*phi.grid(), origin, |x| exact(x, t));
    phi.values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub steps: usize,
    /// Mean step `T/N`.
    pub tau: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, steps: usize, horizon: f64, error: f64) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if steps <= last.steps {
                return Err(Error::Parameter(format!(
                    "step counts must increase ({} after {})",
                    steps, last.steps
                )));
            }
        }
        self.rows.push(ConvergenceRow {
            steps,
            tau: horizon / steps as f64,
            error,
        });
        Ok(())
    }

    pub fn orders(&self) -> Result<Vec<f64>> {
        estimate_order(self)
    }
}

/// Pairwise observed orders `log(eᵢ/eᵢ₊₁) / log(τᵢ/τᵢ₊₁)`.
pub fn estimate_order(table: &ConvergenceTable) -> Result<Vec<f64>> {
    if table.rows.len() < 2 {
        return Err(Error::UndefinedOrder("need at least two rows".into()));
    }
    if let Some(r) = table.rows.iter().find(|r| !(r.error > 0.0)) {
        return Err(Error::UndefinedOrder(format!(
            "error {} at N = {} is not positive",
            r.error, r.steps
        )));
    }
    Ok(table
        .rows
        .windows(2)
        .map(|w| (w[0].error / w[1].error).ln() / (w[0].tau / w[1].tau).ln())
        .collect())
}

/// Number of face-connected components of `{φ > level}` on the periodic grid.
pub fn count_components(phi: &Field, level: f64) -> usize {
    let grid = *phi.grid();
    let m = grid.cells_per_dim();
    let inside: Vec<bool> = phi.values().iter().map(|&v| v > level).collect();
    let mut seen = vec![false; inside.len()];
    let mut stack = Vec::new();
    let mut components = 0;
    for start in 0..inside.len() {
        if !inside[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let c = grid.index_to_coords(i);
            for axis in 0..grid.dim() {
                for step in [1, m - 1] {
                    let mut nb = c;
                    nb[axis] = (c[axis] + step) % m;
                    let j = grid.coords_to_index(nb);
                    if inside[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    components
}

/// Area of `{φ > level}` divided by the area of its convex hull (2-D only;
/// the set must not wrap across the periodic boundary). Returns 0 for an
/// empty set.
pub fn solidity_2d(phi: &Field, level: f64) -> Result<f64> {
    let grid = *phi.grid();
    if grid.dim() != 2 {
        return Err(Error::Parameter("solidity is defined for 2-D fields only".into()));
    }
    let mut corners = Vec::new();
    let mut cells = 0usize;
    for (i, &v) in phi.values().iter().enumerate() {
        if v > level {
            cells += 1;
            let c = grid.index_to_coords(i);
            let (x, y) = (c[0] as f64, c[1] as f64);
            for (dx, dy) in [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)] {
                corners.push((x + dx, y + dy));
            }
        }
    }
    if cells == 0 {
        return Ok(0.0);
    }
    let hull = convex_hull(corners);
    let hull_area = polygon_area(&hull);
    // Corners are in cell units, so the hull area is too.
    Ok(cells as f64 / hull_area)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Andrew's monotone chain; returns the hull counter-clockwise.
fn convex_hull(mut pts: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
        * 0.5
}
