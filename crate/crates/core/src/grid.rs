//! Periodic uniform Cartesian grids, grid functions and the five/seven-point
//! central-difference Laplacian.
//!
//! Grid functions are stored as one flat array in lexicographic order with
//! the x index running fastest. Periodic wraparound is resolved per line of
//! cells, so there are no ghost layers to refresh between sweeps.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Number of cells per partial sum in reductions. Fixing the partition keeps
/// the summation order independent of the thread count.
const REDUCE_CHUNK: usize = 4096;

/// Below this many cells the kernels run on the calling thread.
const PAR_THRESHOLD: usize = 1 << 14;

/// Periodic uniform grid on `[0, L)^dim` with `M` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    dim: usize,
    cells: usize,
    length: f64,
    spacing: f64,
    len: usize,
}

impl GridSpec {
    pub fn new(dim: usize, cells: usize, length: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::Grid(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        if cells == 0 {
            return Err(Error::Grid("cells per dimension must be positive".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Grid(format!("domain length must be positive, got {length}")));
        }
        let len = (0..dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(cells))
            .ok_or_else(|| Error::Grid(format!("{cells}^{dim} cells overflow the index type")))?;
        Ok(Self {
            dim,
            cells,
            length,
            spacing: length / cells as f64,
            len,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_dim(&self) -> usize {
        self.cells
    }

    pub fn domain_length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of cells, `M^dim`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Quadrature weight `h^dim` of one cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Multi-index of a flat index (unused axes are zero).
    pub fn index_to_coords(&self, idx: usize) -> [usize; 3] {
        let m = self.cells;
        let mut c = [0usize; 3];
        let mut rest = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = rest % m;
            rest /= m;
        }
        c
    }

    pub fn coords_to_index(&self, coords: [usize; 3]) -> usize {
        let m = self.cells;
        (0..self.dim).rev().fold(0, |acc, a| acc * m + coords[a] % m)
    }

    /// Node position with the grid's first node at `origin` on every axis.
    pub fn node_position(&self, idx: usize, origin: f64) -> [f64; 3] {
        let c = self.index_to_coords(idx);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = origin + c[a] as f64 * self.spacing;
        }
        x
    }
}

/// Real-valued periodic grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_vec(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid expects {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("value at index {i} is {}", values[i])));
        }
        Ok(Self { grid, values })
    }

    /// Samples `f` at every node, the first node sitting at `origin`.
    pub fn from_fn(grid: GridSpec, origin: f64, f: impl Fn([f64; 3]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| f(grid.node_position(i, origin)))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync + Send) -> Field {
        let values = if self.values.len() >= PAR_THRESHOLD {
            self.values.par_iter().map(|&v| f(v)).collect()
        } else {
            self.values.iter().map(|&v| f(v)).collect()
        };
        Field {
            grid: self.grid,
            values,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::NonFinite(format!(
                "value at index {i} is {}",
                self.values[i]
            ))),
        }
    }
}

/// Periodic central-difference Laplacian, written into `out`.
pub fn laplacian_into(grid: &GridSpec, u: &[f64], out: &mut [f64]) {
    debug_assert_eq!(u.len(), grid.len());
    debug_assert_eq!(out.len(), grid.len());
    let m = grid.cells;
    let dim = grid.dim;
    let inv_h2 = 1.0 / (grid.spacing * grid.spacing);

    let line_kernel = |line: usize, out_line: &mut [f64]| {
        let base = line * m;
        let row = &u[base..base + m];
        for i in 0..m {
            let left = row[if i == 0 { m - 1 } else { i - 1 }];
            let right = row[if i + 1 == m { 0 } else { i + 1 }];
            out_line[i] = left + right - 2.0 * row[i];
        }
        // Axes y and z: whole neighbouring lines shifted by the axis stride.
        let mut stride = m;
        let mut line_rest = line;
        for _ in 1..dim {
            let c = line_rest % m;
            line_rest /= m;
            let down = if c == 0 { base + (m - 1) * stride } else { base - stride };
            let up = if c + 1 == m { base - (m - 1) * stride } else { base + stride };
            let (dn, upr) = (&u[down..down + m], &u[up..up + m]);
            for i in 0..m {
                out_line[i] += dn[i] + upr[i] - 2.0 * row[i];
            }
            stride *= m;
        }
        for v in out_line.iter_mut() {
            *v *= inv_h2;
        }
    };

    if grid.len >= PAR_THRESHOLD && dim > 1 {
        out.par_chunks_mut(m)
            .enumerate()
            .with_min_len((PAR_THRESHOLD / m).max(1))
            .for_each(|(line, out_line)| line_kernel(line, out_line));
    } else {
        out.chunks_mut(m)
            .enumerate()
            .for_each(|(line, out_line)| line_kernel(line, out_line));
    }
}

pub fn apply_laplacian(u: &Field) -> Field {
    let mut out = Field::zeros(u.grid);
    laplacian_into(&u.grid, &u.values, &mut out.values);
    out
}

/// Plain `Σ a_i b_i` with a fixed summation tree.
pub fn dot_raw(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partial = |(x, y): (&[f64], &[f64])| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let partials: Vec<f64> = if a.len() >= PAR_THRESHOLD {
        a.par_chunks(REDUCE_CHUNK)
            .zip(b.par_chunks(REDUCE_CHUNK))
            .map(partial)
            .collect()
    } else {
        a.chunks(REDUCE_CHUNK)
            .zip(b.chunks(REDUCE_CHUNK))
            .map(partial)
            .collect()
    };
    partials.iter().sum()
}

/// Discrete inner product `h^d Σ u_i v_i`.
pub fn inner_product(u: &Field, v: &Field) -> Result<f64> {
    u.ensure_same_grid(v)?;
    Ok(u.grid.cell_volume() * dot_raw(&u.values, &v.values))
}

pub fn max_norm(u: &Field) -> f64 {
    u.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn min_value(u: &Field) -> f64 {
    u.values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_value(u: &Field) -> f64 {
    u.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn l2_norm(u: &Field) -> f64 {
    (u.grid.cell_volume() * dot_raw(&u.values, &u.values)).sqrt()
}

/// `Σ u_i` times the cell volume, i.e. `⟨u, 1⟩`.
pub fn integral(u: &Field) -> f64 {
    let ones = vec![1.0; u.values.len()];
    u.grid.cell_volume() * dot_raw(&u.values, &ones)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Dense stencil matrix, assembled entry by entry from the coordinate
    /// definition rather than the line-sweep kernel.
    fn dense_laplacian(grid: &GridSpec) -> Vec<Vec<f64>> {
        let n = grid.len();
        let m = grid.cells_per_dim();
        let h2 = grid.spacing() * grid.spacing();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            let c = grid.index_to_coords(i);
            for ax in 0..grid.dim() {
                let mut p = c;
                p[ax] = (c[ax] + 1) % m;
                row[grid.coords_to_index(p)] += 1.0 / h2;
                let mut q = c;
                q[ax] = (c[ax] + m - 1) % m;
                row[grid.coords_to_index(q)] += 1.0 / h2;
                row[i] -= 2.0 / h2;
            }
        }
        a
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(0, 4, 1.0).is_err());
        assert!(GridSpec::new(4, 4, 1.0).is_err());
        assert!(GridSpec::new(2, 0, 1.0).is_err());
        assert!(GridSpec::new(2, 4, -1.0).is_err());
        assert!(GridSpec::new(3, usize::MAX / 2, 1.0).is_err());
    }

    #[test]
    fn spacing_times_cells_is_length() {
        let g = GridSpec::new(2, 400, 2.0 * PI).unwrap();
        assert!((g.spacing() * 400.0 - 2.0 * PI).abs() < 1e-14);
        assert_eq!(g.len(), 160_000);
    }

    #[test]
    fn field_rejects_wrong_length_and_nan() {
        let g = GridSpec::new(1, 3, 1.0).unwrap();
        assert!(matches!(Field::from_vec(g, vec![0.0; 2]), Err(Error::Shape(_))));
        assert!(matches!(
            Field::from_vec(g, vec![0.0, f64::NAN, 1.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        for dim in 1..=3 {
            let g = GridSpec::new(dim, 6, 3.0).unwrap();
            let lap = apply_laplacian(&Field::constant(g, 0.7));
            assert!(lap.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn laplacian_1d_hand_stencil() {
        let g = GridSpec::new(1, 4, 4.0).unwrap();
        let u = Field::from_vec(g, vec![0.0, 1.0, 0.0, -1.0]).unwrap();
        assert_eq!(apply_laplacian(&u).values(), &[0.0, -2.0, 0.0, 2.0]);
    }

    #[test]
    fn laplacian_matches_dense_stencil_matrix() {
        for (dim, m) in [(1, 7), (2, 5), (3, 4), (2, 2), (3, 1)] {
            let g = GridSpec::new(dim, m, 1.3).unwrap();
            let u = Field::from_fn(g, 0.0, |x| (3.0 * x[0]).sin() + x[1] * x[1] - 0.5 * x[2]);
            let a = dense_laplacian(&g);
            let got = apply_laplacian(&u);
            for (i, row) in a.iter().enumerate() {
                let want: f64 = row.iter().zip(u.values()).map(|(p, q)| p * q).sum();
                assert!((got.values()[i] - want).abs() < 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn sin_sin_is_discrete_eigenfunction() {
        for m in [16, 64, 400] {
            let g = GridSpec::new(2, m, 2.0 * PI).unwrap();
            let h = g.spacing();
            let u = Field::from_fn(g, 0.0, |x| x[0].sin() * x[1].sin());
            let lambda = -2.0 * (4.0 / (h * h)) * (h / 2.0).sin().powi(2);
            let lap = apply_laplacian(&u);
            for (l, v) in lap.values().iter().zip(u.values()) {
                assert!((l - lambda * v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn large_grid_uses_parallel_path_consistently() {
        let g = GridSpec::new(3, 32, 1.0).unwrap();
        let u = Field::from_fn(g, 0.0, |x| (6.0 * x[0]).cos() * (2.0 * PI * x[2]).sin() + x[1]);
        let lap = apply_laplacian(&u);
        // Compare with the serial single-line evaluation at a few nodes.
        let m = 32;
        let h2 = g.spacing().powi(2);
        for idx in [0usize, 31, 32 * 31, 32 * 32 * 31 + 5, 12345] {
            let c = g.index_to_coords(idx);
            let mut want = 0.0;
            for ax in 0..3 {
                let mut p = c;
                p[ax] = (c[ax] + 1) % m;
                let mut q = c;
                q[ax] = (c[ax] + m - 1) % m;
                want += (u.values()[g.coords_to_index(p)] + u.values()[g.coords_to_index(q)]
                    - 2.0 * u.values()[idx])
                    / h2;
            }
            assert!((lap.values()[idx] - want).abs() < 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn inner_product_examples() {
        let g = GridSpec::new(2, 10, 1.0).unwrap();
        let one = Field::constant(g, 1.0);
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(inner_product(&one, &Field::zeros(g)).unwrap(), 0.0);

        let g1 = GridSpec::new(1, 64, 2.0 * PI).unwrap();
        let s = Field::from_fn(g1, 0.0, |x| x[0].sin());
        // Direct summation oracle.
        let h = g1.spacing();
        let oracle: f64 = (0..64).map(|i| (i as f64 * h).sin().powi(2) * h).sum();
        let got = inner_product(&s, &s).unwrap();
        assert!((got - oracle).abs() < 1e-13);
        assert!((got - PI).abs() < 1e-12);

        let other = GridSpec::new(1, 32, 2.0 * PI).unwrap();
        assert!(inner_product(&s, &Field::zeros(other)).is_err());
    }

    #[test]
    fn norm_examples() {
        let g = GridSpec::new(2, 4, 1.0).unwrap();
        assert!((max_norm(&Field::constant(g, -0.3)) - 0.3).abs() < 1e-15);
        let g3 = GridSpec::new(1, 3, 1.0).unwrap();
        let u = Field::from_vec(g3, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(max_norm(&u), 2.0);
        assert_eq!(min_value(&u), -2.0);
        assert_eq!(max_value(&u), 1.0);

        let g400 = GridSpec::new(2, 400, 2.0 * PI).unwrap();
        let s = Field::from_fn(g400, 0.0, |x| x[0].sin() * x[1].sin());
        assert!((l2_norm(&s) - PI).abs() < 1e-10);
    }

    fn random_field(grid: GridSpec) -> impl Strategy<Value = Field> {
        proptest::collection::vec(-1.0f64..1.0, grid.len())
            .prop_map(move |v| Field::from_vec(grid, v).unwrap())
    }

    fn small_grid() -> impl Strategy<Value = GridSpec> {
        (1usize..=3, 2usize..=7, 0.5f64..3.0).prop_map(|(d, m, l)| GridSpec::new(d, m, l).unwrap())
    }

    proptest! {
        #[test]
        fn laplacian_is_self_adjoint((u, v) in small_grid().prop_flat_map(|g| (random_field(g), random_field(g)))) {
            let lu = apply_laplacian(&u);
            let lv = apply_laplacian(&v);
            let lhs = inner_product(&lu, &v).unwrap();
            let rhs = inner_product(&u, &lv).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * l2_norm(&u) * l2_norm(&v));
        }

        #[test]
        fn laplacian_is_negative_semidefinite(u in small_grid().prop_flat_map(random_field)) {
            let q = inner_product(&apply_laplacian(&u), &u).unwrap();
            prop_assert!(q <= 1e-12 * l2_norm(&u).powi(2));
        }

        #[test]
        fn laplacian_sign_at_extrema(u in small_grid().prop_flat_map(random_field)) {
            let lap = apply_laplacian(&u);
            let hi = max_value(&u);
            let lo = min_value(&u);
            for (i, &v) in u.values().iter().enumerate() {
                if v == hi { prop_assert!(lap.values()[i] <= 0.0); }
                if v == lo { prop_assert!(lap.values()[i] >= 0.0); }
            }
        }

        #[test]
        fn laplacian_stencil_bound(u in small_grid().prop_flat_map(random_field)) {
            let g = *u.grid();
            let bound = 4.0 * g.dim() as f64 / g.spacing().powi(2) * max_norm(&u);
            prop_assert!(max_norm(&apply_laplacian(&u)) <= bound * (1.0 + 1e-14));
        }
    }
}
