//! Uniform node-centred grid on the square `[0, L]²`, scalar and vector
//! fields on it, and the finite-difference operators shared by every solver.
//!
//! Nodes include the boundary: node `(i, j)` sits at `(i·dx, j·dy)` for
//! `0 ≤ i < nx`, `0 ≤ j < ny`. Values are stored row-major with `j` as the
//! row index, so `idx(i, j) = j·nx + i`.
//!
//! Boundary closures use mirrored ghost nodes (`f[-1] = f[1]`), which is the
//! discrete form of a homogeneous Neumann condition. The quadrature used for
//! masses is the rectangle rule with half weights on boundary nodes (quarter
//! weights at corners); with these weights the Neumann Laplacian sums to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Density floor used when recovering a velocity from momentum.
pub const RHO_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid2D {
    pub length: f64,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

/// Serialized form of a grid; spacings are derived.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GridSpec {
    length: f64,
    nx: usize,
    ny: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        let g = Grid2D::default();
        Self { length: g.length, nx: g.nx, ny: g.ny }
    }
}

impl TryFrom<GridSpec> for Grid2D {
    type Error = Error;

    fn try_from(s: GridSpec) -> Result<Self> {
        Grid2D::new(s.length, s.nx, s.ny)
    }
}

impl From<Grid2D> for GridSpec {
    fn from(g: Grid2D) -> Self {
        Self { length: g.length, nx: g.nx, ny: g.ny }
    }
}

impl Grid2D {
    pub fn new(length: f64, nx: usize, ny: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("side length must be positive, got {length}")));
        }
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 nodes per axis, got {nx}x{ny}")));
        }
        Ok(Self { length, nx, ny, dx: length / (nx - 1) as f64, dy: length / (ny - 1) as f64 })
    }

    /// Square grid with the requested node spacing. The spacing must divide
    /// the side length into an integer number of cells.
    pub fn with_spacing(length: f64, spacing: f64) -> Result<Self> {
        let cells = length / spacing;
        let rounded = cells.round();
        if !(spacing > 0.0) || (cells - rounded).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} does not divide side length {length}")));
        }
        let n = rounded as usize + 1;
        Self::new(length, n, n)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    /// Quadrature weight of node `(i, j)` including the cell area.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy * self.dx * self.dy
    }

    pub fn node_positions(&self) -> impl Iterator<Item = (usize, usize, f64, f64)> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| (i, j, self.x(i), self.y(j))))
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.length).contains(&x) && (0.0..=self.length).contains(&y)
    }

    pub fn require_stencil(&self) -> Result<()> {
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::GridTooSmall { nx: self.nx, ny: self.ny });
        }
        Ok(())
    }
}

impl Default for Grid2D {
    /// Unit square with `dx = dy = 0.02`.
    fn default() -> Self {
        Self::new(1.0, 51, 51).expect("default grid is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid2D,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid2D, value: f64) -> Self {
        Self { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.node_positions().map(|(_, _, x, y)| f(x, y)).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    /// Discrete Euclidean norm over nodes (no area weighting).
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Bilinear interpolation; points outside the domain are clamped to it.
    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fx = (x / g.dx).clamp(0.0, (g.nx - 1) as f64);
        let fy = (y / g.dy).clamp(0.0, (g.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(g.nx - 2);
        let j0 = (fy.floor() as usize).min(g.ny - 2);
        let tx = fx - i0 as f64;
        let ty = fy - j0 as f64;
        let v00 = self.at(i0, j0);
        let v10 = self.at(i0 + 1, j0);
        let v01 = self.at(i0, j0 + 1);
        let v11 = self.at(i0 + 1, j0 + 1);
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self { x: ScalarField::zeros(grid), y: ScalarField::zeros(grid) }
    }

    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        if x.grid() != y.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { x, y })
    }

    pub fn grid(&self) -> &Grid2D {
        self.x.grid()
    }

    pub fn interpolate(&self, px: f64, py: f64) -> [f64; 2] {
        [self.x.interpolate(px, py), self.y.interpolate(px, py)]
    }

    /// Componentwise `self += other`.
    pub fn add_assign(&mut self, other: &VectorField) {
        for (a, b) in self.x.values_mut().iter_mut().zip(other.x.values()) {
            *a += b;
        }
        for (a, b) in self.y.values_mut().iter_mut().zip(other.y.values()) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.x.values().iter().chain(self.y.values()).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Macroscopic unknowns `(ρ, ρu₁, ρu₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConservedState {
    pub rho: ScalarField,
    pub m1: ScalarField,
    pub m2: ScalarField,
}

impl ConservedState {
    /// Density at rest.
    pub fn at_rest(rho: ScalarField) -> Self {
        let grid = *rho.grid();
        Self { rho, m1: ScalarField::zeros(grid), m2: ScalarField::zeros(grid) }
    }

    pub fn grid(&self) -> &Grid2D {
        self.rho.grid()
    }

    #[inline]
    pub fn node(&self, k: usize) -> [f64; 3] {
        [self.rho.values()[k], self.m1.values()[k], self.m2.values()[k]]
    }

    /// `u = m / max(ρ, ρ_floor)`.
    pub fn velocity(&self) -> VectorField {
        let grid = *self.grid();
        let mut u = VectorField::zeros(grid);
        for k in 0..grid.len() {
            let [rho, m1, m2] = self.node(k);
            let r = rho.max(RHO_FLOOR);
            u.x.values_mut()[k] = m1 / r;
            u.y.values_mut()[k] = m2 / r;
        }
        u
    }

    pub fn momentum(&self) -> VectorField {
        VectorField { x: self.m1.clone(), y: self.m2.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.is_finite() && self.m1.is_finite() && self.m2.is_finite()
    }
}

/// `Σ f·w` with the half-weighted rectangle rule.
pub fn total_mass(f: &ScalarField) -> f64 {
    let g = f.grid();
    let mut sum = 0.0;
    for j in 0..g.ny {
        let wy = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
        let row = &f.values()[j * g.nx..(j + 1) * g.nx];
        let interior: f64 = row[1..g.nx - 1].iter().sum();
        sum += wy * (interior + 0.5 * (row[0] + row[g.nx - 1]));
    }
    sum * g.dx * g.dy
}

/// Index of the mirrored neighbour: `-1 → 1`, `n → n-2`.
#[inline]
pub(crate) fn mirror(k: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if k < 0 {
        -k
    } else if k >= n {
        2 * (n - 1) - k
    } else {
        k
    };
    r as usize
}

/// Centred three-point gradient with mirrored ghosts, so the normal
/// derivative vanishes on the boundary.
pub fn gradient_neumann(f: &ScalarField) -> Result<VectorField> {
    let g = *f.grid();
    g.require_stencil()?;
    let mut grad = VectorField::zeros(g);
    let (inv2dx, inv2dy) = (0.5 / g.dx, 0.5 / g.dy);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let ip = mirror(i as isize + 1, g.nx);
            let im = mirror(i as isize - 1, g.nx);
            let jp = mirror(j as isize + 1, g.ny);
            let jm = mirror(j as isize - 1, g.ny);
            grad.x.values_mut()[k] = (f.at(ip, j) - f.at(im, j)) * inv2dx;
            grad.y.values_mut()[k] = (f.at(i, jp) - f.at(i, jm)) * inv2dy;
        }
    }
    Ok(grad)
}

/// Five-point Laplacian with mirrored ghosts.
pub fn laplacian_5pt(f: &ScalarField) -> Result<ScalarField> {
    let g = *f.grid();
    g.require_stencil()?;
    let mut out = ScalarField::zeros(g);
    let (idx2, idy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let v = f.values();
    for j in 0..g.ny {
        let jp = mirror(j as isize + 1, g.ny);
        let jm = mirror(j as isize - 1, g.ny);
        for i in 0..g.nx {
            let ip = mirror(i as isize + 1, g.nx);
            let im = mirror(i as isize - 1, g.nx);
            let c = v[g.idx(i, j)];
            out.values[g.idx(i, j)] = (v[g.idx(ip, j)] - 2.0 * c + v[g.idx(im, j)]) * idx2
                + (v[g.idx(i, jp)] - 2.0 * c + v[g.idx(i, jm)]) * idy2;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid_matches_reference_resolution() {
        let g = Grid2D::default();
        assert_eq!((g.nx, g.ny), (51, 51));
        assert!((g.dx - 0.02).abs() < 1e-15 && (g.dy - 0.02).abs() < 1e-15);
        assert_eq!(Grid2D::with_spacing(1.0, 0.02).unwrap(), g);
        assert!(Grid2D::with_spacing(1.0, 0.03).is_err());
    }

    #[test]
    fn mass_of_constant_and_zero() {
        for n in [3, 11, 51] {
            let g = Grid2D::new(1.0, n, n).unwrap();
            assert!((total_mass(&ScalarField::constant(g, 1.0)) - 1.0).abs() < 1e-14);
            assert_eq!(total_mass(&ScalarField::zeros(g)), 0.0);
        }
    }

    #[test]
    fn gradient_is_exact_on_linear_and_quadratic() {
        let g = Grid2D::default();
        let zero = gradient_neumann(&ScalarField::constant(g, 3.5)).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let lin = gradient_neumann(&ScalarField::from_fn(g, |x, _| x)).unwrap();
        for j in 0..g.ny {
            for i in 1..g.nx - 1 {
                assert!((lin.x.at(i, j) - 1.0).abs() < 1e-12);
                assert_eq!(lin.y.at(i, j), 0.0);
            }
            // mirrored ghost: zero normal derivative on the wall
            assert_eq!(lin.x.at(0, j), 0.0);
        }

        let quad = gradient_neumann(&ScalarField::from_fn(g, |x, y| x * x + y * y)).unwrap();
        assert!((quad.x.at(25, 25) - 1.0).abs() < 1e-12);
        assert!((quad.y.at(25, 25) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = Grid2D::default();
        let l = laplacian_5pt(&ScalarField::from_fn(g, |x, y| x * x + y * y)).unwrap();
        for j in 1..g.ny - 1 {
            for i in 1..g.nx - 1 {
                assert!((l.at(i, j) - 4.0).abs() < 1e-9, "{}", l.at(i, j));
            }
        }
        let c = laplacian_5pt(&ScalarField::constant(g, -2.0)).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stencils_reject_tiny_grids() {
        let g = Grid2D::new(1.0, 2, 5).unwrap();
        let f = ScalarField::zeros(g);
        assert!(matches!(gradient_neumann(&f), Err(Error::GridTooSmall { .. })));
        assert!(matches!(laplacian_5pt(&f), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn bilinear_interpolation_reproduces_bilinear_functions() {
        let g = Grid2D::new(1.0, 11, 11).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + 2.0 * x - y + 3.0 * x * y);
        for &(x, y) in &[(0.0, 0.0), (0.33, 0.71), (0.999, 0.5), (1.0, 1.0)] {
            let exact = 1.0 + 2.0 * x - y + 3.0 * x * y;
            assert!((f.interpolate(x, y) - exact).abs() < 1e-12);
        }
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0..10.0f64, n * n)
    }

    proptest! {
        #[test]
        fn neumann_laplacian_integrates_to_zero(vals in field_strategy(13)) {
            let g = Grid2D::new(1.0, 13, 13).unwrap();
            let f = ScalarField::from_values(g, vals).unwrap();
            let s = total_mass(&laplacian_5pt(&f).unwrap());
            prop_assert!(s.abs() < 1e-10, "sum = {s}");
        }

        #[test]
        fn total_mass_is_linear(a in -5.0..5.0f64, b in -5.0..5.0f64,
                                f in field_strategy(9), h in field_strategy(9)) {
            let g = Grid2D::new(1.0, 9, 9).unwrap();
            let ff = ScalarField::from_values(g, f).unwrap();
            let hh = ScalarField::from_values(g, h).unwrap();
            let combo = ScalarField::from_values(
                g,
                ff.values().iter().zip(hh.values()).map(|(x, y)| a * x + b * y).collect(),
            ).unwrap();
            let lhs = total_mass(&combo);
            let rhs = a * total_mass(&ff) + b * total_mass(&hh);
            prop_assert!((lhs - rhs).abs() < 1e-11);
        }
    }
}
