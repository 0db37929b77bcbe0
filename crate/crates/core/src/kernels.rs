//! Pairwise interaction laws and the nonlocal integral operators built
//! from them.
//!
//! Three kernels act on immune cells:
//!
//! * a Cucker–Smale communication rate `γ_D(r) = β / (1 + r²)^ς` weighting
//!   velocity differences (alignment),
//! * a piecewise attraction–repulsion force `γ₂` with `1/r` repulsion up to
//!   `R_rep` and linear-elastic adhesion up to `R_adh`,
//! * a radial repulsion `γ₃` from fixed tumour cells up to `R_rep_tum`.
//!
//! On the grid the integrals `∫ γ(x − y) ρ(y) dy` become discrete
//! convolutions with weight `dx·dy` per node and zero density outside the
//! domain. Compactly supported kernels use a precomputed stencil, the
//! long-range alignment kernel uses a zero-padded FFT. The singular node
//! `y = x` contributes nothing (`γ₂(0) = γ₃(0) = 0`).

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Convolution;
use crate::grid::{Grid2D, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    /// Alignment strength β.
    pub beta: f64,
    /// Cucker–Smale exponent ς.
    pub varsigma: f64,
    pub w_rep: f64,
    pub w_adh: f64,
    pub r_rep: f64,
    pub r_adh: f64,
    pub w_rep_tum: f64,
    pub r_rep_tum: f64,
    /// Optional alignment cutoff; `None` means unlimited range.
    pub r_align: Option<f64>,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            beta: 2000.0,
            varsigma: 1.0,
            w_rep: 500.0,
            w_adh: 4.0,
            r_rep: 0.04,
            r_adh: 0.06,
            w_rep_tum: 0.0,
            r_rep_tum: 0.07,
            r_align: None,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<()> {
        let strengths =
            [("beta", self.beta), ("w_rep", self.w_rep), ("w_adh", self.w_adh), ("w_rep_tum", self.w_rep_tum)];
        for (name, v) in strengths {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} >= 0 (got {v})")));
            }
        }
        if !(self.r_rep > 0.0) {
            return Err(Error::invalid(format!("R_rep > 0 (got {})", self.r_rep)));
        }
        if !(self.r_adh > self.r_rep) {
            return Err(Error::invalid(format!("R_adh > R_rep (got R_adh = {}, R_rep = {})", self.r_adh, self.r_rep)));
        }
        if !(self.r_rep_tum > 0.0) {
            return Err(Error::invalid(format!("R_rep_tum > 0 (got {})", self.r_rep_tum)));
        }
        if !(self.varsigma > 0.0) {
            return Err(Error::invalid(format!("varsigma > 0 (got {})", self.varsigma)));
        }
        if let Some(r) = self.r_align {
            if !(r > 0.0) {
                return Err(Error::invalid(format!("R_align > 0 (got {r})")));
            }
        }
        Ok(())
    }
}

#[inline]
fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Communication rate `β / (1 + r²)^ς`, zero beyond `R_align` when set.
pub fn gamma_d(r: f64, p: &KernelParams) -> f64 {
    if let Some(cut) = p.r_align {
        if r > cut {
            return 0.0;
        }
    }
    let base = 1.0 + r * r;
    let denom = if p.varsigma == 1.0 { base } else { base.powf(p.varsigma) };
    p.beta / denom
}

/// Alignment force `γ_D(|x_i − x_j|) (v_j − v_i)`.
pub fn gamma1(dv: [f64; 2], dx: [f64; 2], p: &KernelParams) -> [f64; 2] {
    let w = gamma_d(norm(dx), p);
    [w * dv[0], w * dv[1]]
}

/// Attraction–repulsion force on `x_i` from `x_j`, with `dx = x_i − x_j`.
pub fn gamma2(dx: [f64; 2], p: &KernelParams) -> [f64; 2] {
    let r = norm(dx);
    if r == 0.0 || r > p.r_adh {
        return [0.0, 0.0];
    }
    // magnitude along (x_i − x_j)/r: positive pushes the cells apart
    let push = if r <= p.r_rep { p.w_rep * (1.0 / r - 1.0 / p.r_rep) } else { -p.w_adh * (r - p.r_rep) };
    [push * dx[0] / r, push * dx[1] / r]
}

/// Repulsion of an immune cell at `x_i` by a tumour cell at `y_j`, with
/// `dx = x_i − y_j`.
pub fn gamma3(dx: [f64; 2], p: &KernelParams) -> [f64; 2] {
    let r = norm(dx);
    if r == 0.0 || r > p.r_rep_tum {
        return [0.0, 0.0];
    }
    let push = p.w_rep_tum * (1.0 / r - 1.0 / p.r_rep_tum);
    [push * dx[0] / r, push * dx[1] / r]
}

/// Which nonlocal terms enter the momentum equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionSet {
    pub alignment: bool,
    pub attraction_repulsion: bool,
    pub tumor: bool,
}

impl InteractionSet {
    pub const NONE: Self = Self { alignment: false, attraction_repulsion: false, tumor: false };
    pub const ALL: Self = Self { alignment: true, attraction_repulsion: true, tumor: true };

    /// Parses a list such as `["i1", "i2"]`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut set = Self::NONE;
        for n in names {
            match n.as_ref().trim().to_ascii_lowercase().as_str() {
                "i1" | "alignment" => set.alignment = true,
                "i2" | "attraction-repulsion" | "attraction_repulsion" => set.attraction_repulsion = true,
                "i3" | "tumor" | "tumour" => set.tumor = true,
                "" => {}
                other => return Err(Error::invalid(format!("unknown interaction '{other}' (expected i1, i2, i3)"))),
            }
        }
        Ok(set)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.alignment {
            v.push("i1");
        }
        if self.attraction_repulsion {
            v.push("i2");
        }
        if self.tumor {
            v.push("i3");
        }
        v
    }
}

/// How a discrete convolution is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvolutionPath {
    /// Loop over the kernel's nonzero offsets only.
    Stencil,
    /// Zero-padded FFT.
    Fft,
}

/// Vector-valued kernel tabulated on grid offsets inside its support.
struct Stencil {
    grid: Grid2D,
    taps: Vec<(isize, isize, f64, f64)>,
}

impl Stencil {
    fn new(grid: Grid2D, support: f64, kernel: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let rx = ((support / grid.dx).ceil() as isize).min(grid.nx as isize - 1);
        let ry = ((support / grid.dy).ceil() as isize).min(grid.ny as isize - 1);
        let mut taps = Vec::new();
        for dj in -ry..=ry {
            for di in -rx..=rx {
                let [kx, ky] = kernel(di as f64 * grid.dx, dj as f64 * grid.dy);
                if kx != 0.0 || ky != 0.0 {
                    taps.push((di, dj, kx, ky));
                }
            }
        }
        Self { grid, taps }
    }

    fn apply(&self, field: &[f64]) -> ([Vec<f64>; 2], ()) {
        let g = &self.grid;
        let (nx, ny) = (g.nx as isize, g.ny as isize);
        let mut ox = vec![0.0; g.len()];
        let mut oy = vec![0.0; g.len()];
        for &(di, dj, kx, ky) in &self.taps {
            // out(i, j) += K(di, dj) g(i − di, j − dj)
            let i_lo = di.max(0);
            let i_hi = (nx + di).min(nx);
            let j_lo = dj.max(0);
            let j_hi = (ny + dj).min(ny);
            for j in j_lo..j_hi {
                let src_row = ((j - dj) * nx) as usize;
                let dst_row = (j * nx) as usize;
                for i in i_lo..i_hi {
                    let v = field[src_row + (i - di) as usize];
                    let d = dst_row + i as usize;
                    ox[d] += kx * v;
                    oy[d] += ky * v;
                }
            }
        }
        ([ox, oy], ())
    }
}

enum VectorKernel {
    Stencil(Stencil),
    Fft(Convolution),
}

impl VectorKernel {
    fn build(grid: Grid2D, path: ConvolutionPath, support: f64, kernel: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        match path {
            ConvolutionPath::Stencil => VectorKernel::Stencil(Stencil::new(grid, support, kernel)),
            ConvolutionPath::Fft => VectorKernel::Fft(Convolution::new(grid, |zx, zy| {
                let [a, b] = kernel(zx, zy);
                Complex64::new(a, b)
            })),
        }
    }

    /// `(Σ_y Kx(x−y) g(y), Σ_y Ky(x−y) g(y))`, unweighted.
    fn apply(&self, field: &[f64]) -> [Vec<f64>; 2] {
        match self {
            VectorKernel::Stencil(s) => s.apply(field).0,
            VectorKernel::Fft(c) => {
                let input: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let out = c.apply(&input);
                [out.iter().map(|c| c.re).collect(), out.iter().map(|c| c.im).collect()]
            }
        }
    }

    /// Two real fields through the real (x-component) kernel at once.
    fn apply_pair(&self, a: &[f64], b: &[f64]) -> [Vec<f64>; 2] {
        match self {
            VectorKernel::Stencil(s) => {
                let [ra, _] = s.apply(a).0;
                let [rb, _] = s.apply(b).0;
                [ra, rb]
            }
            VectorKernel::Fft(c) => {
                let input: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
                let out = c.apply(&input);
                [out.iter().map(|c| c.re).collect(), out.iter().map(|c| c.im).collect()]
            }
        }
    }
}

/// Decomposition `I = force − rate·u` of the total interaction term.
///
/// The alignment integral splits into a nonlocal average of momentum and a
/// local relaxation rate `∫ γ_D(x − y) ρ(y) dy` multiplying `u(x)`; the
/// momentum update treats the latter implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub force: VectorField,
    pub rate: ScalarField,
}

impl Interaction {
    pub fn zero(grid: Grid2D) -> Self {
        Self { force: VectorField::zeros(grid), rate: ScalarField::zeros(grid) }
    }

    /// Pointwise `force − rate·u`.
    pub fn evaluate(&self, u: &VectorField) -> VectorField {
        let mut out = self.force.clone();
        let r = self.rate.values();
        for (k, o) in out.x.values_mut().iter_mut().enumerate() {
            *o -= r[k] * u.x.values()[k];
        }
        for (k, o) in out.y.values_mut().iter_mut().enumerate() {
            *o -= r[k] * u.y.values()[k];
        }
        out
    }
}

/// Precomputed nonlocal operators for one grid and parameter set.
///
/// The tumour term depends only on the fixed tumour density, so it is
/// evaluated once at construction.
pub struct NonlocalOperators {
    grid: Grid2D,
    alignment: Option<VectorKernel>,
    attr_rep: Option<VectorKernel>,
    tumor: Option<VectorField>,
}

impl NonlocalOperators {
    pub fn new(
        grid: Grid2D,
        params: &KernelParams,
        enabled: InteractionSet,
        zeta: Option<&ScalarField>,
    ) -> Result<Self> {
        let p = *params;
        let alignment = (enabled.alignment && p.beta > 0.0).then(|| {
            let path = match p.r_align {
                Some(r) if r < 0.25 * grid.length => ConvolutionPath::Stencil,
                _ => ConvolutionPath::Fft,
            };
            let support = p.r_align.unwrap_or(f64::INFINITY).min(2.0 * grid.length);
            VectorKernel::build(grid, path, support, move |zx, zy| [gamma_d(zx.hypot(zy), &p), 0.0])
        });
        let attr_rep = (enabled.attraction_repulsion && (p.w_rep > 0.0 || p.w_adh > 0.0))
            .then(|| VectorKernel::build(grid, ConvolutionPath::Stencil, p.r_adh, move |zx, zy| gamma2([zx, zy], &p)));
        let tumor = match (enabled.tumor, zeta) {
            (true, Some(z)) => {
                if z.grid() != &grid {
                    return Err(Error::GridMismatch);
                }
                Some(nonlocal_tumor_with(z, &p, ConvolutionPath::Stencil))
            }
            _ => None,
        };
        Ok(Self { grid, alignment, attr_rep, tumor })
    }

    pub fn is_trivial(&self) -> bool {
        self.alignment.is_none() && self.attr_rep.is_none() && self.tumor.is_none()
    }

    pub fn cached_tumor_force(&self) -> Option<&VectorField> {
        self.tumor.as_ref()
    }

    /// Evaluates all enabled terms for the current state.
    pub fn evaluate(&self, rho: &ScalarField, momentum: &VectorField) -> Interaction {
        let g = self.grid;
        let w = g.dx * g.dy;
        let mut out = Interaction::zero(g);
        if let Some(k) = &self.alignment {
            let [cx, cy] = k.apply_pair(momentum.x.values(), momentum.y.values());
            let [crho, _] = k.apply(rho.values());
            for n in 0..g.len() {
                out.force.x.values_mut()[n] += w * cx[n];
                out.force.y.values_mut()[n] += w * cy[n];
                out.rate.values_mut()[n] = w * crho[n];
            }
        }
        if let Some(k) = &self.attr_rep {
            let [fx, fy] = k.apply(rho.values());
            for n in 0..g.len() {
                out.force.x.values_mut()[n] += w * fx[n];
                out.force.y.values_mut()[n] += w * fy[n];
            }
        }
        if let Some(t) = &self.tumor {
            out.force.add_assign(t);
        }
        out
    }
}

fn momentum_of(rho: &ScalarField, u: &VectorField) -> VectorField {
    let g = *rho.grid();
    let mut m = VectorField::zeros(g);
    for k in 0..g.len() {
        m.x.values_mut()[k] = rho.values()[k] * u.x.values()[k];
        m.y.values_mut()[k] = rho.values()[k] * u.y.values()[k];
    }
    m
}

/// `I₁(x) = Σ_y γ_D(|x − y|)(u(y) − u(x)) ρ(y) dx dy`, evaluated through the
/// split `conv(γ_D, ρu) − u·conv(γ_D, ρ)`.
pub fn nonlocal_alignment(rho: &ScalarField, u: &VectorField, p: &KernelParams) -> Result<VectorField> {
    nonlocal_alignment_with(rho, u, p, ConvolutionPath::Fft)
}

pub fn nonlocal_alignment_with(
    rho: &ScalarField,
    u: &VectorField,
    p: &KernelParams,
    path: ConvolutionPath,
) -> Result<VectorField> {
    let g = *rho.grid();
    if u.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let p = *p;
    let support = p.r_align.unwrap_or(f64::INFINITY).min(2.0 * g.length);
    let k = VectorKernel::build(g, path, support, move |zx, zy| [gamma_d(zx.hypot(zy), &p), 0.0]);
    let m = momentum_of(rho, u);
    let w = g.dx * g.dy;
    let [cx, cy] = k.apply_pair(m.x.values(), m.y.values());
    let [crho, _] = k.apply(rho.values());
    let mut out = VectorField::zeros(g);
    for n in 0..g.len() {
        out.x.values_mut()[n] = w * (cx[n] - u.x.values()[n] * crho[n]);
        out.y.values_mut()[n] = w * (cy[n] - u.y.values()[n] * crho[n]);
    }
    Ok(out)
}

/// `I₂(x) = Σ_y γ₂(x − y) ρ(y) dx dy`.
pub fn nonlocal_attr_rep(rho: &ScalarField, p: &KernelParams) -> VectorField {
    nonlocal_attr_rep_with(rho, p, ConvolutionPath::Stencil)
}

pub fn nonlocal_attr_rep_with(rho: &ScalarField, p: &KernelParams, path: ConvolutionPath) -> VectorField {
    let p = *p;
    weighted(rho, VectorKernel::build(*rho.grid(), path, p.r_adh, move |zx, zy| gamma2([zx, zy], &p)))
}

/// `I₃(x) = Σ_y γ₃(x − y) ζ(y) dx dy`.
pub fn nonlocal_tumor(zeta: &ScalarField, p: &KernelParams) -> VectorField {
    nonlocal_tumor_with(zeta, p, ConvolutionPath::Stencil)
}

pub fn nonlocal_tumor_with(zeta: &ScalarField, p: &KernelParams, path: ConvolutionPath) -> VectorField {
    let p = *p;
    if p.w_rep_tum == 0.0 {
        return VectorField::zeros(*zeta.grid());
    }
    weighted(zeta, VectorKernel::build(*zeta.grid(), path, p.r_rep_tum, move |zx, zy| gamma3([zx, zy], &p)))
}

fn weighted(field: &ScalarField, k: VectorKernel) -> VectorField {
    let g = *field.grid();
    let w = g.dx * g.dy;
    let [fx, fy] = k.apply(field.values());
    VectorField {
        x: ScalarField::from_values(g, fx.into_iter().map(|v| v * w).collect()).expect("grid size"),
        y: ScalarField::from_values(g, fy.into_iter().map(|v| v * w).collect()).expect("grid size"),
    }
}
