//! Five-velocity discrete-kinetic relaxation scheme for the Euler part of
//! the macroscopic model.
//!
//! The state `w = (ρ, ρu₁, ρu₂)` is projected onto five Maxwellians moving
//! with velocities `(±λ, 0)`, `(0, ±λ)` and `0`. Each population is then
//! advected along its own velocity (first-order upwind, or upwind plus a
//! minmod-limited Lax–Wendroff correction), summed back, and the source is
//! applied. Walls reflect populations: the ghost value of a population is
//! the mirrored value of its reflected partner with the normal momentum
//! negated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_neumann, total_mass, ConservedState, Grid2D, ScalarField, VectorField, RHO_FLOOR};
use crate::kernels::Interaction;

/// Three conserved components at one node.
pub type Node = [f64; 3];

/// Velocity direction of each population: `+x, +y, −x, −y, 0`.
const DIRECTIONS: [(i8, i8); 5] = [(1, 0), (0, 1), (-1, 0), (0, -1), (0, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressureLaw {
    /// `0` for the pressureless model, `1` to switch the pressure on.
    pub epsilon: f64,
    /// Activation threshold `ρ₀`.
    pub rho0: f64,
}

impl Default for PressureLaw {
    fn default() -> Self {
        Self { epsilon: 0.0, rho0: 4.0 }
    }
}

impl PressureLaw {
    pub fn pressureless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon != 0.0 && self.epsilon != 1.0 {
            return Err(Error::invalid(format!("epsilon in {{0, 1}} (got {})", self.epsilon)));
        }
        if !(self.rho0.is_finite() && self.rho0 >= 0.0) {
            return Err(Error::invalid(format!("rho0 >= 0 (got {})", self.rho0)));
        }
        Ok(())
    }

    /// `P(ρ) = (ρ − ρ₀)³` above the threshold, zero below.
    pub fn pressure(&self, rho: f64) -> f64 {
        let e = rho - self.rho0;
        if e > 0.0 {
            e * e * e
        } else {
            0.0
        }
    }

    pub fn pressure_derivative(&self, rho: f64) -> f64 {
        let e = rho - self.rho0;
        if e > 0.0 {
            3.0 * e * e
        } else {
            0.0
        }
    }
}

/// Transport variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limiter {
    /// First-order upwind.
    Upwind,
    /// Upwind plus a minmod-limited second-order correction.
    #[default]
    Minmod,
}

impl std::str::FromStr for Limiter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upwind" => Ok(Limiter::Upwind),
            "minmod" => Ok(Limiter::Minmod),
            other => Err(Error::invalid(format!("limiter must be 'upwind' or 'minmod' (got '{other}')"))),
        }
    }
}

/// Physical fluxes `(A₁(w), A₂(w))`.
pub fn flux_a(w: Node, law: &PressureLaw) -> [Node; 2] {
    let [rho, m1, m2] = w;
    let r = rho.max(RHO_FLOOR);
    let (u1, u2) = (m1 / r, m2 / r);
    let p = law.epsilon * law.pressure(rho);
    [[m1, m1 * u1 + p, m1 * u2], [m2, m2 * u1, m2 * u2 + p]]
}

/// Equilibria `M_i = a_i w + b_i1 A₁ + b_i2 A₂`.
pub fn maxwellians(w: Node, law: &PressureLaw, lambda: f64, a: f64) -> [Node; 5] {
    let [a1, a2] = flux_a(w, law);
    let s = 0.5 / lambda;
    let c = 1.0 - 4.0 * a;
    let mut out = [[0.0; 3]; 5];
    for k in 0..3 {
        let base = a * w[k];
        out[0][k] = base + s * a1[k];
        out[1][k] = base + s * a2[k];
        out[2][k] = base - s * a1[k];
        out[3][k] = base - s * a2[k];
        out[4][k] = c * w[k];
    }
    out
}

/// `0.9·dx/λ`.
pub fn cfl_dt(lambda: f64, dx: f64) -> f64 {
    0.9 * dx / lambda
}

/// `max(0, min(r, 1))`, with NaN mapped to 0 and `+∞` to 1.
pub fn minmod_phi(r: f64) -> f64 {
    if r.is_nan() {
        0.0
    } else {
        r.clamp(0.0, 1.0)
    }
}

/// Kinetic speed satisfying the sub-characteristic condition and keeping
/// every population's density nonnegative:
/// `max(λ_min, c·max(|u₁| + |u₂| + √(ε P′(ρ))) / (2a))`.
pub fn adapt_lambda(w: &ConservedState, law: &PressureLaw, a: f64, c_safe: f64, lambda_min: f64) -> f64 {
    let mut speed: f64 = 0.0;
    for k in 0..w.grid().len() {
        let [rho, m1, m2] = w.node(k);
        let r = rho.max(RHO_FLOOR);
        let sound = (law.epsilon * law.pressure_derivative(rho).max(0.0)).sqrt();
        speed = speed.max((m1 / r).abs() + (m2 / r).abs() + sound);
    }
    (c_safe * speed / (2.0 * a)).max(lambda_min)
}

/// The five populations `f_i`, each with three components.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticEnsemble {
    grid: Grid2D,
    pub lambda: f64,
    pub a: f64,
    /// `f[i][component][node]`.
    pub f: [[Vec<f64>; 3]; 5],
}

impl KineticEnsemble {
    /// Projects `w` onto the Maxwellians.
    pub fn project(w: &ConservedState, law: &PressureLaw, lambda: f64, a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 0.25) {
            return Err(Error::invalid(format!("0 < a < 1/4 (got {a})")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::LambdaAdaptation(lambda));
        }
        let grid = *w.grid();
        let n = grid.len();
        let mut f: [[Vec<f64>; 3]; 5] = std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]));
        for k in 0..n {
            let m = maxwellians(w.node(k), law, lambda, a);
            for (i, mi) in m.iter().enumerate() {
                for c in 0..3 {
                    f[i][c][k] = mi[c];
                }
            }
        }
        Ok(Self { grid, lambda, a, f })
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// `Σ_i f_i`.
    pub fn moments(&self) -> ConservedState {
        let n = self.grid.len();
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; n]);
        for (c, out) in comps.iter_mut().enumerate() {
            for k in 0..n {
                out[k] = self.f[0][c][k] + self.f[1][c][k] + self.f[2][c][k] + self.f[3][c][k] + self.f[4][c][k];
            }
        }
        let [rho, m1, m2] = comps;
        let g = self.grid;
        ConservedState {
            rho: ScalarField::from_values(g, rho).expect("grid size"),
            m1: ScalarField::from_values(g, m1).expect("grid size"),
            m2: ScalarField::from_values(g, m2).expect("grid size"),
        }
    }
}

/// One update of a line moving in the `+` direction with Courant number
/// `nu`. `ext` holds two ghost values on each side.
fn advance_positive(ext: &[f64], nu: f64, limiter: Limiter, out: &mut [f64]) {
    let n = ext.len() - 4;
    let half = 0.5 * (1.0 - nu);
    // numerical flux (divided by λ) across the interface k | k+1
    let flux = |k: usize| -> f64 {
        let jump = ext[k + 1] - ext[k];
        match limiter {
            Limiter::Upwind => ext[k],
            Limiter::Minmod => {
                let r = (ext[k] - ext[k - 1]) / jump;
                ext[k] + half * minmod_phi(r) * jump
            }
        }
    };
    let mut left = flux(1);
    for j in 0..n {
        let right = flux(j + 2);
        out[j] = ext[j + 2] - nu * (right - left);
        left = right;
    }
}

/// Ghost source for node offset `-k` (left) or `n-1+k` (right) of a line.
fn mirror_index(k: usize, n: usize, left: bool) -> usize {
    if left {
        k
    } else {
        n - 1 - k
    }
}

/// Advects every population once; the state must satisfy the CFL bound.
pub fn transport_step(ens: &mut KineticEnsemble, dt: f64, limiter: Limiter) -> Result<()> {
    let g = ens.grid;
    g.require_stencil()?;
    let limit = cfl_dt(ens.lambda, g.dx.min(g.dy));
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let old = ens.f.clone();
    for (d, &(sx, sy)) in DIRECTIONS.iter().enumerate() {
        if sx == 0 && sy == 0 {
            continue;
        }
        let partner = (d + 2) % 4;
        let along_x = sx != 0;
        let (n, lines, h) = if along_x { (g.nx, g.ny, g.dx) } else { (g.ny, g.nx, g.dy) };
        let nu = ens.lambda * dt / h;
        let normal = if along_x { 1 } else { 2 };
        let at = |line: usize, pos: usize| if along_x { g.idx(pos, line) } else { g.idx(line, pos) };
        let mut ext = vec![0.0; n + 4];
        let mut out = vec![0.0; n];
        for c in 0..3 {
            let sign = if c == normal { -1.0 } else { 1.0 };
            let own = &old[d][c];
            let refl = &old[partner][c];
            for line in 0..lines {
                // ext is laid out in the population's direction of motion
                let forward = sx > 0 || sy > 0;
                let pos = |e: usize| if forward { e } else { n - 1 - e };
                for e in 0..n {
                    ext[e + 2] = own[at(line, pos(e))];
                }
                for k in 1..=2 {
                    // upstream wall lies at e = 0, downstream at e = n − 1
                    let up = mirror_index(k, n, forward);
                    let down = mirror_index(k, n, !forward);
                    ext[2 - k] = sign * refl[at(line, up)];
                    ext[n + 1 + k] = sign * refl[at(line, down)];
                }
                advance_positive(&ext, nu, limiter, &mut out);
                for e in 0..n {
                    ens.f[d][c][at(line, pos(e))] = out[e];
                }
            }
        }
    }
    Ok(())
}

/// Explicit source `(0, (1−ε)ρI + ηρ∇φ − αρu)`; the caller scales by `dt`.
pub fn source_eval(
    w: &ConservedState,
    phi: &ScalarField,
    interaction: &VectorField,
    eta: f64,
    alpha: f64,
    epsilon: f64,
) -> Result<ConservedState> {
    let g = *w.grid();
    if phi.grid() != &g || interaction.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let grad = gradient_neumann(phi)?;
    let mut out = ConservedState::at_rest(ScalarField::zeros(g));
    for k in 0..g.len() {
        let [rho, m1, m2] = w.node(k);
        let r = rho.max(RHO_FLOOR);
        let (u1, u2) = (m1 / r, m2 / r);
        let ix = interaction.x.values()[k];
        let iy = interaction.y.values()[k];
        out.m1.values_mut()[k] = (1.0 - epsilon) * rho * ix + eta * rho * grad.x.values()[k] - alpha * rho * u1;
        out.m2.values_mut()[k] = (1.0 - epsilon) * rho * iy + eta * rho * grad.y.values()[k] - alpha * rho * u2;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperbolicParams {
    pub law: PressureLaw,
    pub limiter: Limiter,
    /// Maxwellian weight `a ∈ (0, 1/4)`.
    pub a: f64,
    pub c_safe: f64,
    pub lambda_min: f64,
    /// Largest admissible kinetic speed; exceeding it is a blow-up signal.
    pub lambda_max: f64,
    /// Clipped negative mass tolerated per step, relative to the total.
    pub clip_tolerance: f64,
}

impl Default for HyperbolicParams {
    fn default() -> Self {
        Self {
            law: PressureLaw::default(),
            limiter: Limiter::Minmod,
            a: 0.2,
            c_safe: 1.2,
            lambda_min: 1.0,
            lambda_max: 1e8,
            clip_tolerance: 1e-6,
        }
    }
}

impl HyperbolicParams {
    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if !(self.a > 0.0 && self.a < 0.25) {
            return Err(Error::invalid(format!("0 < a < 1/4 (got {})", self.a)));
        }
        if !(self.c_safe > 0.0) {
            return Err(Error::invalid(format!("c_safe > 0 (got {})", self.c_safe)));
        }
        if !(self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min) {
            return Err(Error::invalid("0 < lambda_min <= lambda_max"));
        }
        Ok(())
    }

    pub fn lambda_for(&self, w: &ConservedState) -> Result<f64> {
        let l = adapt_lambda(w, &self.law, self.a, self.c_safe, self.lambda_min);
        if !l.is_finite() || l > self.lambda_max {
            return Err(Error::LambdaAdaptation(l));
        }
        Ok(l)
    }
}

/// Coefficients of the momentum source for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forcing {
    pub eta: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: ConservedState,
    /// Negative density removed by clipping (weighted mass).
    pub clipped_mass: f64,
}

/// Advances `w` by `dt` with kinetic speed `lambda`.
///
/// The momentum source is applied after transport. Damping `−αρu` and the
/// local part `−rate·ρu` of the alignment term are taken implicitly, the
/// remaining forces explicitly at the old state:
/// `m' = (m* + dt·(ρ(1−ε)·force + ηρ∇φ)) / (1 + dt(α + (1−ε)·rate))`.
/// Normal momentum is zero on the walls.
pub fn hyperbolic_step(
    w: &ConservedState,
    phi: &ScalarField,
    interaction: &Interaction,
    forcing: Forcing,
    params: &HyperbolicParams,
    dt: f64,
    lambda: f64,
) -> Result<StepOutcome> {
    let g = *w.grid();
    if phi.grid() != &g || interaction.force.grid() != &g {
        return Err(Error::GridMismatch);
    }
    let mut ens = KineticEnsemble::project(w, &params.law, lambda, params.a)?;
    transport_step(&mut ens, dt, params.limiter)?;
    let mut next = ens.moments();

    let grad = gradient_neumann(phi)?;
    let keep = 1.0 - params.law.epsilon;
    let rho_old = w.rho.values();
    let rate = interaction.rate.values();
    let (fx, fy) = (interaction.force.x.values(), interaction.force.y.values());
    for k in 0..g.len() {
        let rho = rho_old[k];
        let denom = 1.0 + dt * (forcing.alpha + keep * rate[k]);
        let sx = rho * (keep * fx[k] + forcing.eta * grad.x.values()[k]);
        let sy = rho * (keep * fy[k] + forcing.eta * grad.y.values()[k]);
        next.m1.values_mut()[k] = (next.m1.values()[k] + dt * sx) / denom;
        next.m2.values_mut()[k] = (next.m2.values()[k] + dt * sy) / denom;
    }

    let total = total_mass(&next.rho);
    let mut clipped = 0.0;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let k = g.idx(i, j);
            let r = next.rho.values()[k];
            if r < 0.0 {
                clipped -= r * g.weight(i, j);
                next.rho.values_mut()[k] = 0.0;
                next.m1.values_mut()[k] = 0.0;
                next.m2.values_mut()[k] = 0.0;
            }
            if i == 0 || i == g.nx - 1 {
                next.m1.values_mut()[k] = 0.0;
            }
            if j == 0 || j == g.ny - 1 {
                next.m2.values_mut()[k] = 0.0;
            }
        }
    }
    if clipped > params.clip_tolerance * total.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::ClippedMass { clipped, total });
    }
    if !next.is_finite() {
        return Err(Error::NonFinite { field: "state", time: f64::NAN });
    }
    Ok(StepOutcome { state: next, clipped_mass: clipped })
}
