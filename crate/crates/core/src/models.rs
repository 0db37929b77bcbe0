//! Time-stepped macroscopic systems: one immune population, optionally
//! interacting with a fixed tumour population.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{total_mass, ConservedState, Grid2D, ScalarField};
use crate::hyperbolic::{cfl_dt, hyperbolic_step, Forcing, HyperbolicParams};
use crate::kde::{kde, Bandwidth};
use crate::kernels::{InteractionSet, KernelParams, NonlocalOperators};
use crate::parabolic::{g_production, ChemoParams, SourceMode, ThetaSolver};

/// Gaussian-bump initial density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BumpInit {
    pub count: usize,
    pub sigma: f64,
}

impl Default for BumpInit {
    fn default() -> Self {
        Self { count: 200, sigma: 0.015 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroConfig {
    pub grid: Grid2D,
    pub t_final: f64,
    pub hyperbolic: HyperbolicParams,
    pub kernels: KernelParams,
    pub chemo: ChemoParams,
    /// Chemotactic sensitivity `η`.
    pub eta: f64,
    /// Damping `α`.
    pub alpha: f64,
    pub interactions: InteractionSet,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
    pub initial: BumpInit,
    /// Blow-up is declared once `max ρ ≥ factor · mass / area`.
    pub blow_up_factor: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            grid: Grid2D::default(),
            t_final: 1.0,
            hyperbolic: HyperbolicParams::default(),
            kernels: KernelParams::default(),
            chemo: ChemoParams::default(),
            eta: 0.5,
            alpha: 0.0,
            interactions: InteractionSet::NONE,
            seed: 0,
            snapshot_times: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            initial: BumpInit::default(),
            blow_up_factor: DEFAULT_BLOW_UP_FACTOR,
        }
    }
}

/// Default blow-up threshold relative to the mean density.
pub const DEFAULT_BLOW_UP_FACTOR: f64 = 10.0;

impl MacroConfig {
    /// Two-population setting used with agent data: damping `α = 100`,
    /// all interactions on, `D = 45`, `κ = 0.2`, Crank–Nicolson and the
    /// tumour-convolution source. Estimation runs tolerate the sharp peaks
    /// of kernel density estimates, so the blow-up factor is `10³`.
    pub fn two_population() -> Self {
        Self {
            alpha: 100.0,
            interactions: InteractionSet::ALL,
            blow_up_factor: 1e3,
            chemo: ChemoParams { d: 45.0, kappa: 0.2, theta: 0.5, source: SourceMode::TumorConvolution },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.require_stencil()?;
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid(format!("T > 0 (got {})", self.t_final)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta >= 0 (got {})", self.eta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha >= 0 (got {})", self.alpha)));
        }
        if !(self.blow_up_factor > 1.0) {
            return Err(Error::invalid(format!("blow_up_factor > 1 (got {})", self.blow_up_factor)));
        }
        if self.initial.count == 0 || !(self.initial.sigma > 0.0) {
            return Err(Error::invalid("initial bumps: count >= 1 and sigma > 0"));
        }
        for w in self.snapshot_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("snapshot_times strictly increasing"));
            }
        }
        if let Some(&t) = self.snapshot_times.iter().find(|&&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(Error::invalid(format!("snapshot_times within [0, T] (got {t})")));
        }
        self.hyperbolic.validate()?;
        self.kernels.validate()?;
        self.chemo.validate()
    }
}

/// Fixed tumour cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TumorLayout {
    pub centers: Vec<[f64; 2]>,
    /// Tumour cell radius.
    pub r_tum: f64,
    /// Production rate `ξ` of the chemoattractant.
    pub xi: f64,
    /// Bandwidth factor of the tumour density estimate.
    pub h_tum: f64,
}

impl Default for TumorLayout {
    fn default() -> Self {
        Self { centers: vec![[0.5, 0.7], [0.3, 0.3], [0.8, 0.5]], r_tum: 0.05, xi: 1000.0, h_tum: 1.2 }
    }
}

impl TumorLayout {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        if !(self.r_tum > 0.0) {
            return Err(Error::invalid(format!("R_tum > 0 (got {})", self.r_tum)));
        }
        if !(self.xi >= 0.0) || !(self.h_tum > 0.0) {
            return Err(Error::invalid("xi >= 0 and h_tum > 0"));
        }
        if let Some(c) = self.centers.iter().find(|c| !grid.contains(c[0], c[1])) {
            return Err(Error::invalid(format!("tumour centre ({}, {}) inside the domain", c[0], c[1])));
        }
        Ok(())
    }

    /// Tumour density `ζ`: a kernel estimate of the centres carrying mass `M`.
    pub fn density(&self, grid: Grid2D) -> Result<ScalarField> {
        if self.centers.is_empty() {
            return Ok(ScalarField::zeros(grid));
        }
        let mut zeta = kde(&self.centers, Bandwidth::new(self.h_tum, self.r_tum)?, grid)?;
        zeta.scale(self.centers.len() as f64);
        Ok(zeta)
    }

    /// `Σⱼ χ(x − yⱼ)` sampled on the grid.
    pub fn chi_sum(&self, grid: Grid2D) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.centers.iter().map(|c| chi_source([x - c[0], y - c[1]], self)).sum())
    }
}

/// Smoothed tumour indicator `ξ(1 − (|z|/R)²)²` inside the disk of radius `R`.
pub fn chi_source(z: [f64; 2], layout: &TumorLayout) -> f64 {
    let q = (z[0] * z[0] + z[1] * z[1]) / (layout.r_tum * layout.r_tum);
    if q >= 1.0 {
        0.0
    } else {
        layout.xi * (1.0 - q) * (1.0 - q)
    }
}

/// `(χ ∗ ζ)(x) = Σ_y χ(x − y) ζ(y) dx dy`.
pub fn chi_convolution(zeta: &ScalarField, layout: &TumorLayout) -> ScalarField {
    let g = *zeta.grid();
    let rx = (layout.r_tum / g.dx).ceil() as isize;
    let ry = (layout.r_tum / g.dy).ceil() as isize;
    let mut taps = Vec::new();
    for dj in -ry..=ry {
        for di in -rx..=rx {
            let c = chi_source([di as f64 * g.dx, dj as f64 * g.dy], layout);
            if c != 0.0 {
                taps.push((di, dj, c * g.dx * g.dy));
            }
        }
    }
    let mut out = ScalarField::zeros(g);
    let (nx, ny) = (g.nx as isize, g.ny as isize);
    for j in 0..ny {
        for i in 0..nx {
            let mut acc = 0.0;
            for &(di, dj, c) in &taps {
                let (si, sj) = (i - di, j - dj);
                if si >= 0 && si < nx && sj >= 0 && sj < ny {
                    acc += c * zeta.at(si as usize, sj as usize);
                }
            }
            out.values_mut()[(j * nx + i) as usize] = acc;
        }
    }
    out
}

/// Sum of `count` Gaussian bumps with uniformly drawn centres, scaled to
/// unit mass.
pub fn init_density_bumps(count: usize, sigma: f64, seed: u64, grid: Grid2D) -> Result<ScalarField> {
    if count == 0 || !(sigma > 0.0) {
        return Err(Error::invalid("bumps: count >= 1 and sigma > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> =
        (0..count).map(|_| [rng.gen::<f64>() * grid.length, rng.gen::<f64>() * grid.length]).collect();
    Ok(bumps_at(&centers, sigma, grid))
}

/// Unit-mass sum of Gaussian bumps at the given centres.
pub fn bumps_at(centers: &[[f64; 2]], sigma: f64, grid: Grid2D) -> ScalarField {
    let s2 = 2.0 * sigma * sigma;
    let mut rho = ScalarField::from_fn(grid, |x, y| {
        centers.iter().map(|c| (-((x - c[0]).powi(2) + (y - c[1]).powi(2)) / s2).exp()).sum::<f64>()
    });
    let mass = total_mass(&rho);
    rho.scale(1.0 / mass);
    rho
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub time: f64,
    pub max_density: f64,
    pub reason: BlowUpReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowUpReason {
    DensityThreshold,
    KineticSpeed,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: usize,
    pub blow_up: Option<BlowUp>,
    pub clipped_mass: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub initial_mass: f64,
    pub final_mass: f64,
    pub initial_max_density: f64,
    pub blow_up_threshold: f64,
}

impl Diagnostics {
    pub fn mass_drift(&self) -> f64 {
        ((self.final_mass - self.initial_mass) / self.initial_mass).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    pub times: Vec<f64>,
    pub states: Vec<ConservedState>,
    pub phis: Vec<ScalarField>,
    pub diagnostics: Diagnostics,
}

impl SnapshotSeries {
    pub fn blew_up(&self) -> bool {
        self.diagnostics.blow_up.is_some()
    }
}

/// Fixed tumour data entering a two-population run.
pub struct TumorCoupling<'a> {
    pub layout: &'a TumorLayout,
    pub zeta: &'a ScalarField,
}

/// Single-population run from Gaussian-bump data with `u₀ = 0`, `φ₀ = 0`.
pub fn run_macro(cfg: &MacroConfig) -> Result<SnapshotSeries> {
    cfg.validate()?;
    let rho = init_density_bumps(cfg.initial.count, cfg.initial.sigma, cfg.seed, cfg.grid)?;
    run_from(cfg, ConservedState::at_rest(rho), ScalarField::zeros(cfg.grid), None)
}

/// Two-population run: `I₃` from `ζ`, chemoattractant source `χ ∗ ζ`
/// added to the immune production, `φ₀ = χ ∗ ζ`.
pub fn run_macro_twopop(cfg: &MacroConfig, layout: &TumorLayout, zeta: &ScalarField) -> Result<SnapshotSeries> {
    cfg.validate()?;
    let rho = init_density_bumps(cfg.initial.count, cfg.initial.sigma, cfg.seed, cfg.grid)?;
    let phi0 = chi_convolution(zeta, layout);
    run_from(cfg, ConservedState::at_rest(rho), phi0, Some(TumorCoupling { layout, zeta }))
}

/// General driver from explicit initial data.
pub fn run_from(
    cfg: &MacroConfig,
    initial: ConservedState,
    phi0: ScalarField,
    tumor: Option<TumorCoupling<'_>>,
) -> Result<SnapshotSeries> {
    cfg.validate()?;
    let g = cfg.grid;
    if initial.grid() != &g || phi0.grid() != &g {
        return Err(Error::GridMismatch);
    }
    if let Some(t) = &tumor {
        t.layout.validate(&g)?;
        if t.zeta.grid() != &g {
            return Err(Error::GridMismatch);
        }
        if t.zeta.min() < 0.0 {
            return Err(Error::invalid("tumour density nonnegative"));
        }
    }
    let zeta = tumor.as_ref().map(|t| t.zeta);
    let ops = NonlocalOperators::new(g, &cfg.kernels, cfg.interactions, zeta)?;
    let tumor_source = tumor.as_ref().map(|t| chi_convolution(t.zeta, t.layout));
    let solver = ThetaSolver::new(g)?;
    let forcing = Forcing { eta: cfg.eta, alpha: cfg.alpha };

    let mut w = initial;
    let mut phi = phi0;
    let mut t = 0.0;
    let initial_max = w.rho.max();
    let mean = total_mass(&w.rho) / (g.length * g.length);
    let threshold = cfg.blow_up_factor * mean;
    let mut diag = Diagnostics {
        initial_mass: total_mass(&w.rho),
        initial_max_density: initial_max,
        blow_up_threshold: threshold,
        lambda_min: f64::INFINITY,
        dt_min: f64::INFINITY,
        ..Default::default()
    };
    let mut series =
        SnapshotSeries { times: vec![], states: vec![], phis: vec![], diagnostics: Diagnostics::default() };
    let mut pending = cfg.snapshot_times.iter().copied().peekable();
    while let Some(&ts) = pending.peek() {
        if ts > 0.0 {
            break;
        }
        series.times.push(ts);
        series.states.push(w.clone());
        series.phis.push(phi.clone());
        pending.next();
    }
    let h = g.dx.min(g.dy);

    // Steps follow the CFL limit only; snapshots are interpolated linearly
    // between the two steps around each requested time, so outputs depend
    // smoothly on the parameters.
    while t < cfg.t_final {
        let lambda = match cfg.hyperbolic.lambda_for(&w) {
            Ok(l) => l,
            Err(Error::LambdaAdaptation(_)) => {
                diag.blow_up = Some(BlowUp { time: t, max_density: w.rho.max(), reason: BlowUpReason::KineticSpeed });
                break;
            }
            Err(e) => return Err(e),
        };
        let dt = cfl_dt(lambda, h);
        let interaction = ops.evaluate(&w.rho, &w.momentum());
        let outcome =
            hyperbolic_step(&w, &phi, &interaction, forcing, &cfg.hyperbolic, dt, lambda).map_err(|e| match e {
                Error::NonFinite { field, .. } => Error::NonFinite { field, time: t },
                e => e,
            })?;
        let mut source = g_production(&w.rho, &cfg.chemo);
        if let Some(ts) = &tumor_source {
            for (s, v) in source.values_mut().iter_mut().zip(ts.values()) {
                *s += v;
            }
        }
        let next_phi = solver.step(&phi, &source, &source, dt, &cfg.chemo)?;
        if !next_phi.is_finite() {
            return Err(Error::NonFinite { field: "phi", time: t + dt });
        }
        let next_t = t + dt;
        while let Some(&ts) = pending.peek() {
            if ts > next_t {
                break;
            }
            let s = (ts - t) / dt;
            series.times.push(ts);
            series.states.push(lerp_state(&w, &outcome.state, s));
            series.phis.push(lerp_field(&phi, &next_phi, s));
            pending.next();
        }
        w = outcome.state;
        phi = next_phi;
        t = next_t;
        diag.steps += 1;
        diag.clipped_mass += outcome.clipped_mass;
        diag.lambda_min = diag.lambda_min.min(lambda);
        diag.lambda_max = diag.lambda_max.max(lambda);
        diag.dt_min = diag.dt_min.min(dt);
        diag.dt_max = diag.dt_max.max(dt);
        let peak = w.rho.max();
        if peak >= threshold && t <= cfg.t_final {
            diag.blow_up = Some(BlowUp { time: t, max_density: peak, reason: BlowUpReason::DensityThreshold });
            break;
        }
    }
    diag.final_mass = total_mass(&w.rho);
    if diag.steps == 0 {
        diag.lambda_min = 0.0;
        diag.dt_min = 0.0;
    }
    series.diagnostics = diag;
    Ok(series)
}

fn lerp_field(a: &ScalarField, b: &ScalarField, s: f64) -> ScalarField {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| (1.0 - s) * x + s * y).collect();
    ScalarField::from_values(*a.grid(), values).expect("same grid")
}

fn lerp_state(a: &ConservedState, b: &ConservedState, s: f64) -> ConservedState {
    ConservedState {
        rho: lerp_field(&a.rho, &b.rho, s),
        m1: lerp_field(&a.m1, &b.m1, s),
        m2: lerp_field(&a.m2, &b.m2, s),
    }
}
