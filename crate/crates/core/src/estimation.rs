//! Density-matching calibration of the two-population macroscopic model:
//! relative L² misfit against snapshot data, Tikhonov regularisation,
//! a bound-constrained trust-region minimiser and local sensitivities.

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ConservedState, Grid2D, ScalarField};
use crate::kde::{kde, Bandwidth};
use crate::models::{chi_convolution, run_from, MacroConfig, SnapshotSeries, TumorCoupling, TumorLayout};

pub const PARAMS: usize = 6;

/// `[η, ω_rep, ω_adh, β, ω_rep_tum, h]`.
pub type Theta = [f64; PARAMS];

pub const PARAM_NAMES: [&str; PARAMS] = ["eta", "w_rep", "w_adh", "beta", "w_rep_tum", "h"];

/// Objective value assigned to parameters whose forward run fails.
pub const FAILURE_PENALTY: f64 = 1e6;

/// Density snapshots to fit.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityData {
    pub times: Vec<f64>,
    pub fields: Vec<ScalarField>,
}

impl DensityData {
    /// Kernel density estimates of agent positions, one per time.
    pub fn from_positions(times: &[f64], positions: &[Vec<[f64; 2]>], bw: Bandwidth, grid: Grid2D) -> Result<Self> {
        if times.len() != positions.len() {
            return Err(Error::Data(format!("{} times but {} position sets", times.len(), positions.len())));
        }
        let fields = positions.iter().map(|p| kde(p, bw, grid)).collect::<Result<_>>()?;
        Ok(Self { times: times.to_vec(), fields })
    }

    /// Densities of a macroscopic run.
    pub fn from_series(series: &SnapshotSeries) -> Self {
        Self { times: series.times.clone(), fields: series.states.iter().map(|s| s.rho.clone()).collect() }
    }
}

/// What the model is fitted to.
#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    /// Fixed density snapshots.
    Densities(DensityData),
    /// Agent positions, turned into densities with the bandwidth of the
    /// current `θ` at every evaluation.
    Positions { times: Vec<f64>, positions: Vec<Vec<[f64; 2]>> },
}

impl Observations {
    pub fn times(&self) -> &[f64] {
        match self {
            Self::Densities(d) => &d.times,
            Self::Positions { times, .. } => times,
        }
    }

    pub fn densities(&self, bw: Bandwidth, grid: Grid2D) -> Result<Cow<'_, DensityData>> {
        match self {
            Self::Densities(d) => Ok(Cow::Borrowed(d)),
            Self::Positions { times, positions } => {
                Ok(Cow::Owned(DensityData::from_positions(times, positions, bw, grid)?))
            }
        }
    }

    fn check(&self, grid: &Grid2D) -> Result<()> {
        match self {
            Self::Densities(d) => {
                if d.times.is_empty() || d.times.len() != d.fields.len() {
                    return Err(Error::Data("need at least one data snapshot with a time".into()));
                }
                if d.fields.iter().any(|f| f.grid() != grid) {
                    return Err(Error::GridMismatch);
                }
                if d.fields.iter().any(|f| f.l2_norm() == 0.0) {
                    return Err(Error::Data("data snapshot with zero norm".into()));
                }
            }
            Self::Positions { times, positions } => {
                if times.is_empty() || times.len() != positions.len() {
                    return Err(Error::Data("need at least one position set with a time".into()));
                }
                if positions.iter().any(|p| p.is_empty()) {
                    return Err(Error::Data("empty position set".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EstimationProblem {
    pub theta0: Theta,
    pub lower: Theta,
    pub upper: Theta,
    /// Regularisation weight `λ²`.
    pub lambda2: f64,
    pub data: Observations,
    /// Immune positions at `t = 0`; the initial density is their estimate
    /// with bandwidth `θ_h · r_imm`.
    pub initial_positions: Vec<[f64; 2]>,
    pub r_imm: f64,
    /// Everything not in `θ`. Snapshot times and horizon come from the data.
    pub forward: MacroConfig,
    pub tumors: TumorLayout,
    zeta: ScalarField,
    phi0: ScalarField,
}

impl EstimationProblem {
    /// Bounds `[0, 50 θ₀]` and `λ² = 10⁻⁶`.
    pub fn new(
        theta0: Theta,
        data: Observations,
        initial_positions: Vec<[f64; 2]>,
        r_imm: f64,
        mut forward: MacroConfig,
        tumors: TumorLayout,
    ) -> Result<Self> {
        let grid = forward.grid;
        data.check(&grid)?;
        if initial_positions.is_empty() {
            return Err(Error::Data("no initial positions".into()));
        }
        if theta0.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("theta0 components nonnegative (got {theta0:?})")));
        }
        forward.t_final = *data.times().last().unwrap();
        forward.snapshot_times = data.times().to_vec();
        forward.validate()?;
        tumors.validate(&grid)?;
        let zeta = tumors.density(grid)?;
        let phi0 = chi_convolution(&zeta, &tumors);
        Ok(Self {
            theta0,
            lower: [0.0; PARAMS],
            upper: theta0.map(|v| 50.0 * v),
            lambda2: 1e-6,
            data,
            initial_positions,
            r_imm,
            forward,
            tumors,
            zeta,
            phi0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for k in 0..PARAMS {
            let (l, u, t) = (self.lower[k], self.upper[k], self.theta0[k]);
            if !(l >= 0.0 && l <= u && (l..=u).contains(&t)) {
                return Err(Error::invalid(format!("bounds for {}: 0 <= lower <= theta0 <= upper", PARAM_NAMES[k])));
            }
        }
        if !(self.lambda2 >= 0.0) {
            return Err(Error::invalid("lambda2 >= 0"));
        }
        Ok(())
    }

    /// Components that are free to move.
    pub fn free(&self) -> Vec<usize> {
        (0..PARAMS).filter(|&k| self.upper[k] > self.lower[k]).collect()
    }

    pub fn config_for(&self, theta: &Theta) -> MacroConfig {
        let mut cfg = self.forward.clone();
        cfg.eta = theta[0];
        cfg.kernels.w_rep = theta[1];
        cfg.kernels.w_adh = theta[2];
        cfg.kernels.beta = theta[3];
        cfg.kernels.w_rep_tum = theta[4];
        cfg
    }

    pub fn initial_density(&self, theta: &Theta) -> Result<ScalarField> {
        kde(&self.initial_positions, Bandwidth::new(theta[5], self.r_imm)?, self.forward.grid)
    }

    /// Macroscopic run at `θ`; blow-up counts as failure.
    pub fn forward_run(&self, theta: &Theta) -> Result<SnapshotSeries> {
        let cfg = self.config_for(theta);
        let rho0 = self.initial_density(theta)?;
        let coupling = TumorCoupling { layout: &self.tumors, zeta: &self.zeta };
        let series = run_from(&cfg, ConservedState::at_rest(rho0), self.phi0.clone(), Some(coupling))?;
        if let Some(b) = series.diagnostics.blow_up {
            return Err(Error::invalid(format!("forward run blew up at t = {}", b.time)));
        }
        Ok(series)
    }

    /// Squared relative L² error per data snapshot.
    pub fn residuals(&self, theta: &Theta, series: &SnapshotSeries) -> Result<Vec<f64>> {
        let data = self.data.densities(Bandwidth::new(theta[5], self.r_imm)?, self.forward.grid)?;
        if series.states.len() != data.fields.len() {
            return Err(Error::Data("forward snapshots do not line up with the data".into()));
        }
        Ok(series
            .states
            .iter()
            .zip(&data.fields)
            .map(|(s, d)| {
                let diff: f64 = s.rho.values().iter().zip(d.values()).map(|(a, b)| (a - b) * (a - b)).sum();
                diff / d.values().iter().map(|v| v * v).sum::<f64>()
            })
            .collect())
    }

    /// Node-wise relative misfits, scaled so their squares sum to `J`.
    pub fn residual_vector(&self, theta: &Theta) -> Result<Vec<f64>> {
        let series = self.forward_run(theta)?;
        let data = self.data.densities(Bandwidth::new(theta[5], self.r_imm)?, self.forward.grid)?;
        if series.states.len() != data.fields.len() {
            return Err(Error::Data("forward snapshots do not line up with the data".into()));
        }
        let weight = 1.0 / (data.fields.len() as f64).sqrt();
        let mut r = Vec::with_capacity(data.fields.len() * self.forward.grid.len());
        for (s, d) in series.states.iter().zip(&data.fields) {
            let scale = weight / d.l2_norm();
            r.extend(s.rho.values().iter().zip(d.values()).map(|(a, b)| (a - b) * scale));
        }
        Ok(r)
    }

    /// `J(θ)`, or [`FAILURE_PENALTY`] when the forward run fails.
    pub fn objective(&self, theta: &Theta) -> f64 {
        match self.forward_run(theta).and_then(|s| self.residuals(theta, &s)) {
            Ok(r) => r.iter().sum::<f64>() / r.len() as f64,
            Err(_) => FAILURE_PENALTY,
        }
    }

    /// `K(θ) = J(θ) + λ² ‖θ − θ₀‖²`.
    pub fn regularized(&self, theta: &Theta) -> f64 {
        self.objective(theta) + self.penalty(theta)
    }

    fn penalty(&self, theta: &Theta) -> f64 {
        self.lambda2 * theta.iter().zip(&self.theta0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }
}

/// Trust-region settings; lengths are in units of `max(|θ₀ᵢ|, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustRegionOptions {
    pub initial_radius: f64,
    pub min_radius: f64,
    pub fd_step: f64,
    pub max_iterations: usize,
    /// Stop once `K` fell by less than this over `stall_window` iterations.
    pub stall_tolerance: f64,
    pub stall_window: usize,
    /// Fresh-model restarts allowed after the radius collapses.
    pub max_restarts: usize,
}

impl Default for TrustRegionOptions {
    fn default() -> Self {
        Self {
            initial_radius: 0.5,
            min_radius: 1e-8,
            fd_step: 1e-3,
            max_iterations: 200,
            stall_tolerance: 1e-8,
            stall_window: 3,
            max_restarts: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ZeroObjective,
    SmallRadius,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub theta0: Theta,
    pub theta_opt: Theta,
    /// `J(θ_opt)`.
    pub error: f64,
    /// `K(θ_opt)`.
    pub regularized: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// `K` after each iteration; non-increasing.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

struct Scaled<'a> {
    problem: &'a EstimationProblem,
    free: Vec<usize>,
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

/// Residual vector (when the forward run succeeded) and `K`.
struct Eval {
    r: Option<Vec<f64>>,
    k: f64,
}

/// Gradient of `K` and its Gauss–Newton curvature.
struct Linearisation {
    g: Vec<f64>,
    gn: Vec<Vec<f64>>,
}

impl Scaled<'_> {
    fn theta(&self, z: &[f64]) -> Theta {
        let mut t = self.problem.theta0;
        for (k, &i) in self.free.iter().enumerate() {
            t[i] = (z[k] * self.scale[k]).clamp(self.problem.lower[i], self.problem.upper[i]);
        }
        t
    }

    fn eval(&self, z: &[f64]) -> Eval {
        let theta = self.theta(z);
        match self.problem.residual_vector(&theta) {
            Ok(r) => {
                let k = dot(&r, &r) + self.problem.penalty(&theta);
                Eval { r: Some(r), k }
            }
            Err(_) => Eval { r: None, k: FAILURE_PENALTY },
        }
    }

    /// Finite-difference Jacobian of the residuals: central differences,
    /// one-sided against a bound or a failed run. Evaluations run in
    /// parallel.
    fn linearise(&self, z: &[f64], at: &Eval, h: f64) -> Linearisation {
        let n = z.len();
        let probes: Vec<(usize, f64)> = (0..n)
            .flat_map(|k| {
                let mut p = vec![];
                if z[k] + h <= self.upper[k] {
                    p.push((k, h));
                }
                if z[k] - h >= self.lower[k] {
                    p.push((k, -h));
                }
                p
            })
            .collect();
        let evals: Vec<Eval> = probes
            .par_iter()
            .map(|&(k, d)| {
                let mut y = z.to_vec();
                y[k] += d;
                self.eval(&y)
            })
            .collect();
        let Some(r0) = &at.r else {
            return Linearisation { g: vec![0.0; n], gn: vec![vec![0.0; n]; n] };
        };
        let columns: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let side = |positive: bool| {
                    probes
                        .iter()
                        .zip(&evals)
                        .find(|((i, d), e)| *i == k && (*d > 0.0) == positive && e.r.is_some())
                        .map(|(_, e)| e)
                };
                let one_sided = |e: &Eval, d: f64| -> Vec<f64> {
                    e.r.as_ref().unwrap().iter().zip(r0).map(|(a, b)| (a - b) / d).collect()
                };
                match (side(true), side(false)) {
                    (Some(p), Some(m)) => {
                        // adaptive time stepping leaves kinks in K; when
                        // the one-sided slopes disagree, trust the flatter
                        let (up, down) = ((p.k - at.k) / h, (at.k - m.k) / h);
                        if (up - down).abs() > 0.5 * (up.abs() + down.abs()) {
                            if up.abs() <= down.abs() {
                                one_sided(p, h)
                            } else {
                                one_sided(m, -h)
                            }
                        } else {
                            let (rp, rm) = (p.r.as_ref().unwrap(), m.r.as_ref().unwrap());
                            rp.iter().zip(rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
                        }
                    }
                    (Some(p), None) => one_sided(p, h),
                    (None, Some(m)) => one_sided(m, -h),
                    (None, None) => vec![0.0; r0.len()],
                }
            })
            .collect();
        let theta = self.theta(z);
        let lambda2 = self.problem.lambda2;
        let mut g = vec![0.0; n];
        let mut gn = vec![vec![0.0; n]; n];
        for a in 0..n {
            let i = self.free[a];
            g[a] = 2.0 * dot(&columns[a], r0) + 2.0 * lambda2 * self.scale[a] * (theta[i] - self.problem.theta0[i]);
            for b in 0..=a {
                let v = 2.0 * dot(&columns[a], &columns[b]);
                gn[a][b] = v;
                gn[b][a] = v;
            }
            gn[a][a] += 2.0 * lambda2 * self.scale[a] * self.scale[a];
        }
        Linearisation { g, gn }
    }
}

/// Bound-constrained trust-region minimisation of `K`.
///
/// The quadratic model combines the Gauss–Newton matrix of the
/// finite-difference Jacobian with a damped SR1 correction for the
/// remaining curvature. The trust region is a box in scaled variables, so
/// each subproblem is a box-constrained quadratic, solved exactly by
/// visiting every face.
pub fn estimate(problem: &EstimationProblem, opts: &TrustRegionOptions) -> Result<CalibrationResult> {
    problem.validate()?;
    let free = problem.free();
    let scale: Vec<f64> = free.iter().map(|&i| problem.theta0[i].abs().max(1.0)).collect();
    let sp = Scaled {
        problem,
        lower: free.iter().zip(&scale).map(|(&i, s)| problem.lower[i] / s).collect(),
        upper: free.iter().zip(&scale).map(|(&i, s)| problem.upper[i] / s).collect(),
        free,
        scale,
    };
    let n = sp.free.len();
    let mut z: Vec<f64> = sp.free.iter().zip(&sp.scale).map(|(&i, s)| problem.theta0[i] / s).collect();
    let mut current = sp.eval(&z);
    let mut evaluations = 1;
    let mut trace = vec![];
    let mut radius = opts.initial_radius;
    let mut lin = sp.linearise(&z, &current, opts.fd_step);
    evaluations += 2 * n;
    let mut correction = vec![vec![0.0; n]; n];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut restarts = 0;
    let mut pass_start = current.k;

    while iterations < opts.max_iterations {
        let fz = current.k;
        if fz == 0.0 || n == 0 || current.r.is_none() {
            termination = Termination::ZeroObjective;
            break;
        }
        if radius < opts.min_radius {
            // a kink can trap the model; retry from a fresh one while
            // that still pays off
            if restarts < opts.max_restarts && fz < pass_start - opts.stall_tolerance {
                restarts += 1;
                pass_start = fz;
                radius = opts.initial_radius;
                correction = vec![vec![0.0; n]; n];
                continue;
            }
            termination = Termination::SmallRadius;
            break;
        }
        iterations += 1;
        let b = add(&lin.gn, &correction);
        let lo: Vec<f64> = (0..n).map(|k| (sp.lower[k] - z[k]).max(-radius)).collect();
        let hi: Vec<f64> = (0..n).map(|k| (sp.upper[k] - z[k]).min(radius)).collect();
        let s = box_qp(&b, &lin.g, &lo, &hi);
        let predicted = -(dot(&lin.g, &s) + 0.5 * dot(&s, &matvec(&b, &s)));
        let step_len = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(predicted > 0.0) || step_len == 0.0 {
            radius *= 0.5;
            trace.push(fz);
            continue;
        }
        let trial_z: Vec<f64> = (0..n).map(|k| (z[k] + s[k]).clamp(sp.lower[k], sp.upper[k])).collect();
        let trial = sp.eval(&trial_z);
        evaluations += 1;
        let ratio = (fz - trial.k) / predicted;
        if trial.k < fz {
            let next = sp.linearise(&trial_z, &trial, opts.fd_step);
            evaluations += 2 * n;
            // structured secant: (GN₊ + A₊) s = Δg
            let gn_s = matvec(&next.gn, &s);
            let y: Vec<f64> = (0..n).map(|k| next.g[k] - lin.g[k] - gn_s[k]).collect();
            sr1_update(&mut correction, &s, &y);
            z = trial_z;
            current = trial;
            lin = next;
        }
        if ratio < 0.25 {
            radius *= 0.5;
        } else if ratio > 0.75 && step_len >= 0.99 * radius {
            radius *= 2.0;
        }
        trace.push(current.k);
        let w = opts.stall_window;
        if trace.len() > w && trace[trace.len() - 1 - w] - current.k < opts.stall_tolerance && ratio >= 0.25 {
            termination = Termination::Stalled;
            break;
        }
    }
    let theta_opt = sp.theta(&z);
    let (error, residuals) = match problem.forward_run(&theta_opt).and_then(|s| problem.residuals(&theta_opt, &s)) {
        Ok(r) => (r.iter().sum::<f64>() / r.len() as f64, r),
        Err(_) => (FAILURE_PENALTY, vec![]),
    };
    Ok(CalibrationResult {
        theta0: problem.theta0,
        theta_opt,
        error,
        regularized: current.k,
        residuals,
        iterations,
        converged: termination != Termination::MaxIterations,
        termination,
        trace,
        evaluations,
    })
}

fn add(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Symmetric rank-one update, skipped when the denominator is tiny.
fn sr1_update(b: &mut [Vec<f64>], s: &[f64], y: &[f64]) {
    let bs = matvec(b, s);
    let r: Vec<f64> = y.iter().zip(&bs).map(|(a, c)| a - c).collect();
    let denom = dot(&r, s);
    let rn = dot(&r, &r).sqrt();
    let sn = dot(s, s).sqrt();
    if denom.abs() <= 1e-8 * rn * sn || denom == 0.0 {
        return;
    }
    for i in 0..b.len() {
        for j in 0..b.len() {
            b[i][j] += r[i] * r[j] / denom;
        }
    }
}

/// Global minimiser of `gᵀs + ½ sᵀBs` over `lo ≤ s ≤ hi`.
///
/// Each variable sits at its lower bound, its upper bound or is free; for
/// every such face the stationary point of the reduced problem is a
/// candidate when it is feasible. Vertices are always candidates, so the
/// minimum is found even when `B` is indefinite. Cost is `3ⁿ` small
/// solves, fine for the handful of parameters here.
pub(crate) fn box_qp(b: &[Vec<f64>], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = g.len();
    let model = |s: &[f64]| dot(g, s) + 0.5 * dot(s, &matvec(b, s));
    let mut best = vec![0.0; n];
    for k in 0..n {
        best[k] = 0.0f64.clamp(lo[k], hi[k]);
    }
    let mut best_val = model(&best);
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        // 0: lower, 1: upper, 2: free
        let mut c = code;
        let mut state = vec![0u8; n];
        for st in state.iter_mut() {
            *st = (c % 3) as u8;
            c /= 3;
        }
        let mut s: Vec<f64> = (0..n).map(|k| if state[k] == 1 { hi[k] } else { lo[k] }).collect();
        let idx: Vec<usize> = (0..n).filter(|&k| state[k] == 2).collect();
        if !idx.is_empty() {
            // B_FF s_F = −(g_F + B_FA s_A)
            let m = idx.len();
            let mut a = vec![vec![0.0; m + 1]; m];
            for (r, &i) in idx.iter().enumerate() {
                for (cidx, &j) in idx.iter().enumerate() {
                    a[r][cidx] = b[i][j];
                }
                let mut rhs = -g[i];
                for k in 0..n {
                    if state[k] != 2 {
                        rhs -= b[i][k] * s[k];
                    }
                }
                a[r][m] = rhs;
            }
            let Some(x) = solve(a) else { continue };
            let mut ok = true;
            for (r, &i) in idx.iter().enumerate() {
                if x[r] < lo[i] - 1e-14 || x[r] > hi[i] + 1e-14 {
                    ok = false;
                    break;
                }
                s[i] = x[r].clamp(lo[i], hi[i]);
            }
            if !ok {
                continue;
            }
            // an indefinite reduced problem has no interior minimum
            let sub: Vec<Vec<f64>> = idx.iter().map(|&i| idx.iter().map(|&j| b[i][j]).collect()).collect();
            if !positive_definite(&sub) {
                continue;
            }
        }
        let v = model(&s);
        if v < best_val {
            best_val = v;
            best = s;
        }
    }
    best
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let m = a.len();
    let norm = a.iter().flat_map(|r| r[..m].iter()).fold(0.0f64, |x, v| x.max(v.abs()));
    for col in 0..m {
        let piv = (col..m).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() <= 1e-12 * norm.max(f64::MIN_POSITIVE) {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..m {
            let f = a[r][col] / a[col][col];
            for c in col..=m {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; m];
    for r in (0..m).rev() {
        let s: f64 = (r + 1..m).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][m] - s) / a[r][r];
    }
    Some(x)
}

fn positive_definite(m: &[Vec<f64>]) -> bool {
    // Cholesky without storing the factor beyond what is needed
    let n = m.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = m[i][i] - s;
                if d <= 0.0 {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (m[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

/// One row of the sensitivity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityEntry {
    pub parameter: String,
    pub value: f64,
    /// `None` when the component is zero and no relative step exists.
    pub plus: Option<f64>,
    pub minus: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityTable {
    pub theta: Theta,
    pub delta_frac: f64,
    /// Maximum final density at `θ`.
    pub reference_output: f64,
    pub entries: Vec<SensitivityEntry>,
}

impl SensitivityTable {
    /// Larger of the two one-sided values.
    pub fn score(&self, parameter: &str) -> Option<f64> {
        let e = self.entries.iter().find(|e| e.parameter == parameter)?;
        match (e.plus, e.minus) {
            (Some(p), Some(m)) => Some(p.max(m)),
            (p, m) => p.or(m),
        }
    }
}

/// `S = |Y(θ ± δ eᵢ) − Y(θ)| / Y(θ) · θᵢ / δ` with `δ = delta_frac · θᵢ`
/// and `Y` the maximum density at the final time.
pub fn sensitivity(problem: &EstimationProblem, theta: &Theta, delta_frac: f64) -> Result<SensitivityTable> {
    if !(delta_frac > 0.0) {
        return Err(Error::invalid(format!("delta_frac > 0 (got {delta_frac})")));
    }
    let output = |t: &Theta| -> Result<f64> {
        let s = problem.forward_run(t)?;
        s.states.last().map(|w| w.rho.max()).ok_or_else(|| Error::Data("forward run produced no snapshots".into()))
    };
    let y0 = output(theta)?;
    let jobs: Vec<(usize, f64)> =
        (0..PARAMS).filter(|&k| theta[k] != 0.0).flat_map(|k| [(k, 1.0), (k, -1.0)]).collect();
    let outs: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(k, sign)| {
            let mut t = *theta;
            t[k] += sign * delta_frac * theta[k];
            output(&t)
        })
        .collect();
    let entries = (0..PARAMS)
        .map(|k| {
            let mut e = SensitivityEntry {
                parameter: PARAM_NAMES[k].into(),
                value: theta[k],
                plus: None,
                minus: None,
                failure: None,
            };
            for ((i, sign), r) in jobs.iter().zip(&outs) {
                if *i != k {
                    continue;
                }
                match r {
                    Ok(y) => {
                        let s = (y - y0).abs() / y0 / delta_frac;
                        if *sign > 0.0 {
                            e.plus = Some(s);
                        } else {
                            e.minus = Some(s);
                        }
                    }
                    Err(err) => e.failure = Some(err.to_string()),
                }
            }
            e
        })
        .collect();
    Ok(SensitivityTable { theta: *theta, delta_frac, reference_output: y0, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::InteractionSet;

    fn small_problem() -> (EstimationProblem, Theta) {
        let grid = Grid2D::new(1.0, 21, 21).unwrap();
        let forward = MacroConfig {
            grid,
            alpha: 100.0,
            interactions: InteractionSet::ALL,
            blow_up_factor: 1e3,
            chemo: crate::parabolic::ChemoParams {
                d: 45.0,
                kappa: 0.2,
                theta: 0.5,
                source: crate::parabolic::SourceMode::TumorConvolution,
            },
            ..Default::default()
        };
        let positions: Vec<[f64; 2]> =
            (0..20).map(|k| [0.1 + 0.8 * ((k * 7) % 20) as f64 / 20.0, 0.1 + 0.04 * k as f64]).collect();
        let theta: Theta = [6.0, 500.0, 4.0, 2000.0, 0.0, 4.0];
        let placeholder = Observations::Densities(DensityData {
            times: vec![0.1, 0.2],
            fields: vec![ScalarField::constant(grid, 1.0); 2],
        });
        let mut p =
            EstimationProblem::new(theta, placeholder, positions, 0.02, forward, TumorLayout::default()).unwrap();
        p.data = Observations::Densities(DensityData::from_series(&p.forward_run(&theta).unwrap()));
        (p, theta)
    }

    #[test]
    fn objective_vanishes_on_own_data_and_doubles_to_one() {
        let (mut p, theta) = small_problem();
        assert_eq!(p.objective(&theta), 0.0);
        assert_eq!(p.regularized(&theta), p.objective(&theta));
        let Observations::Densities(d) = &mut p.data else { unreachable!() };
        for f in &mut d.fields {
            f.scale(0.5);
        }
        assert!((p.objective(&theta) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn regularisation_adds_weighted_distance() {
        let (mut p, theta) = small_problem();
        p.lambda2 = 1e-6;
        let mut t = theta;
        t[1] += 6.0;
        t[3] += 8.0;
        assert!((p.regularized(&t) - p.objective(&t) - 1e-4).abs() < 1e-15);
        p.lambda2 = 0.0;
        assert_eq!(p.regularized(&t), p.objective(&t));
    }

    #[test]
    fn failed_forward_run_is_penalised() {
        let (p, mut theta) = small_problem();
        theta[5] = 0.0;
        assert_eq!(p.objective(&theta), FAILURE_PENALTY);
    }

    #[test]
    fn starting_at_the_minimum_stays_there() {
        let (p, theta) = small_problem();
        let r = estimate(&p, &TrustRegionOptions::default()).unwrap();
        assert_eq!(r.theta_opt, theta);
        assert_eq!(r.error, 0.0);
        assert_eq!(r.termination, Termination::ZeroObjective);
    }

    #[test]
    fn position_data_follow_the_bandwidth() {
        let (p, theta) = small_problem();
        let times = vec![0.1, 0.2];
        let positions = vec![p.initial_positions.clone(); 2];
        let obs = Observations::Positions { times, positions };
        let g = p.forward.grid;
        let narrow = obs.densities(Bandwidth::new(1.0, 0.02).unwrap(), g).unwrap();
        let wide = obs.densities(Bandwidth::new(3.0, 0.02).unwrap(), g).unwrap();
        assert!(narrow.fields[0].max() > wide.fields[0].max());
        let direct = kde(&p.initial_positions, Bandwidth::new(theta[5], 0.02).unwrap(), g).unwrap();
        let via = obs.densities(Bandwidth::new(theta[5], 0.02).unwrap(), g).unwrap();
        assert_eq!(via.fields[1], direct);
    }

    #[test]
    fn zero_components_are_frozen() {
        let (p, _) = small_problem();
        assert_eq!(p.free(), vec![0, 1, 2, 3, 5]);
    }

    #[test]
    fn sensitivity_skips_zero_components() {
        let (p, theta) = small_problem();
        let t = sensitivity(&p, &theta, 0.05).unwrap();
        let tum = &t.entries[4];
        assert!(tum.plus.is_none() && tum.minus.is_none());
        assert!(t.score("eta").unwrap() > 0.0);
    }

    #[test]
    fn box_qp_convex_interior_and_clipped() {
        let b = vec![vec![2.0, 0.0], vec![0.0, 4.0]];
        let s = box_qp(&b, &[-2.0, 4.0], &[-5.0, -5.0], &[5.0, 5.0]);
        assert!((s[0] - 1.0).abs() < 1e-14 && (s[1] + 1.0).abs() < 1e-14);
        let s = box_qp(&b, &[-2.0, 4.0], &[-0.5, -0.5], &[0.5, 0.5]);
        assert_eq!(s, vec![0.5, -0.5]);
    }

    #[test]
    fn box_qp_handles_indefinite_models() {
        let b = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        let s = box_qp(&b, &[0.1, 0.0], &[-1.0, -1.0], &[1.0, 1.0]);
        assert_eq!(s, vec![-1.0, 0.0]);
    }

    #[test]
    fn sr1_reproduces_quadratic_curvature() {
        let mut b = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = [[3.0, 1.0], [1.0, 2.0]];
        for s in [[1.0, 0.0], [0.0, 1.0]] {
            let y = [a[0][0] * s[0] + a[0][1] * s[1], a[1][0] * s[0] + a[1][1] * s[1]];
            sr1_update(&mut b, &s, &y);
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!((b[i][j] - a[i][j]).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn box_qp_beats_random_feasible_points(
                d in prop::collection::vec(-3.0f64..3.0, 3),
                off in prop::collection::vec(-1.0f64..1.0, 3),
                g in prop::collection::vec(-2.0f64..2.0, 3),
                probe in prop::collection::vec(0.0f64..1.0, 3),
            ) {
                let b = vec![
                    vec![d[0], off[0], off[1]],
                    vec![off[0], d[1], off[2]],
                    vec![off[1], off[2], d[2]],
                ];
                let (lo, hi) = ([-1.0, -0.5, -2.0], [0.5, 1.0, 0.3]);
                let s = box_qp(&b, &g, &lo, &hi);
                let m = |x: &[f64]| dot(&g, x) + 0.5 * dot(x, &matvec(&b, x));
                let x: Vec<f64> = (0..3).map(|k| lo[k] + probe[k] * (hi[k] - lo[k])).collect();
                for k in 0..3 {
                    prop_assert!(s[k] >= lo[k] && s[k] <= hi[k]);
                }
                prop_assert!(m(&s) <= m(&x) + 1e-12);
            }
        }
    }
}
