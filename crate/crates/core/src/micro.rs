//! Hybrid agent model: immune cells as second-order particles driven by
//! pairwise interactions, tumour repulsion and chemotaxis, coupled to the
//! chemoattractant equation on the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient_neumann, Grid2D, ScalarField, VectorField};
use crate::kernels::{gamma1, gamma2, gamma3, KernelParams};
use crate::models::TumorLayout;
use crate::parabolic::{ChemoParams, SourceMode, ThetaSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroConfig {
    pub grid: Grid2D,
    pub kernels: KernelParams,
    pub chemo: ChemoParams,
    pub tumors: TumorLayout,
    pub eta: f64,
    pub alpha: f64,
    pub agents: usize,
    /// Immune cell radius.
    pub r_imm: f64,
    pub dt: f64,
    pub t_final: f64,
    pub seed: u64,
    pub snapshot_times: Vec<f64>,
}

impl Default for MicroConfig {
    fn default() -> Self {
        Self {
            grid: Grid2D::default(),
            kernels: KernelParams::default(),
            chemo: ChemoParams { d: 45.0, kappa: 0.2, theta: 0.5, source: SourceMode::TumorConvolution },
            tumors: TumorLayout::default(),
            eta: 6.0,
            alpha: 100.0,
            agents: 80,
            r_imm: 0.02,
            dt: 1e-3,
            t_final: 1.0,
            seed: 0,
            snapshot_times: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        }
    }
}

impl MicroConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.require_stencil()?;
        self.kernels.validate()?;
        self.chemo.validate()?;
        self.tumors.validate(&self.grid)?;
        if self.agents == 0 {
            return Err(Error::invalid("agents >= 1"));
        }
        if !(self.dt > 0.0) || !(self.t_final > 0.0) {
            return Err(Error::invalid(format!("dt > 0 and T > 0 (got dt = {}, T = {})", self.dt, self.t_final)));
        }
        if !(self.eta >= 0.0 && self.alpha >= 0.0) {
            return Err(Error::invalid("eta >= 0 and alpha >= 0"));
        }
        if !(self.r_imm > 0.0) {
            return Err(Error::invalid(format!("R_imm > 0 (got {})", self.r_imm)));
        }
        for w in self.snapshot_times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::invalid("snapshot_times strictly increasing"));
            }
        }
        if let Some(&t) = self.snapshot_times.iter().find(|&&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(Error::invalid(format!("snapshot_times within [0, T] (got {t})")));
        }
        Ok(())
    }
}

/// Immune cell positions and velocities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEnsemble {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl AgentEnsemble {
    /// Uniform positions in the domain, at rest.
    pub fn uniform(count: usize, length: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..count).map(|_| [rng.gen::<f64>() * length, rng.gen::<f64>() * length]).collect();
        Self { positions, velocities: vec![[0.0; 2]; count] }
    }

    pub fn at_rest(positions: Vec<[f64; 2]>) -> Self {
        let n = positions.len();
        Self { positions, velocities: vec![[0.0; 2]; n] }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Total force on agent `i` including the damping `−α vᵢ`.
pub fn micro_force(i: usize, ens: &AgentEnsemble, grad_phi: [f64; 2], cfg: &MicroConfig) -> [f64; 2] {
    let [fx, fy] = undamped_force(i, ens, grad_phi, cfg);
    let v = ens.velocities[i];
    [fx - cfg.alpha * v[0], fy - cfg.alpha * v[1]]
}

fn undamped_force(i: usize, ens: &AgentEnsemble, grad_phi: [f64; 2], cfg: &MicroConfig) -> [f64; 2] {
    let p = &cfg.kernels;
    let (xi, vi) = (ens.positions[i], ens.velocities[i]);
    let mut pair = [0.0, 0.0];
    for (j, (xj, vj)) in ens.positions.iter().zip(&ens.velocities).enumerate() {
        if j == i {
            continue;
        }
        let dx = [xi[0] - xj[0], xi[1] - xj[1]];
        let a = gamma1([vj[0] - vi[0], vj[1] - vi[1]], dx, p);
        let b = gamma2(dx, p);
        pair[0] += a[0] + b[0];
        pair[1] += a[1] + b[1];
    }
    let inv_n = 1.0 / ens.len() as f64;
    let mut f = [pair[0] * inv_n, pair[1] * inv_n];
    for y in &cfg.tumors.centers {
        let c = gamma3([xi[0] - y[0], xi[1] - y[1]], p);
        f[0] += c[0];
        f[1] += c[1];
    }
    f[0] += cfg.eta * grad_phi[0];
    f[1] += cfg.eta * grad_phi[1];
    f
}

/// Mirrors a coordinate into `[0, length]`; returns whether it reflected.
fn reflect(x: &mut f64, v: &mut f64, length: f64) -> bool {
    if *x < 0.0 {
        *x = -*x;
        *v = -*v;
        true
    } else if *x > length {
        *x = 2.0 * length - *x;
        *v = -*v;
        true
    } else {
        false
    }
}

/// Semi-implicit Euler step: forces at the current state, damping
/// implicit, then elastic reflection at the walls.
pub fn micro_step(ens: &AgentEnsemble, grad_phi: &VectorField, cfg: &MicroConfig) -> Result<AgentEnsemble> {
    let dt = cfg.dt;
    let length = cfg.grid.length;
    let mut next = ens.clone();
    for i in 0..ens.len() {
        let x = ens.positions[i];
        let f = undamped_force(i, ens, grad_phi.interpolate(x[0], x[1]), cfg);
        let v = ens.velocities[i];
        let damp = 1.0 + cfg.alpha * dt;
        let mut nv = [(v[0] + dt * f[0]) / damp, (v[1] + dt * f[1]) / damp];
        let mut nx = [x[0] + dt * nv[0], x[1] + dt * nv[1]];
        reflect(&mut nx[0], &mut nv[0], length);
        reflect(&mut nx[1], &mut nv[1], length);
        if !(0.0..=length).contains(&nx[0]) || !(0.0..=length).contains(&nx[1]) {
            return Err(Error::AgentEscape { agent: i, x: nx[0], y: nx[1] });
        }
        next.positions[i] = nx;
        next.velocities[i] = nv;
    }
    Ok(next)
}

/// Positions saved at the snapshot times, with the matching fields.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroRun {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<[f64; 2]>>,
    pub phis: Vec<ScalarField>,
    pub final_state: AgentEnsemble,
}

/// Runs from uniformly drawn positions at rest.
pub fn run_micro(cfg: &MicroConfig) -> Result<MicroRun> {
    cfg.validate()?;
    run_micro_from(cfg, AgentEnsemble::uniform(cfg.agents, cfg.grid.length, cfg.seed))
}

/// Alternates agent steps with θ-steps of the chemoattractant, whose
/// source is the tumour indicator sum (also its initial value).
pub fn run_micro_from(cfg: &MicroConfig, initial: AgentEnsemble) -> Result<MicroRun> {
    cfg.validate()?;
    if initial.is_empty() {
        return Err(Error::invalid("agents >= 1"));
    }
    let g = cfg.grid;
    let source = cfg.tumors.chi_sum(g);
    let solver = ThetaSolver::new(g)?;
    let mut phi = source.clone();
    let mut ens = initial;
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let mut run = MicroRun { times: vec![], positions: vec![], phis: vec![], final_state: ens.clone() };
    let mut pending = cfg.snapshot_times.iter().copied().peekable();
    for n in 0..=steps {
        let t = n as f64 * cfg.dt;
        while let Some(&ts) = pending.peek() {
            if ts <= t + 0.5 * cfg.dt {
                run.times.push(t);
                run.positions.push(ens.positions.clone());
                run.phis.push(phi.clone());
                pending.next();
            } else {
                break;
            }
        }
        if n == steps {
            break;
        }
        let grad = gradient_neumann(&phi)?;
        ens = micro_step(&ens, &grad, cfg)?;
        phi = solver.step(&phi, &source, &source, cfg.dt, &cfg.chemo)?;
    }
    run.final_state = ens;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> MicroConfig {
        MicroConfig {
            kernels: KernelParams { beta: 0.0, w_rep: 0.0, w_adh: 0.0, w_rep_tum: 0.0, ..Default::default() },
            tumors: TumorLayout { centers: vec![], ..Default::default() },
            eta: 0.0,
            alpha: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn lone_agent_feels_nothing() {
        let ens = AgentEnsemble::at_rest(vec![[0.4, 0.4]]);
        assert_eq!(micro_force(0, &ens, [0.0, 0.0], &quiet()), [0.0, 0.0]);
    }

    #[test]
    fn agents_at_repulsion_radius_with_equal_velocity() {
        let cfg = MicroConfig {
            eta: 0.0,
            alpha: 0.0,
            tumors: TumorLayout { centers: vec![], ..Default::default() },
            ..Default::default()
        };
        let ens = AgentEnsemble { positions: vec![[0.5, 0.5], [0.54, 0.5]], velocities: vec![[0.3, 0.1]; 2] };
        for i in 0..2 {
            let f = micro_force(i, &ens, [0.0, 0.0], &cfg);
            assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
        }
    }

    #[test]
    fn close_pair_is_pushed_apart() {
        let cfg = MicroConfig {
            kernels: KernelParams { beta: 0.0, ..Default::default() },
            tumors: TumorLayout { centers: vec![], ..Default::default() },
            eta: 0.0,
            alpha: 0.0,
            ..Default::default()
        };
        let ens = AgentEnsemble::at_rest(vec![[0.5, 0.5], [0.52, 0.5]]);
        let f0 = micro_force(0, &ens, [0.0, 0.0], &cfg);
        let f1 = micro_force(1, &ens, [0.0, 0.0], &cfg);
        assert!((f0[0] + 6250.0).abs() < 1e-6 && f0[1].abs() < 1e-12);
        assert!((f1[0] - 6250.0).abs() < 1e-6);
    }

    #[test]
    fn free_streaming_and_damping() {
        let g = Grid2D::default();
        let zero = VectorField::zeros(g);
        let ens = AgentEnsemble { positions: vec![[0.3, 0.3]], velocities: vec![[1.0, -2.0]] };
        let next = micro_step(&ens, &zero, &quiet()).unwrap();
        assert_eq!(next.positions[0], [0.3 + 1e-3, 0.3 - 2e-3]);
        let damped = MicroConfig { alpha: 100.0, dt: 0.01, ..quiet() };
        let next = micro_step(&ens, &zero, &damped).unwrap();
        assert_eq!(next.velocities[0], [0.5, -1.0]);
    }

    #[test]
    fn walls_reflect_agents() {
        let g = Grid2D::default();
        let zero = VectorField::zeros(g);
        let cfg = MicroConfig { dt: 0.1, ..quiet() };
        let ens = AgentEnsemble { positions: vec![[0.01, 0.99]], velocities: vec![[-0.3, 0.4]] };
        let next = micro_step(&ens, &zero, &cfg).unwrap();
        assert!((next.positions[0][0] - 0.02).abs() < 1e-12 && (next.positions[0][1] - 0.97).abs() < 1e-12);
        assert_eq!(next.velocities[0], [0.3, -0.4]);
    }

    #[test]
    fn idle_agents_never_move() {
        let cfg = MicroConfig { t_final: 0.05, snapshot_times: vec![0.0, 0.05], ..quiet() };
        let run = run_micro(&cfg).unwrap();
        assert_eq!(run.positions[0], run.positions[1]);
    }

    #[test]
    fn agent_approaches_a_tumour() {
        let cfg = MicroConfig {
            kernels: KernelParams { beta: 0.0, w_rep: 0.0, w_adh: 0.0, w_rep_tum: 850.0, ..Default::default() },
            tumors: TumorLayout { centers: vec![[0.5, 0.5]], ..Default::default() },
            // Crank–Nicolson rings on the sharp indicator at this stiffness
            chemo: ChemoParams { theta: 1.0, ..MicroConfig::default().chemo },
            eta: 300.0,
            t_final: 0.3,
            snapshot_times: vec![],
            ..Default::default()
        };
        let g = cfg.grid;
        let solver = ThetaSolver::new(g).unwrap();
        let source = cfg.tumors.chi_sum(g);
        let mut phi = source.clone();
        let mut ens = AgentEnsemble::at_rest(vec![[0.66, 0.5]]);
        let dist = |e: &AgentEnsemble| (e.positions[0][0] - 0.5).hypot(e.positions[0][1] - 0.5);
        let mut d = dist(&ens);
        let mut reached = false;
        for _ in 0..1000 {
            ens = micro_step(&ens, &gradient_neumann(&phi).unwrap(), &cfg).unwrap();
            phi = solver.step(&phi, &source, &source, cfg.dt, &cfg.chemo).unwrap();
            let nd = dist(&ens);
            if d < cfg.kernels.r_rep_tum {
                reached = true;
                break;
            }
            assert!(nd <= d + 1e-15, "distance grew from {d} to {nd}");
            d = nd;
        }
        assert!(reached, "stalled at {d}");
    }

    #[test]
    fn kinetic_energy_decays_under_damping() {
        let cfg = MicroConfig { alpha: 5.0, ..quiet() };
        let zero = VectorField::zeros(cfg.grid);
        let mut ens =
            AgentEnsemble { positions: vec![[0.2, 0.2], [0.7, 0.6]], velocities: vec![[1.0, 0.5], [-0.2, 0.9]] };
        let energy = |e: &AgentEnsemble| e.velocities.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>();
        let mut last = energy(&ens);
        for _ in 0..50 {
            ens = micro_step(&ens, &zero, &cfg).unwrap();
            let e = energy(&ens);
            assert!(e < last);
            last = e;
        }
    }

    #[test]
    fn permuting_agents_permutes_trajectories() {
        let cfg = MicroConfig { t_final: 0.05, snapshot_times: vec![0.05], ..Default::default() };
        let ens = AgentEnsemble::uniform(12, 1.0, 3);
        let mut rev = ens.clone();
        rev.positions.reverse();
        rev.velocities.reverse();
        let a = run_micro_from(&cfg, ens).unwrap();
        let b = run_micro_from(&cfg, rev).unwrap();
        for (p, q) in a.positions[0].iter().zip(b.positions[0].iter().rev()) {
            assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn tumour_repulsion_keeps_agents_off_tumours() {
        let base = MicroConfig { t_final: 0.5, snapshot_times: vec![0.5], seed: 4, ..Default::default() };
        let min_gap = |cfg: &MicroConfig| {
            let run = run_micro(cfg).unwrap();
            run.final_state
                .positions
                .iter()
                .flat_map(|p| cfg.tumors.centers.iter().map(move |c| (p[0] - c[0]).hypot(p[1] - c[1])))
                .fold(f64::INFINITY, f64::min)
        };
        let repelled = MicroConfig { kernels: KernelParams { w_rep_tum: 850.0, ..base.kernels }, ..base.clone() };
        let (free, held) = (min_gap(&base), min_gap(&repelled));
        assert!(held > 0.02, "{held}");
        assert!(held > free, "{held} vs {free}");
    }
}
