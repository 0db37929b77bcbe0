//! The subcommands. Each reads and checks all inputs and finishes its
//! computation before the output directory is created, so failures leave
//! no partial outputs.

use std::path::{Path, PathBuf};

use cellflow::estimation::{
    estimate, sensitivity, DensityData, EstimationProblem, Observations, Theta, PARAMS, PARAM_NAMES,
};
use cellflow::io::{
    read_snapshot, read_trajectories, snapshot_file_name, write_snapshot, write_trajectories, write_tumors,
    Trajectories,
};
use cellflow::kde::{kde, Bandwidth};
use cellflow::micro::{run_micro, AgentEnsemble, MicroRun};
use cellflow::models::{chi_convolution, run_from, run_macro, SnapshotSeries, TumorCoupling};
use cellflow::{ConservedState, ScalarField};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cli::{EstimateArgs, Overrides, RunArgs, SensitivityArgs};
use crate::config::{parse_config, EstimationConfig, RunConfig, TwoPopConfig};
use crate::error::CliError;
use crate::manifest::{input_file, start_clock, InputFile, OutputDir, RunManifest, SnapshotEntry};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    BlowUp,
}

impl Outcome {
    fn status(self) -> &'static str {
        match self {
            Outcome::Completed => "completed",
            Outcome::BlowUp => "blow_up",
        }
    }
}

fn load(config: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(config)?;
    overrides.apply(&mut cfg)?;
    Ok(cfg)
}

fn run_two_pop(c: &TwoPopConfig) -> Result<SnapshotSeries, CliError> {
    let grid = c.model.grid;
    let zeta = c.tumors.density(grid)?;
    let rho0 = match &c.agents {
        Some(a) => {
            let positions = AgentEnsemble::uniform(a.count, grid.length, c.model.seed).positions;
            kde(&positions, Bandwidth::new(a.h, a.r_imm)?, grid)?
        }
        None => cellflow::models::init_density_bumps(c.model.initial.count, c.model.initial.sigma, c.model.seed, grid)?,
    };
    let phi0 = chi_convolution(&zeta, &c.tumors);
    let coupling = TumorCoupling { layout: &c.tumors, zeta: &zeta };
    Ok(run_from(&c.model, ConservedState::at_rest(rho0), phi0, Some(coupling))?)
}

/// Writes the requested fields of each snapshot as `{field}_{index}.csv`.
fn write_series(
    out: &mut OutputDir,
    series: &SnapshotSeries,
    fields: &[&str],
    dir: &str,
) -> Result<Vec<SnapshotEntry>, CliError> {
    let mut entries = Vec::new();
    for (k, (t, state)) in series.times.iter().zip(&series.states).enumerate() {
        let mut files = Vec::new();
        for &name in fields {
            let field: &ScalarField = match name {
                "rho" => &state.rho,
                "mx" => &state.m1,
                "my" => &state.m2,
                "phi" => &series.phis[k],
                _ => unreachable!("known field names"),
            };
            let rel = format!("{dir}{}", snapshot_file_name(name, k));
            let path = out.file(&rel)?;
            write_snapshot(&path, *t, field)?;
            files.push(rel);
        }
        entries.push(SnapshotEntry { index: k, time: *t, files });
    }
    Ok(entries)
}

fn macro_outcome(series: &SnapshotSeries) -> Outcome {
    if series.blew_up() {
        Outcome::BlowUp
    } else {
        Outcome::Completed
    }
}

fn micro_diagnostics(run: &MicroRun, dt: f64) -> serde_json::Value {
    let first = &run.positions[0];
    let last = run.positions.last().expect("at least one snapshot");
    let mean_disp =
        first.iter().zip(last).map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])).sum::<f64>() / first.len() as f64;
    json!({
        "agents": first.len(),
        "dt": dt,
        "mean_displacement": mean_disp,
    })
}

fn trajectories_of(run: &MicroRun) -> Trajectories {
    Trajectories { times: run.times.clone(), positions: run.positions.clone() }
}

pub fn simulate(args: &RunArgs) -> Result<(RunManifest, Outcome), CliError> {
    let started = start_clock();
    let cfg = load(&args.config, &args.overrides)?;
    match &cfg {
        RunConfig::Macro(c) => {
            let series = run_macro(c)?;
            let mut out = OutputDir::create(&args.out, started)?;
            let snaps = write_series(&mut out, &series, &["rho", "mx", "my", "phi"], "")?;
            let outcome = macro_outcome(&series);
            let diag = serde_json::to_value(&series.diagnostics).expect("serializable");
            Ok((out.finish("simulate", &cfg, vec![], outcome.status(), snaps, diag)?, outcome))
        }
        RunConfig::TwoPop(c) => {
            let series = run_two_pop(c)?;
            let mut out = OutputDir::create(&args.out, started)?;
            let snaps = write_series(&mut out, &series, &["rho", "mx", "my", "phi"], "")?;
            write_tumors(&out.file("tumors.csv")?, &c.tumors)?;
            let outcome = macro_outcome(&series);
            let diag = serde_json::to_value(&series.diagnostics).expect("serializable");
            Ok((out.finish("simulate", &cfg, vec![], outcome.status(), snaps, diag)?, outcome))
        }
        RunConfig::Micro(c) => {
            let run = run_micro(c)?;
            let mut out = OutputDir::create(&args.out, started)?;
            write_trajectories(&out.file("trajectories.csv")?, &trajectories_of(&run))?;
            write_tumors(&out.file("tumors.csv")?, &c.tumors)?;
            let mut snaps = Vec::new();
            for (k, (t, phi)) in run.times.iter().zip(&run.phis).enumerate() {
                let rel = snapshot_file_name("phi", k);
                write_snapshot(&out.file(&rel)?, *t, phi)?;
                snaps.push(SnapshotEntry { index: k, time: *t, files: vec![rel, "trajectories.csv".into()] });
            }
            let diag = micro_diagnostics(&run, c.dt);
            Ok((out.finish("simulate", &cfg, vec![], "completed", snaps, diag)?, Outcome::Completed))
        }
        RunConfig::Estimation(_) => {
            Err(CliError::Config("simulate needs a macro, macro2pop or micro configuration".into()))
        }
    }
}

pub fn generate_synthetic(args: &RunArgs) -> Result<(RunManifest, Outcome), CliError> {
    let started = start_clock();
    let cfg = load(&args.config, &args.overrides)?;
    match &cfg {
        RunConfig::Micro(c) => {
            let run = run_micro(c)?;
            let mut out = OutputDir::create(&args.out, started)?;
            write_trajectories(&out.file("trajectories.csv")?, &trajectories_of(&run))?;
            write_tumors(&out.file("tumors.csv")?, &c.tumors)?;
            let snaps = run
                .times
                .iter()
                .enumerate()
                .map(|(k, t)| SnapshotEntry { index: k, time: *t, files: vec!["trajectories.csv".into()] })
                .collect();
            let diag = micro_diagnostics(&run, c.dt);
            Ok((out.finish("generate-synthetic", &cfg, vec![], "completed", snaps, diag)?, Outcome::Completed))
        }
        RunConfig::TwoPop(c) => {
            let Some(agents) = &c.agents else {
                return Err(CliError::Config(
                    "generate-synthetic with macro2pop needs an [agents] section for the initial positions".into(),
                ));
            };
            let series = run_two_pop(c)?;
            let positions = AgentEnsemble::uniform(agents.count, c.model.grid.length, c.model.seed).positions;
            let mut observed = series.clone();
            // the initial state is implied by the positions
            let keep: Vec<usize> = (0..series.times.len()).filter(|&k| series.times[k] > 0.0).collect();
            observed.times = keep.iter().map(|&k| series.times[k]).collect();
            observed.states = keep.iter().map(|&k| series.states[k].clone()).collect();
            observed.phis = keep.iter().map(|&k| series.phis[k].clone()).collect();
            let mut out = OutputDir::create(&args.out, started)?;
            let init = Trajectories { times: vec![0.0], positions: vec![positions] };
            write_trajectories(&out.file("trajectories.csv")?, &init)?;
            write_tumors(&out.file("tumors.csv")?, &c.tumors)?;
            let snaps = write_series(&mut out, &observed, &["rho"], "densities/")?;
            let outcome = macro_outcome(&series);
            let diag = serde_json::to_value(&series.diagnostics).expect("serializable");
            Ok((out.finish("generate-synthetic", &cfg, vec![], outcome.status(), snaps, diag)?, outcome))
        }
        _ => Err(CliError::Config("generate-synthetic needs a micro or macro2pop configuration".into())),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads an estimation config, pointing `data.trajectories` at `data` when
/// given (resolved against the working directory).
fn load_estimation(
    config: &Path,
    data: Option<&Path>,
    overrides: &Overrides,
) -> Result<(RunConfig, EstimationConfig), CliError> {
    let mut cfg = parse_config_allowing_missing_data(config)?;
    if let (Some(d), RunConfig::Estimation(e)) = (data, &mut cfg) {
        let abs = std::fs::canonicalize(d).map_err(|err| CliError::io(d, err))?;
        e.data.trajectories = Some(abs);
    }
    overrides.apply(&mut cfg)?;
    let RunConfig::Estimation(e) = &cfg else {
        return Err(CliError::Config(format!(
            "{} is a {} configuration, expected estimation",
            config.display(),
            cfg.kind()
        )));
    };
    let e = e.clone();
    Ok((cfg, e))
}

/// The data path may come from the command line, so parse before checking it.
fn parse_config_allowing_missing_data(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    crate::config::deserialize(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Observations and initial positions named by the config.
fn load_problem(config_path: &Path, e: &EstimationConfig) -> Result<(EstimationProblem, Vec<InputFile>), CliError> {
    let base = config_path.parent().unwrap_or(Path::new("."));
    let traj_path = resolve(base, e.data.trajectories.as_deref().expect("validated"));
    let mut inputs = vec![input_file(&traj_path)?];
    let traj = read_trajectories(&traj_path)?;
    if traj.times[0].abs() > 1e-12 {
        return Err(CliError::Data(format!(
            "{}: first recorded time must be 0 (got {})",
            traj_path.display(),
            traj.times[0]
        )));
    }
    let initial = traj.positions[0].clone();
    let data = match &e.data.densities {
        Some(dir) => {
            let dir = resolve(base, dir);
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                .map_err(|err| CliError::io(&dir, err))?
                .filter_map(|entry| entry.ok().map(|x| x.path()))
                .filter(|p| {
                    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("rho_") && n.ends_with(".csv"))
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(CliError::Data(format!("{}: no rho_XXXX.csv snapshots", dir.display())));
            }
            let mut times = Vec::new();
            let mut fields = Vec::new();
            for f in &files {
                inputs.push(input_file(f)?);
                let (t, field) = read_snapshot(f)?;
                times.push(t);
                fields.push(field);
            }
            Observations::Densities(DensityData { times, fields })
        }
        None => {
            if traj.times.len() < 2 {
                return Err(CliError::Data(format!("{}: no observations after t = 0", traj_path.display())));
            }
            Observations::Positions { times: traj.times[1..].to_vec(), positions: traj.positions[1..].to_vec() }
        }
    };
    let mut problem = EstimationProblem::new(e.theta0, data, initial, e.r_imm, e.forward.clone(), e.tumors.clone())?;
    if let Some(l) = e.lower {
        problem.lower = l;
    }
    if let Some(u) = e.upper {
        problem.upper = u;
    }
    problem.lambda2 = e.lambda2;
    problem.validate()?;
    Ok((problem, inputs))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub parameters: Vec<String>,
    pub theta0: Theta,
    pub lower: Theta,
    pub upper: Theta,
    pub lambda2: f64,
    pub theta_opt: Theta,
    /// Relative misfit `E = J(θ_opt)`.
    pub error: f64,
    pub regularized: f64,
    pub data_times: Vec<f64>,
    /// Squared relative misfit per data snapshot.
    pub snapshot_residuals: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: cellflow::estimation::Termination,
    pub trace: Vec<f64>,
}

pub fn estimate_cmd(args: &EstimateArgs) -> Result<(RunManifest, Outcome), CliError> {
    let started = start_clock();
    let (cfg, e) = load_estimation(&args.config, args.data.as_deref(), &args.overrides)?;
    let (problem, inputs) = load_problem(&args.config, &e)?;
    let result = estimate(&problem, &e.optimizer)?;
    let best = problem.forward_run(&result.theta_opt);
    let snapshot_residuals = match &best {
        Ok(series) => problem.residuals(&result.theta_opt, series)?,
        Err(_) => Vec::new(),
    };
    let report = CalibrationReport {
        parameters: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        theta0: problem.theta0,
        lower: problem.lower,
        upper: problem.upper,
        lambda2: problem.lambda2,
        theta_opt: result.theta_opt,
        error: result.error,
        regularized: result.regularized,
        data_times: problem.data.times().to_vec(),
        snapshot_residuals,
        iterations: result.iterations,
        evaluations: result.evaluations,
        converged: result.converged,
        termination: result.termination,
        trace: result.trace.clone(),
    };
    let mut out = OutputDir::create(&args.out, started)?;
    out.write_json("report.json", &report)?;
    let snaps = match &best {
        Ok(series) => write_series(&mut out, series, &["rho"], "best_fit/")?,
        Err(_) => Vec::new(),
    };
    let diag = json!({
        "error": result.error,
        "termination": result.termination,
        "best_fit_run": best.as_ref().err().map(|e| e.to_string()),
    });
    Ok((out.finish("estimate", &cfg, inputs, "completed", snaps, diag)?, Outcome::Completed))
}

pub fn sensitivity_cmd(args: &SensitivityArgs) -> Result<(RunManifest, Outcome), CliError> {
    let started = start_clock();
    let (cfg, e) = load_estimation(&args.config, args.data.as_deref(), &args.overrides)?;
    let (problem, mut inputs) = load_problem(&args.config, &e)?;
    let theta: Theta = if let Some(v) = &args.theta {
        v.as_slice()
            .try_into()
            .map_err(|_| CliError::Config(format!("--theta needs {PARAMS} values (got {})", v.len())))?
    } else if let Some(r) = &args.report {
        inputs.push(input_file(r)?);
        let text = std::fs::read_to_string(r).map_err(|err| CliError::io(r, err))?;
        let report: CalibrationReport =
            serde_json::from_str(&text).map_err(|err| CliError::Data(format!("{}: {err}", r.display())))?;
        report.theta_opt
    } else {
        problem.theta0
    };
    let table = sensitivity(&problem, &theta, e.sensitivity_step)?;
    let mut out = OutputDir::create(&args.out, started)?;
    out.write_json("sensitivity.json", &table)?;
    let diag = json!({ "reference_output": table.reference_output });
    Ok((out.finish("sensitivity", &cfg, inputs, "completed", vec![], diag)?, Outcome::Completed))
}
