//! Command-line arguments.

use std::path::PathBuf;

use cellflow::hyperbolic::Limiter;
use cellflow::kernels::InteractionSet;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cellflow", version, about = "Immune-cell migration models: simulate, generate data, calibrate, plot")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a macro, macro2pop or micro configuration and write snapshots.
    Simulate(RunArgs),
    /// Write synthetic calibration data: agent trajectories (micro) or
    /// density snapshots with initial positions (macro2pop with agents).
    GenerateSynthetic(RunArgs),
    /// Calibrate the two-population model against data.
    Estimate(EstimateArgs),
    /// Local sensitivities of the final peak density.
    Sensitivity(SensitivityArgs),
    /// Render snapshot files as PNG images.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LimiterArg {
    Upwind,
    Minmod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EpsilonArg {
    #[value(name = "0")]
    Zero,
    #[value(name = "1")]
    One,
}

/// Settings that override the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated snapshot times.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub limiter: Option<LimiterArg>,
    /// Pressure switch: 0 pressureless, 1 with pressure.
    #[arg(long, value_enum)]
    pub epsilon: Option<EpsilonArg>,
    /// Comma-separated subset of i1, i2, i3, or `none`.
    #[arg(long, value_delimiter = ',')]
    pub interactions: Option<Vec<String>>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory file replacing `data.trajectories` of the config.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Evaluate at this θ (six comma-separated values).
    #[arg(long, value_delimiter = ',', conflicts_with = "report")]
    pub theta: Option<Vec<f64>>,
    /// Evaluate at `theta_opt` of a calibration report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotStyle {
    Heatmap,
    QuiverOverlay,
    AgentsOverlay,
}

#[derive(Debug, Clone, Args)]
pub struct PlotArgs {
    /// Density snapshot files (`rho_XXXX.csv`).
    #[arg(required = true)]
    pub snapshots: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "heatmap")]
    pub style: PlotStyle,
    #[arg(long)]
    pub out: PathBuf,
    /// Agent positions for `agents-overlay`.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    /// Tumour layout for `agents-overlay`.
    #[arg(long)]
    pub tumors: Option<PathBuf>,
    /// Radius of the agent circles.
    #[arg(long, default_value_t = 0.02)]
    pub r_imm: f64,
    /// Arrow spacing of `quiver-overlay`, in grid nodes.
    #[arg(long, default_value_t = 3)]
    pub stride: usize,
}

fn not_applicable(flag: &str, kind: &str) -> CliError {
    CliError::Config(format!("--{flag} does not apply to {kind} configurations"))
}

impl Overrides {
    /// Applies the flags and revalidates.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        let kind = cfg.kind();
        if let Some(seed) = self.seed {
            match cfg {
                RunConfig::Macro(c) => c.seed = seed,
                RunConfig::TwoPop(c) => c.model.seed = seed,
                RunConfig::Micro(c) => c.seed = seed,
                RunConfig::Estimation(_) => return Err(not_applicable("seed", kind)),
            }
        }
        if let Some(times) = &self.snapshots {
            match cfg {
                RunConfig::Macro(c) => c.snapshot_times = times.clone(),
                RunConfig::TwoPop(c) => c.model.snapshot_times = times.clone(),
                RunConfig::Micro(c) => c.snapshot_times = times.clone(),
                RunConfig::Estimation(_) => return Err(not_applicable("snapshots", kind)),
            }
        }
        let interactions = match &self.interactions {
            Some(names) if names.iter().any(|n| n.trim().eq_ignore_ascii_case("none")) => Some(InteractionSet::NONE),
            Some(names) => Some(InteractionSet::from_names(names).map_err(|e| CliError::Config(e.to_string()))?),
            None => None,
        };
        if self.limiter.is_some() || self.epsilon.is_some() || interactions.is_some() {
            let model = match cfg {
                RunConfig::Macro(c) => c,
                RunConfig::TwoPop(c) => &mut c.model,
                RunConfig::Estimation(c) => &mut c.forward,
                RunConfig::Micro(_) => {
                    let flag = if self.limiter.is_some() {
                        "limiter"
                    } else if self.epsilon.is_some() {
                        "epsilon"
                    } else {
                        "interactions"
                    };
                    return Err(not_applicable(flag, kind));
                }
            };
            if let Some(l) = self.limiter {
                model.hyperbolic.limiter = match l {
                    LimiterArg::Upwind => Limiter::Upwind,
                    LimiterArg::Minmod => Limiter::Minmod,
                };
            }
            if let Some(e) = self.epsilon {
                model.hyperbolic.law.epsilon = match e {
                    EpsilonArg::Zero => 0.0,
                    EpsilonArg::One => 1.0,
                };
            }
            if let Some(set) = interactions {
                model.interactions = set;
            }
        }
        cfg.validate()
    }
}
