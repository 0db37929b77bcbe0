//! TOML run configurations.
//!
//! Every file names its model with a top-level `kind` key. Omitted keys
//! take the documented defaults; unknown keys are rejected. Units are the
//! dimensionless ones of the models: lengths in domain units (side 1),
//! times in model time.

use std::path::{Path, PathBuf};

use cellflow::estimation::{Theta, TrustRegionOptions};
use cellflow::micro::MicroConfig;
use cellflow::models::{MacroConfig, TumorLayout};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

// One value per run, so the size spread between variants does not matter.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunConfig {
    /// One immune population from Gaussian bumps.
    Macro(MacroConfig),
    /// Immune population interacting with fixed tumour cells.
    #[serde(rename = "macro2pop")]
    TwoPop(TwoPopConfig),
    /// Agent-based hybrid model.
    Micro(MicroConfig),
    /// Calibration of the two-population model against data.
    Estimation(EstimationConfig),
}

impl RunConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            RunConfig::Macro(_) => "macro",
            RunConfig::TwoPop(_) => "macro2pop",
            RunConfig::Micro(_) => "micro",
            RunConfig::Estimation(_) => "estimation",
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let r = match self {
            RunConfig::Macro(c) => c.validate(),
            RunConfig::TwoPop(c) => c.validate(),
            RunConfig::Micro(c) => c.validate(),
            RunConfig::Estimation(c) => c.validate(),
        };
        r.map_err(|e| CliError::Config(e.to_string()))
    }

    /// Canonical serialization; the digest is taken over this text.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    pub fn digest(&self) -> String {
        hex_sha256(self.canonical().as_bytes())
    }

    /// Seed governing the stochastic draws of this run, if any.
    pub fn seed(&self) -> Option<u64> {
        match self {
            RunConfig::Macro(c) => Some(c.seed),
            RunConfig::TwoPop(c) => Some(c.model.seed),
            RunConfig::Micro(c) => Some(c.seed),
            RunConfig::Estimation(_) => None,
        }
    }
}

pub fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Initial immune density estimated from uniformly drawn agents, the same
/// draw the agent model makes for the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentInit {
    pub count: usize,
    /// Bandwidth factor of the estimate.
    pub h: f64,
    /// Immune cell radius.
    pub r_imm: f64,
}

impl Default for AgentInit {
    fn default() -> Self {
        Self { count: 80, h: 1.2, r_imm: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPopConfig {
    pub model: MacroConfig,
    pub tumors: TumorLayout,
    /// Start from agent positions instead of Gaussian bumps.
    pub agents: Option<AgentInit>,
}

impl TwoPopConfig {
    pub fn validate(&self) -> cellflow::Result<()> {
        self.model.validate()?;
        self.tumors.validate(&self.model.grid)?;
        if let Some(a) = &self.agents {
            cellflow::kde::Bandwidth::new(a.h, a.r_imm)?;
            if a.count == 0 {
                return Err(cellflow::Error::Invalid("agents.count >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Observation files. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSource {
    /// Trajectory CSV. Its `t = 0` positions seed the initial density; its
    /// later times are the observations unless `densities` is set.
    pub trajectories: Option<PathBuf>,
    /// Directory of `rho_XXXX.csv` snapshots to fit instead.
    pub densities: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// `[η, ω_rep, ω_adh, β, ω_rep_tum, h]`.
    pub theta0: Theta,
    /// Defaults to zero.
    pub lower: Option<Theta>,
    /// Defaults to `50 θ₀`.
    pub upper: Option<Theta>,
    pub lambda2: f64,
    pub r_imm: f64,
    /// Model settings outside `θ`; horizon and snapshot times come from the data.
    pub forward: MacroConfig,
    pub tumors: TumorLayout,
    pub data: DataSource,
    pub optimizer: TrustRegionOptions,
    /// Relative perturbation of the sensitivity analysis.
    pub sensitivity_step: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            theta0: [6.0, 500.0, 4.0, 2000.0, 0.0, 1.2],
            lower: None,
            upper: None,
            lambda2: 1e-6,
            r_imm: 0.02,
            forward: MacroConfig::default(),
            tumors: TumorLayout::default(),
            data: DataSource::default(),
            optimizer: TrustRegionOptions::default(),
            sensitivity_step: 0.05,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> cellflow::Result<()> {
        let invalid = |m: String| Err(cellflow::Error::Invalid(m));
        if self.theta0.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return invalid("theta0 components nonnegative".into());
        }
        if !(self.lambda2 >= 0.0) {
            return invalid(format!("lambda2 >= 0 (got {})", self.lambda2));
        }
        if !(self.r_imm > 0.0) {
            return invalid(format!("r_imm > 0 (got {})", self.r_imm));
        }
        if !(self.sensitivity_step > 0.0) {
            return invalid(format!("sensitivity_step > 0 (got {})", self.sensitivity_step));
        }
        if self.data.trajectories.is_none() {
            return invalid("data.trajectories is required (initial positions)".into());
        }
        self.tumors.validate(&self.forward.grid)
    }
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let cfg = parse_config_str(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let cfg = deserialize(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Deserializes without validating. The `kind` key is read first and then
/// blanked out, so the model struct is parsed straight from the text and
/// its errors keep their line and key context.
pub fn deserialize(text: &str) -> Result<RunConfig, CliError> {
    let err = |e: toml::de::Error| CliError::Config(e.to_string());
    let table: toml::Table = toml::from_str(text).map_err(err)?;
    let kind = match table.get("kind") {
        Some(toml::Value::String(k)) => k.clone(),
        Some(_) => return Err(CliError::Config("`kind` must be a string".into())),
        None => {
            return Err(CliError::Config("missing top-level `kind` (macro, macro2pop, micro or estimation)".into()))
        }
    };
    let body = blank_kind(text);
    Ok(match kind.as_str() {
        "macro" => RunConfig::Macro(toml::from_str(&body).map_err(err)?),
        "macro2pop" => RunConfig::TwoPop(toml::from_str(&body).map_err(err)?),
        "micro" => RunConfig::Micro(toml::from_str(&body).map_err(err)?),
        "estimation" => RunConfig::Estimation(toml::from_str(&body).map_err(err)?),
        other => {
            return Err(CliError::Config(format!(
                "unknown kind `{other}` (expected macro, macro2pop, micro or estimation)"
            )))
        }
    })
}

/// Replaces the top-level `kind = ...` line by spaces of equal length.
fn blank_kind(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut top_level = true;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        if t.starts_with('[') {
            top_level = false;
        }
        let is_kind = top_level && t.strip_prefix("kind").is_some_and(|r| r.trim_start().starts_with('='));
        if is_kind {
            let body = line.trim_end_matches(['\n', '\r']);
            out.extend(std::iter::repeat_n(' ', body.chars().count()));
            out.push_str(&line[body.len()..]);
        } else {
            out.push_str(line);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cellflow::parabolic::SourceMode;

    #[test]
    fn empty_macro_config_takes_single_population_defaults() {
        let RunConfig::Macro(c) = parse_config_str("kind = \"macro\"").unwrap() else { panic!() };
        assert_eq!(c.alpha, 0.0);
        assert_eq!(c.chemo.kappa, 1.0);
        assert_eq!(c.chemo.d, 0.1);
        assert_eq!(c.chemo.source, SourceMode::Saturating { alpha1: 30.0, alpha2: 0.2 });
        assert_eq!((c.grid.nx, c.grid.ny), (51, 51));
    }

    #[test]
    fn grids_are_given_by_side_and_node_counts() {
        let RunConfig::Macro(c) = parse_config_str("kind = \"macro\"\n[grid]\nnx = 101\nny = 101\n").unwrap() else {
            panic!()
        };
        assert_eq!(c.grid, cellflow::Grid2D::new(1.0, 101, 101).unwrap());
        assert!(parse_config_str("kind = \"macro\"\n[grid]\ndx = 0.1\n").is_err());
        assert!(parse_config_str("kind = \"macro\"\n[grid]\nnx = 1\n").is_err());
    }

    #[test]
    fn micro_defaults_are_the_reference_table() {
        let RunConfig::Micro(c) = parse_config_str("kind = \"micro\"").unwrap() else { panic!() };
        assert_eq!(c.r_imm, 0.02);
        assert_eq!(c.tumors.r_tum, 0.05);
        assert_eq!(c.alpha, 100.0);
        assert_eq!(c.chemo.kappa, 0.2);
        assert_eq!(c.tumors.xi, 1000.0);
        assert_eq!(c.chemo.d, 45.0);
        assert_eq!((c.kernels.r_adh, c.kernels.r_rep, c.kernels.r_rep_tum), (0.06, 0.04, 0.07));
    }

    #[test]
    fn invariant_violations_name_the_invariant() {
        let err = parse_config_str("kind = \"macro\"\n[kernels]\nr_adh = 0.03\n").unwrap_err();
        assert!(err.to_string().contains("R_adh > R_rep"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let err = parse_config_str("kind = \"macro\"\netaa = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("etaa") && err.contains("line 2"), "{err}");
        let err = parse_config_str("kind = \"micro\"\n[kernels]\nbeta = 1\nbogus = 2\n").unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(parse_config_str("kind = \"other\"").is_err());
        assert!(parse_config_str("eta = 1.0").is_err());
        let err = parse_config_str("kind = \"micro\"\n\n[tumors]\nr_tum = \"big\"\n").unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn configs_round_trip_and_digest_is_stable() {
        let configs = [
            RunConfig::Macro(MacroConfig { eta: 0.1, seed: 7, ..Default::default() }),
            RunConfig::TwoPop(TwoPopConfig {
                model: MacroConfig::two_population(),
                agents: Some(AgentInit::default()),
                ..Default::default()
            }),
            RunConfig::Micro(MicroConfig { seed: 3, ..Default::default() }),
            RunConfig::Estimation(EstimationConfig {
                data: DataSource { trajectories: Some("t.csv".into()), densities: None },
                upper: Some([1.0; 6]),
                ..Default::default()
            }),
        ];
        for c in configs {
            let text = c.canonical();
            let back = parse_config_str(&text).unwrap();
            assert_eq!(back, c, "{text}");
            assert_eq!(back.digest(), c.digest());
            assert_eq!(back.canonical(), text);
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::Macro(MacroConfig::default());
        let b = RunConfig::Macro(MacroConfig { seed: 1, ..Default::default() });
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
