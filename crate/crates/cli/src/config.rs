//! Argument parsing and run configuration.
//!
//! Every knob can come from three places, in descending precedence: a
//! command-line flag, a JSON config file named by `--config`, or the built-in
//! default. Flags only override the fields they set, so a config file can pin
//! the output tree while the suite kind still varies per invocation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gridtrip_core::{
    CoreError, FixtureSet, GridCode, ModelFamily, Side, SuiteKind, SwarmConfig,
};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "gridtrip", version, about = "Grid co-simulation and inverter-tripping calibration pipeline")]
pub struct Cli {
    /// JSON file with defaults for any flag plus particle-swarm overrides.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the disturbance suite through the coupled grid model and persist
    /// the fraction-online traces.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of distribution feeders attached to the coupling bus.
        #[arg(long, value_name = "N")]
        n_dg: Option<usize>,
        /// Seed for inverter threshold sampling.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Calibrate tripping-block parameters against persisted traces.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        /// Restrict to one model family; default fits both.
        #[arg(long, value_enum)]
        family: Option<FamilyArg>,
        /// Restrict to one grid code; default fits all three.
        #[arg(long, value_enum)]
        code: Option<CodeArg>,
        /// Restrict proportional-integral fits to one voltage side; the
        /// dwell-timer family always trains both sides jointly.
        #[arg(long, value_enum)]
        side: Option<SideArg>,
    },
    /// Score default and fitted aggregate models against persisted traces.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Write per-scenario CSV series with one prediction column per model.
    Report {
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Root directory for all artifacts (traces, fits, reports).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Which disturbance suite to generate or read.
    #[arg(long, value_enum)]
    pub suite: Option<SuiteArg>,
    /// Directory with grid fixture JSON files; default uses the embedded set.
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteArg {
    InSample,
    OutOfSample,
}

impl From<SuiteArg> for SuiteKind {
    fn from(a: SuiteArg) -> Self {
        match a {
            SuiteArg::InSample => SuiteKind::InSample,
            SuiteArg::OutOfSample => SuiteKind::OutOfSample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyArg {
    Pi,
    Dera,
}

impl From<FamilyArg> for ModelFamily {
    fn from(a: FamilyArg) -> Self {
        match a {
            FamilyArg::Pi => ModelFamily::Pi,
            FamilyArg::Dera => ModelFamily::DerA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeArg {
    Inv2005,
    Inv2015,
    Inv2020,
}

impl From<CodeArg> for GridCode {
    fn from(a: CodeArg) -> Self {
        match a {
            CodeArg::Inv2005 => GridCode::Inv2005,
            CodeArg::Inv2015 => GridCode::Inv2015,
            CodeArg::Inv2020 => GridCode::Inv2020,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideArg {
    Under,
    Over,
}

impl From<SideArg> for Side {
    fn from(a: SideArg) -> Self {
        match a {
            SideArg::Under => Side::Under,
            SideArg::Over => Side::Over,
        }
    }
}

/// On-disk shape of the `--config` file. Unknown keys are rejected so typos
/// fail loudly instead of silently falling back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fixtures: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub suite: Option<SuiteArg>,
    pub n_dg: Option<usize>,
    pub seed: Option<u64>,
    pub family: Option<FamilyArg>,
    pub code: Option<CodeArg>,
    pub side: Option<SideArg>,
    #[serde(default)]
    pub swarm: SwarmOverrides,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CoreError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| {
            CoreError::Config(format!("config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CoreError::Config(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmOverrides {
    pub swarm_size: Option<usize>,
    pub max_iters: Option<usize>,
    pub omega: Option<f64>,
    pub phi_p: Option<f64>,
    pub phi_g: Option<f64>,
    pub min_step: Option<f64>,
    pub min_func_delta: Option<f64>,
    pub seed: Option<u64>,
}

impl SwarmOverrides {
    /// Applies the overrides on top of the long-budget production defaults.
    pub fn resolve(&self) -> SwarmConfig {
        let mut c = SwarmConfig::thorough();
        if let Some(v) = self.swarm_size {
            c.swarm_size = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.omega {
            c.omega = v;
        }
        if let Some(v) = self.phi_p {
            c.phi_p = v;
        }
        if let Some(v) = self.phi_g {
            c.phi_g = v;
        }
        if let Some(v) = self.min_step {
            c.min_step = v;
        }
        if let Some(v) = self.min_func_delta {
            c.min_func_delta = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c
    }
}

/// Fully resolved settings for one invocation.
pub struct Settings {
    pub out: PathBuf,
    pub suite: SuiteKind,
    pub n_dg: usize,
    pub seed: u64,
    pub fixtures: FixtureSet,
    pub family: Option<ModelFamily>,
    pub code: Option<GridCode>,
    pub side: Option<Side>,
    pub swarm: SwarmConfig,
}

impl Settings {
    pub fn resolve(
        common: &CommonArgs,
        n_dg: Option<usize>,
        seed: Option<u64>,
        family: Option<FamilyArg>,
        code: Option<CodeArg>,
        side: Option<SideArg>,
        cfg: &RunConfig,
    ) -> Result<Self, CoreError> {
        let out = common
            .out
            .clone()
            .or_else(|| cfg.out.clone())
            .ok_or_else(|| {
                CoreError::Config("no output directory; pass --out or set \"out\" in the config".into())
            })?;
        let fixtures = match common.fixtures.as_ref().or(cfg.fixtures.as_ref()) {
            Some(dir) => FixtureSet::from_dir(dir)?,
            None => FixtureSet::embedded()?,
        };
        Ok(Settings {
            out,
            suite: common.suite.or(cfg.suite).map_or(SuiteKind::InSample, Into::into),
            n_dg: n_dg.or(cfg.n_dg).unwrap_or(2),
            seed: seed.or(cfg.seed).unwrap_or(1),
            fixtures,
            family: family.or(cfg.family).map(Into::into),
            code: code.or(cfg.code).map(Into::into),
            side: side.or(cfg.side).map(Into::into),
            swarm: cfg.swarm.resolve(),
        })
    }
}
