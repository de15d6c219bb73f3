//! Experiment configuration, read from TOML.
//!
//! ```toml
//! name = "uplink"
//! algorithm = "cnrq"          # cnrq | ceq-central | ceq-semi | qnr | regret-matching
//! iterations = 500000
//! seeds = [1, 2, 3, 4]
//!
//! [environment]
//! preset = "uplink-paper"
//! [environment.overrides]    # any parameter of the preset
//! discount = 0.9
//!
//! [learning]                 # omitted fields take the algorithm's defaults
//! epsilon = 0.05
//!
//! [metrics]
//! dense_prefix = 1000
//! interval = 100
//! ```

use std::path::PathBuf;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::baselines::{CeqConfig, QnrConfig, RegretMatchingConfig};
use crate::cnrq::{CnrqConfig, InertiaPolicy};
use crate::env::synthetic::{prisoners_dilemma, single_agent_mdp, two_agent_two_state};
use crate::env::{DownlinkGame, DownlinkParams, UplinkGame, UplinkParams};
use crate::error::{Error, Result};
use crate::game::Game;
use crate::schedule::StepSchedules;

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "CNRQ_OUT_DIR";

const UPLINK_PAPER: &str = include_str!("../../presets/uplink-paper.toml");
const DOWNLINK_PAPER: &str = include_str!("../../presets/downlink-paper.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Cnrq,
    CeqCentral,
    CeqSemi,
    Qnr,
    RegretMatching,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cnrq => "cnrq",
            Algorithm::CeqCentral => "ceq-central",
            Algorithm::CeqSemi => "ceq-semi",
            Algorithm::Qnr => "qnr",
            Algorithm::RegretMatching => "regret-matching",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentPreset {
    UplinkPaper,
    DownlinkPaper,
    /// Two agents, two states, two actions each.
    TwoAgentFixture,
    PrisonersDilemma,
    SingleAgentMdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub preset: EnvironmentPreset,
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub overrides: toml::Table,
}

impl EnvironmentConfig {
    pub fn preset(preset: EnvironmentPreset) -> Self {
        Self {
            preset,
            overrides: toml::Table::new(),
        }
    }

    pub fn uplink_params(&self) -> Result<UplinkParams> {
        merge(UplinkParams::default(), &self.overrides)
    }

    pub fn downlink_params(&self) -> Result<DownlinkParams> {
        merge(DownlinkParams::default(), &self.overrides)
    }

    pub fn build(&self) -> Result<Arc<dyn Game>> {
        let synthetic_discount = || -> Result<Option<f64>> {
            for key in self.overrides.keys().filter(|k| k.as_str() != "discount") {
                return Err(Error::Config(format!(
                    "environment.overrides.{key}: only `discount` can be overridden for this preset"
                )));
            }
            self.overrides
                .get("discount")
                .map(|v| {
                    v.as_float()
                        .ok_or_else(|| Error::Config("environment.overrides.discount: expected a float".into()))
                })
                .transpose()
        };
        let config_error = |e: Error| match e {
            Error::InvalidArgument(m) | Error::MalformedTables(m) => Error::Config(format!("environment: {m}")),
            other => other,
        };
        let game: Arc<dyn Game> = match self.preset {
            EnvironmentPreset::UplinkPaper => Arc::new(UplinkGame::new(self.uplink_params()?).map_err(config_error)?),
            EnvironmentPreset::DownlinkPaper => {
                Arc::new(DownlinkGame::new(self.downlink_params()?).map_err(config_error)?)
            }
            synthetic => {
                let g = match synthetic {
                    EnvironmentPreset::TwoAgentFixture => two_agent_two_state(),
                    EnvironmentPreset::PrisonersDilemma => prisoners_dilemma(),
                    _ => single_agent_mdp(),
                };
                match synthetic_discount()? {
                    Some(rho) if !(0.0..1.0).contains(&rho) => {
                        return Err(Error::Config(format!(
                            "environment.overrides.discount: {rho} is outside [0, 1)"
                        )))
                    }
                    Some(rho) => Arc::new(g.with_discount(rho)),
                    None => Arc::new(g),
                }
            }
        };
        Ok(game)
    }
}

// Replaces the fields of `base` named in `overrides`, rejecting unknown names.
fn merge<T: Serialize + DeserializeOwned>(base: T, overrides: &toml::Table) -> Result<T> {
    let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
    for (key, value) in overrides {
        if !table.contains_key(key) {
            let known: Vec<&str> = table.keys().map(String::as_str).collect();
            return Err(Error::Config(format!(
                "environment.overrides.{key}: unknown parameter (expected one of {})",
                known.join(", ")
            )));
        }
        table.insert(key.clone(), value.clone());
    }
    table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("environment.overrides: {}", e.message())))
}

/// Learning constants. Unset fields take the selected algorithm's defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub schedules: StepSchedules,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
    pub lambda_max: Option<f64>,
    pub inertia: Option<InertiaPolicy>,
    /// Gaussian noise on observed rewards of other agents (ceq-semi).
    pub observation_noise: Option<f64>,
    /// Virtual regret-matching rounds per step (qnr).
    pub inner_iterations: Option<usize>,
}

impl LearningConfig {
    pub fn cnrq(&self) -> CnrqConfig {
        let d = CnrqConfig::default();
        CnrqConfig {
            schedules: self.schedules,
            delta: self.delta.unwrap_or(d.delta),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            lambda_max: self.lambda_max.unwrap_or(d.lambda_max),
            inertia: self.inertia.unwrap_or(d.inertia),
        }
    }

    pub fn ceq(&self) -> CeqConfig {
        let d = CeqConfig::default();
        CeqConfig {
            schedules: self.schedules,
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            lambda_max: self.lambda_max.unwrap_or(d.lambda_max),
            observation_noise: self.observation_noise.unwrap_or(d.observation_noise),
            delta: self.delta.unwrap_or(d.delta),
        }
    }

    pub fn qnr(&self) -> QnrConfig {
        let d = QnrConfig::default();
        QnrConfig {
            schedules: self.schedules,
            inner_iterations: self.inner_iterations.unwrap_or(d.inner_iterations),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            inner: self.regret_matching(),
        }
    }

    pub fn regret_matching(&self) -> RegretMatchingConfig {
        let d = RegretMatchingConfig::default();
        let headroom = match self.inertia {
            Some(InertiaPolicy::Adaptive { headroom }) => headroom,
            _ => d.headroom,
        };
        RegretMatchingConfig {
            delta: self.delta.unwrap_or(d.delta),
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            headroom,
        }
    }

    fn validate(&self, algorithm: Algorithm) -> Result<()> {
        let checked = match algorithm {
            Algorithm::Cnrq => self.cnrq().validate(),
            Algorithm::CeqCentral | Algorithm::CeqSemi => self.ceq().validate(),
            Algorithm::Qnr => self.qnr().validate(),
            Algorithm::RegretMatching => self.regret_matching().validate(),
        };
        checked.map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("learning: {m}")),
            other => other,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Every iteration up to this one is logged.
    pub dense_prefix: u64,
    /// Afterwards every `interval`-th iteration is logged.
    pub interval: u64,
    /// Evaluate the residual and Lyapunov diagnostics on logged rows.
    pub diagnostics: bool,
    /// Number of equal blocks the tail window is cut into for the Lyapunov
    /// block averages of the summary.
    pub lyapunov_blocks: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            dense_prefix: 1000,
            interval: 100,
            diagnostics: true,
            lyapunov_blocks: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub algorithm: Algorithm,
    pub iterations: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub learning: LearningConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(preset: EnvironmentPreset, algorithm: Algorithm, iterations: u64, seeds: Vec<u64>) -> Self {
        Self {
            name: default_name(),
            algorithm,
            iterations,
            seeds,
            environment: EnvironmentConfig::preset(preset),
            learning: LearningConfig::default(),
            metrics: MetricsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses and validates a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// A shipped preset experiment: "uplink-paper" or "downlink-paper".
    pub fn named_preset(name: &str) -> Result<Self> {
        match name {
            "uplink-paper" => Self::from_toml(UPLINK_PAPER),
            "downlink-paper" => Self::from_toml(DOWNLINK_PAPER),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected uplink-paper or downlink-paper)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations: must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        if self.metrics.interval == 0 {
            return Err(Error::Config("metrics.interval: must be at least 1".into()));
        }
        if self.metrics.lyapunov_blocks == 0 {
            return Err(Error::Config("metrics.lyapunov_blocks: must be at least 1".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config("name: must be a nonempty file-name-safe string".into()));
        }
        self.learning.schedules.validate().map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(format!("learning.schedules: {m}")),
            other => other,
        })?;
        self.learning.validate(self.algorithm)?;
        self.environment.build().map(|_| ())
    }
}
