//! Declarative experiment descriptions.
//!
//! A scenario is a TOML file:
//!
//! ```toml
//! name = "scenario1"
//! duration_s = 300.0
//! round_interval_s = 5.0
//! policy = "adrenaline"
//!
//! [optimizer]
//! alpha = 0.5
//! fps_buffer = 5.0
//!
//! [[users]]
//! client_id = "user1_a"
//! game_id = "village_shooter"
//! qp = "good"
//! join_time_s = 0.0
//! ```
//!
//! `profiles` and `predictor` optionally point at a game-profile file and a
//! predictor file, resolved relative to the scenario file.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gpu::{GameProfiles, GpuError, GpuModel};
use crate::optimizer::{ClientId, OptimizerConfig};
use crate::policies::PolicyKind;
use crate::quality::{QpLevel, QualityError, QualityPredictor};

pub const PRESET_NAMES: [&str; 3] = ["scenario1", "scenario2", "scenario3"];

const SCENARIO1: &str = include_str!("../data/scenario1.toml");
const SCENARIO2: &str = include_str!("../data/scenario2.toml");
const SCENARIO3: &str = include_str!("../data/scenario3.toml");

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("scenario file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error(transparent)]
    Gpu(#[from] GpuError),
    #[error(transparent)]
    Quality(#[from] QualityError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

fn default_thresh() -> f64 {
    30.0
}

fn default_upper() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub client_id: ClientId,
    pub game_id: String,
    /// `good`, `fair`, `poor` or an integer QP.
    #[serde(with = "qp_text")]
    pub qp: QpLevel,
    #[serde(default)]
    pub join_time_s: f64,
    #[serde(default = "default_thresh")]
    pub fps_thresh: f64,
    #[serde(default = "default_upper")]
    pub fps_upper: f64,
}

pub(crate) mod qp_text {
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::quality::QpLevel;

    pub fn serialize<S: Serializer>(qp: &QpLevel, s: S) -> Result<S::Ok, S::Error> {
        let name = match *qp {
            QpLevel::GOOD => "good".to_string(),
            QpLevel::FAIR => "fair".to_string(),
            QpLevel::POOR => "poor".to_string(),
            other => other.value().to_string(),
        };
        s.serialize_str(&name)
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<QpLevel, D::Error> {
        let text = match Raw::deserialize(d)? {
            Raw::Int(v) => v.to_string(),
            Raw::Text(t) => t,
        };
        QpLevel::parse_preset(&text).map_err(de::Error::custom)
    }
}

fn default_step() -> f64 {
    1.0
}

fn default_window() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration_s: f64,
    /// Simulation step; FPS is reported once per step.
    #[serde(default = "default_step")]
    pub step_s: f64,
    /// Overrides `optimizer.round_interval_s` when present.
    #[serde(default)]
    pub round_interval_s: Option<f64>,
    /// Trailing window used to judge stabilization in reports.
    #[serde(default = "default_window")]
    pub report_window_s: f64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub gpu: GpuModel,
    #[serde(default)]
    pub profiles: Option<PathBuf>,
    #[serde(default)]
    pub predictor: Option<PathBuf>,
    pub users: Vec<UserSpec>,
}

fn default_policy() -> PolicyKind {
    PolicyKind::Adrenaline
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
        let text = match name {
            "scenario1" => SCENARIO1,
            "scenario2" => SCENARIO2,
            "scenario3" => SCENARIO3,
            other => return Err(ScenarioError::UnknownPreset(other.to_string())),
        };
        ScenarioConfig::from_toml(text)
    }

    pub fn from_toml(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg: ScenarioConfig = toml::from_str(text)?;
        if let Some(interval) = cfg.round_interval_s {
            cfg.optimizer.round_interval_s = interval;
        }
        cfg.round_interval_s = Some(cfg.optimizer.round_interval_s);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a scenario file, resolving its `profiles`/`predictor` paths
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = ScenarioConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.profiles, &mut cfg.predictor].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// A bundled preset name or a path to a scenario file.
    pub fn resolve(name_or_path: &str) -> Result<ScenarioConfig, ScenarioError> {
        if PRESET_NAMES.contains(&name_or_path) {
            ScenarioConfig::preset(name_or_path)
        } else {
            ScenarioConfig::load(name_or_path)
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.duration_s) {
            return Err(invalid("duration_s", "must be positive"));
        }
        if !finite_pos(self.step_s) {
            return Err(invalid("step_s", "must be positive"));
        }
        if !(self.report_window_s >= 0.0 && self.report_window_s.is_finite()) {
            return Err(invalid("report_window_s", "must be >= 0"));
        }
        self.optimizer
            .validate()
            .map_err(|e| invalid("optimizer", e.to_string()))?;
        self.gpu.validate().map_err(|e| invalid("gpu", e.to_string()))?;
        let mut seen = HashSet::new();
        for (i, u) in self.users.iter().enumerate() {
            let at = |field: &str| format!("users[{i}].{field}");
            if !seen.insert(&u.client_id) {
                return Err(invalid(at("client_id"), format!("duplicate client id `{}`", u.client_id)));
            }
            if !(u.join_time_s >= 0.0 && u.join_time_s <= self.duration_s) {
                return Err(invalid(at("join_time_s"), "must lie in [0, duration_s]"));
            }
            if !(u.fps_thresh > 0.0 && u.fps_thresh < u.fps_upper && u.fps_upper.is_finite()) {
                return Err(invalid(at("fps_thresh"), "must be positive and below fps_upper"));
            }
        }
        Ok(())
    }

    pub fn load_profiles(&self) -> Result<GameProfiles, ScenarioError> {
        Ok(match &self.profiles {
            Some(p) => GameProfiles::load(p)?,
            None => GameProfiles::default(),
        })
    }

    pub fn load_predictor(&self) -> Result<QualityPredictor, ScenarioError> {
        Ok(match &self.predictor {
            Some(p) => QualityPredictor::load(p)?,
            None => QualityPredictor::default(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}
