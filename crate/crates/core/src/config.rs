//! Experiment configuration: one TOML file with a section per module,
//! dotted-path overrides and a content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::distill::DistillConfig;
use crate::door::{DoorConfig, DoorType};
use crate::env::{EnvConfig, EnvSettings};
use crate::eval::EvalProtocol;
use crate::ppo::PpoConfig;
use crate::randomization::RandomizationRanges;
use crate::rewards::RewardConfig;
use crate::robot::RobotConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("bad override {0:?}: expected section.key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run_name: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub robot: RobotConfig,
    pub reward: RewardConfig,
    pub randomization: RandomizationRanges,
    /// Pin every episode to this door.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub door: Option<DoorConfig>,
    pub ppo: PpoConfig,
    pub distill: DistillConfig,
    pub eval: EvalProtocol,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_name: "run".into(),
            seed: 0,
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            robot: RobotConfig::default(),
            reward: RewardConfig::default(),
            randomization: RandomizationRanges::default(),
            door: None,
            ppo: PpoConfig::default(),
            distill: DistillConfig::default(),
            eval: EvalProtocol::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let c: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(single_line(&e.to_string())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Apply `section.key=value` overrides. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Value::try_from(self).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let keys: Vec<&str> = path.trim().split('.').collect();
            if keys.iter().any(|k| k.is_empty()) {
                return Err(ConfigError::Override(o.clone()));
            }
            let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
                Ok(mut t) => t.remove("v").expect("key present"),
                Err(_) => toml::Value::String(raw.trim().to_string()),
            };
            let mut cur = &mut root;
            for k in &keys[..keys.len() - 1] {
                let tbl = cur.as_table_mut().ok_or_else(|| ConfigError::Override(o.clone()))?;
                cur = tbl
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
            cur.as_table_mut()
                .ok_or_else(|| ConfigError::Override(o.clone()))?
                .insert(keys[keys.len() - 1].to_string(), value);
        }
        let c: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(single_line(&e.to_string())))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.randomization
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ppo.validate().map_err(ConfigError::Invalid)?;
        self.distill.validate().map_err(ConfigError::Invalid)?;
        if self.env.substeps == 0 || !(self.env.control_dt > 0.0) || self.env.horizon == 0 {
            return Err(ConfigError::Invalid("env.control_dt, substeps and horizon must be positive".into()));
        }
        if self.env.layout_version != crate::env::LAYOUT_VERSION {
            return Err(ConfigError::Invalid(format!(
                "env.layout_version {:?} is not supported (expected {:?})",
                self.env.layout_version,
                crate::env::LAYOUT_VERSION
            )));
        }
        if let Some(d) = &self.door {
            d.build().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical TOML serialization, with the output
    /// location (`out_dir`, `run_name`) blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.run_name.clear();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Randomization ranges with the fixed-door override folded in.
    pub fn ranges(&self) -> RandomizationRanges {
        let mut r = self.randomization.clone();
        if let Some(d) = &self.door {
            pin_door(&mut r, d);
        }
        r
    }

    pub fn settings(&self) -> EnvSettings {
        EnvSettings {
            env: self.env.clone(),
            robot: self.robot.clone(),
            reward: self.reward.clone(),
            ranges: self.ranges(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_name)
    }
}

/// Collapse every door range to the values of `d`.
pub fn pin_door(r: &mut RandomizationRanges, d: &DoorConfig) {
    let p = |v: f64| [v, v];
    r.d_w = p(d.d_w);
    r.d_t = p(d.d_t);
    r.h_l = p(d.h_l);
    r.h_h = p(d.h_h);
    r.h_o = p(d.h_o);
    r.mass = p(d.mass);
    r.tau_hinge = p(d.tau_hinge);
    r.p_tau_hinge_zero = 0.0;
    r.tau_handle = p(d.tau_handle);
    r.p_tau_handle_zero = 0.0;
    r.k_ar = p(d.k_ar);
    r.alpha_dc = p(d.alpha_dc);
    r.p_damping_zero = 0.0;
    r.phi_max_deg = p(d.phi_max.to_degrees());
    r.door_types = vec![DoorType::new(d.opening_dir, d.hinge_side)];
}

fn single_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
