//! Run configuration, loadable from TOML with CLI overrides applied on top.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::designers::MetaGradConfig;
use crate::env::gtb::GtbConfig;
use crate::nets::ExplorationSchedule;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvChoice {
    EscapeRoom,
    Economy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignerChoice {
    MetaGrad,
    DualDiscrete,
    DualContinuous,
    StaticSchedule,
    FreeMarket,
}

impl std::str::FromStr for DesignerChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "meta_grad" | "metagrad" => DesignerChoice::MetaGrad,
            "dual_discrete" => DesignerChoice::DualDiscrete,
            "dual_continuous" => DesignerChoice::DualContinuous,
            "static_schedule" | "static" => DesignerChoice::StaticSchedule,
            "free_market" | "free" => DesignerChoice::FreeMarket,
            other => return Err(format!("unknown designer kind: {other}")),
        })
    }
}

impl std::str::FromStr for EnvChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "escape_room" | "er" => EnvChoice::EscapeRoom,
            "economy" | "gtb" => EnvChoice::Economy,
            other => return Err(format!("unknown environment: {other}")),
        })
    }
}

/// Escape-room specific knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ErRunConfig {
    pub n_agents: usize,
    pub lever_threshold: usize,
    pub agent_lr: f64,
    pub agent_hidden: Vec<usize>,
    pub designer_hidden: Vec<usize>,
    pub gamma: f64,
    pub entropy_coef: f64,
    pub explore: ExplorationSchedule,
    pub meta: MetaGradConfig,
    /// Incentive levels available to the discrete dual-RL designer.
    pub dual_levels: Vec<f64>,
    pub dual_lr: f64,
    pub dual_hidden: Vec<usize>,
}

impl Default for ErRunConfig {
    fn default() -> Self {
        ErRunConfig {
            n_agents: 2,
            lever_threshold: 1,
            agent_lr: 1e-3,
            agent_hidden: vec![64, 64],
            designer_hidden: vec![64, 32],
            gamma: 0.99,
            entropy_coef: 0.0166,
            explore: ExplorationSchedule { start: 0.5, end: 0.02, div: 2000 },
            meta: MetaGradConfig::default(),
            dual_levels: vec![0.0, 0.5, 1.0, 1.5, 2.0],
            dual_lr: 1e-3,
            dual_hidden: vec![64, 32],
        }
    }
}

/// Proximal-policy agent knobs for the economy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoRunConfig {
    pub lr: f64,
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub critic_lr: f64,
    pub critic_tau: f64,
}

impl Default for PpoRunConfig {
    fn default() -> Self {
        PpoRunConfig {
            lr: 3e-4,
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.02,
            hidden: vec![64, 64],
            critic_lr: 1e-3,
            critic_tau: 0.05,
        }
    }
}

/// Economy-run knobs: scenario, curriculum, annealing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GtbRunConfig {
    pub scenario: GtbConfig,
    pub agent: PpoRunConfig,
    pub meta: MetaGradConfig,
    pub designer_hidden: Vec<usize>,
    /// Free-market pretraining episodes (curriculum phase 1).
    pub phase1_episodes: u64,
    /// Episodes over which the marginal-rate cap rises from 0.1 to 1.0.
    pub anneal_episodes: u64,
    pub explore: ExplorationSchedule,
    /// Rates for the static-schedule designer; defaults to the US federal
    /// bracket rates.
    pub static_rates: Option<Vec<f64>>,
}

impl Default for GtbRunConfig {
    fn default() -> Self {
        GtbRunConfig {
            scenario: GtbConfig::default(),
            agent: PpoRunConfig::default(),
            meta: MetaGradConfig::default(),
            designer_hidden: vec![64, 32],
            phase1_episodes: 500,
            anneal_episodes: 1000,
            explore: ExplorationSchedule { start: 0.3, end: 0.02, div: 2000 },
            static_rates: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvChoice,
    pub designer: DesignerChoice,
    pub seed: u64,
    pub episodes: u64,
    pub eval_every: u64,
    pub eval_episodes: u64,
    pub er: ErRunConfig,
    pub gtb: GtbRunConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvChoice::EscapeRoom,
            designer: DesignerChoice::MetaGrad,
            seed: 0,
            episodes: 10_000,
            eval_every: 100,
            eval_episodes: 100,
            er: ErRunConfig::default(),
            gtb: GtbRunConfig::default(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overlay a TOML file on top of this configuration; keys present in
    /// the file win, keys absent keep their current (flag or default)
    /// values, recursively through nested tables.
    pub fn overlaid_with_file(&self, path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let file_val: toml::Value = toml::from_str(&text)?;
        let base_val = toml::Value::try_from(self)
            .map_err(|e| ConfigError::Invalid(format!("serializing config: {e}")))?;
        let cfg: RunConfig = overlay(base_val, file_val).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("er.agent_lr", self.er.agent_lr),
            ("er.meta.alpha_id", self.er.meta.alpha_id),
            ("er.meta.alpha_cost", self.er.meta.alpha_cost),
            ("er.dual_lr", self.er.dual_lr),
            ("gtb.agent.lr", self.gtb.agent.lr),
            ("gtb.meta.alpha_id", self.gtb.meta.alpha_id),
        ];
        for (name, v) in positive {
            if v <= 0.0 || !v.is_finite() {
                return Err(ConfigError::Invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(ConfigError::Invalid("eval cadence fields must be > 0".into()));
        }
        if let Some(rates) = &self.gtb.static_rates {
            if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(ConfigError::Invalid("static rates outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

fn overlay(base: toml::Value, over: toml::Value) -> toml::Value {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(bv) => overlay(bv, v),
                    None => v,
                };
                b.insert(k, merged);
            }
            toml::Value::Table(b)
        }
        (_, over) => over,
    }
}

/// Linearly rising cap on marginal tax rates during curriculum phase 2.
pub fn anneal_cap(episode: u64, anneal_episodes: u64) -> f64 {
    if anneal_episodes == 0 {
        return 1.0;
    }
    (0.1 + 0.9 * episode as f64 / anneal_episodes as f64).min(1.0)
}
