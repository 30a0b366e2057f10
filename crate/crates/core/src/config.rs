//! JSON run configuration for the `stream` and `audit` commands.
//!
//! ```json
//! {
//!   "version": 1,
//!   "alpha": 0.1,
//!   "horizon": 10000,
//!   "selection": {"kind": "sign_determining", "rule": {"rule": "symmetric"}},
//!   "intervals": {"rule": "symmetric"}
//! }
//! ```
//!
//! `w0` defaults to `alpha/2`, `gamma` to the default weights (or an explicit
//! list), and `intervals` to the selection rule's own marginal rule. Unknown
//! keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{IntervalMode, ProtocolConfig};
use crate::scheduler::GammaSequence;
use crate::selection::RuleSpec;

pub const CONFIG_VERSION: u32 = 1;

/// Weight sequence in a config file: `"default"` or explicit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaConfig {
    Named(String),
    Weights(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub alpha: f64,
    #[serde(default)]
    pub w0: Option<f64>,
    #[serde(default)]
    pub gamma: Option<GammaConfig>,
    pub horizon: usize,
    pub selection: RuleSpec,
    #[serde(default)]
    pub intervals: Option<IntervalMode>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        cfg.to_protocol()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text)
    }

    pub fn gamma_sequence(&self) -> Result<GammaSequence> {
        match &self.gamma {
            None => Ok(GammaSequence::lord_default(self.horizon)),
            Some(GammaConfig::Named(n)) if n == "default" => Ok(GammaSequence::lord_default(self.horizon)),
            Some(GammaConfig::Named(n)) => Err(Error::Config(format!(
                "unknown gamma sequence {n:?}; use \"default\" or a list of weights"
            ))),
            Some(GammaConfig::Weights(w)) => GammaSequence::from_weights(w.clone()),
        }
    }

    /// The validated protocol configuration.
    pub fn to_protocol(&self) -> Result<ProtocolConfig> {
        let mut p = ProtocolConfig::new(self.alpha, self.selection.clone(), self.horizon);
        if let Some(w0) = self.w0 {
            p.w0 = w0;
        }
        p.gamma = self.gamma_sequence()?;
        if let Some(mode) = self.intervals {
            p = p.with_interval_mode(mode);
        }
        p.validate()?;
        Ok(p)
    }
}
