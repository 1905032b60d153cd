//! Run configuration shared by `estimate` and `scale-sim`.

use std::path::{Path, PathBuf};

use akf_core::estimators::{EstimatorKind, EstimatorParams};
use akf_core::evalkit::SignalSpec;
use akf_core::sim::{SimConfig, SimWorkload};
use akf_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const COMPARISON_KINDS: [EstimatorKind; 7] = [
    EstimatorKind::Ekf,
    EstimatorKind::Ukf,
    EstimatorKind::EkfPca,
    EstimatorKind::UkfPca,
    EstimatorKind::JointEkfPca,
    EstimatorKind::JointUkfPca,
    EstimatorKind::AkfPca,
];

pub const STABILITY_KINDS: [EstimatorKind; 4] = [
    EstimatorKind::AkfPca,
    EstimatorKind::EkfPca,
    EstimatorKind::Ukf,
    EstimatorKind::Passive,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Report label; defaults to the signal name or `scale-sim`.
    pub experiment: Option<String>,
    /// Every random stream of a run is derived from this.
    pub seed: u64,
    pub signal: SignalSpec,
    /// Defaults to the comparison set or the stability set.
    pub estimators: Option<Vec<EstimatorKind>>,
    pub params: EstimatorParams,
    /// Pretrained attention parameters (JSON) used instead of training.
    pub attention_params: Option<PathBuf>,
    pub sim: SimConfig,
    pub workload: SimWorkload,
    pub n_iter: usize,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            seed: 0,
            signal: SignalSpec::default(),
            estimators: None,
            params: EstimatorParams::default(),
            attention_params: None,
            sim: SimConfig::default(),
            workload: SimWorkload::default(),
            n_iter: 10,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.sim.validate()?;
        if self.estimators.as_ref().is_some_and(|k| k.is_empty()) {
            return Err(Error::Validation("estimator list is empty".into()));
        }
        Ok(())
    }

    pub fn comparison_kinds(&self) -> Vec<EstimatorKind> {
        self.estimators.clone().unwrap_or_else(|| COMPARISON_KINDS.to_vec())
    }

    pub fn stability_kinds(&self) -> Vec<EstimatorKind> {
        self.estimators.clone().unwrap_or_else(|| STABILITY_KINDS.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"seed": 1, "sed": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{"params": {"window": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"estimators": ["ekf", "kalman"]}"#).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 7, "signal": {"kind": "cpu-synthetic"}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.n_iter, 10);
        assert_eq!(cfg.comparison_kinds().len(), 7);
        assert_eq!(cfg.signal.name(), "cpu-synthetic");
    }
}
