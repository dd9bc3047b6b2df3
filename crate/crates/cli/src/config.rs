use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempose_core::baselines::OneEuroParams;
use tempose_core::refine::RefineConfig;
use tempose_core::synth::SynthConfig;
use tempose_core::tpn::{TpnConfig, TrainConfig};

use crate::CliError;

/// Sequence seed offsets of the three corpus splits.
pub const TRAIN_SEED_BASE: u64 = 0;
pub const VAL_SEED_BASE: u64 = 1000;
pub const TEST_SEED_BASE: u64 = 2000;
const MAX_SPLIT_LEN: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub model: PathBuf,
    pub predictions: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            corpus: "runs/corpus".into(),
            model: "runs/model".into(),
            predictions: "runs/predictions".into(),
            reports: "runs/reports".into(),
        }
    }
}

/// Number of sequences per corpus split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Splits {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: 20,
            val: 5,
            test: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// 3D-PCK threshold in mm.
    pub pck_threshold: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            pck_threshold: tempose_core::metrics::PCK_THRESHOLD_MM,
        }
    }
}

/// Everything a run depends on. `seed` drives every random generator: it
/// replaces `synth.motion_seed` and `train.seed` when the config is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub splits: Splits,
    pub synth: SynthConfig,
    pub tpn: TpnConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub one_euro: OneEuroParams,
    pub metrics: MetricOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            paths: Paths::default(),
            splits: Splits::default(),
            synth: SynthConfig::default(),
            tpn: TpnConfig::desk(),
            train: TrainConfig::desk(),
            refine: RefineConfig::default(),
            one_euro: OneEuroParams::default(),
            metrics: MetricOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config laid over the defaults, applies the seed
    /// override, propagates the seed and validates.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    CliError::Usage(format!("cannot read config {}: {e}", p.display()))
                })?;
                let bad =
                    |e: serde_json::Error| CliError::Usage(format!("config {}: {e}", p.display()));
                let user: Value = serde_json::from_str(&text).map_err(bad)?;
                let mut merged = serde_json::to_value(ExperimentConfig::default()).map_err(bad)?;
                merge(&mut merged, user);
                serde_json::from_value(merged).map_err(bad)?
            }
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.synth.motion_seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.tpn.validate()?;
        self.train.validate()?;
        self.refine.validate()?;
        let s = &self.splits;
        if s.train == 0 || s.test == 0 {
            return Err(CliError::Usage(
                "train and test splits need at least one sequence".into(),
            ));
        }
        if [s.train, s.val, s.test].iter().any(|&n| n > MAX_SPLIT_LEN) {
            return Err(CliError::Usage(format!(
                "splits are limited to {MAX_SPLIT_LEN} sequences"
            )));
        }
        if self.tpn.num_joints != self.synth.skeleton.num_joints()
            || self.tpn.root_index != self.synth.skeleton.root_index
        {
            return Err(CliError::Usage(
                "network joint count or root index differs from the generator skeleton".into(),
            ));
        }
        if !(self.metrics.pck_threshold > 0.0) {
            return Err(CliError::Usage("pck_threshold must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON serialization, leaving out `paths`.
    pub fn hash(&self) -> String {
        let relocated = ExperimentConfig {
            paths: Paths::default(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&relocated).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Overwrites `base` with `patch`, recursing into objects present in both.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let cfg = ExperimentConfig::load(None, None).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn seed_override_propagates() {
        let cfg = ExperimentConfig::load(None, Some(42)).unwrap();
        assert_eq!(
            (cfg.seed, cfg.synth.motion_seed, cfg.train.seed),
            (42, 42, 42)
        );
        let base = ExperimentConfig::load(None, None).unwrap();
        assert_ne!(cfg.hash(), base.hash());
        let moved = ExperimentConfig {
            paths: Paths {
                corpus: "elsewhere".into(),
                ..Paths::default()
            },
            ..base.clone()
        };
        assert_eq!(moved.hash(), base.hash());
    }

    #[test]
    fn partial_file_keeps_defaults_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"seed": 5, "splits": {"train": 2}, "train": {"epochs": 1}}"#,
        )
        .unwrap();
        let cfg = ExperimentConfig::load(Some(&p), None).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.splits.train, 2);
        assert_eq!(cfg.splits.test, 10);
        assert_eq!(cfg.train.epochs, 1);
        assert_eq!(cfg.train.batch_size, TrainConfig::desk().batch_size);

        std::fs::write(&p, r#"{"sed": 5}"#).unwrap();
        assert!(matches!(
            ExperimentConfig::load(Some(&p), None),
            Err(CliError::Usage(_))
        ));
        assert!(ExperimentConfig::load(Some(&dir.path().join("missing.json")), None).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"refine": {"median_window": 4}}"#).unwrap();
        assert_eq!(
            ExperimentConfig::load(Some(&p), None)
                .unwrap_err()
                .exit_code(),
            2
        );
        std::fs::write(&p, r#"{"tpn": {"num_joints": 5}}"#).unwrap();
        assert_eq!(
            ExperimentConfig::load(Some(&p), None)
                .unwrap_err()
                .exit_code(),
            2
        );
    }
}
