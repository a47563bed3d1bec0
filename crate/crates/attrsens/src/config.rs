//! Experiment configuration file schema and validation. Validation
//! errors carry a JSON-path-style location (e.g. `models[1].id`).

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::SweepSpec;
use crate::nn::{PgdConfig, TrainConfig};
use crate::tensor::Precision;

fn cfg_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train_count: usize,
    pub eval_count: usize,
    #[serde(default = "default_side")]
    pub image_side: usize,
}

fn default_side() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: String,
    #[serde(default)]
    pub robust: bool,
    #[serde(default)]
    pub seed: u64,
    /// Per-model override of the top-level training block.
    #[serde(default)]
    pub training: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub name: String,
    #[serde(flatten)]
    pub spec: SweepSpec,
    /// Model ids this sweep runs against; empty means all.
    #[serde(default)]
    pub models: Vec<String>,
    /// Also compute deletion/insertion/localization variance.
    #[serde(default)]
    pub accuracy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub name: String,
    pub kind: crate::harness::TrendKind,
    pub sweep: Vec<usize>,
    pub sigma: f64,
    pub regular_model: String,
    pub robust_model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    pub dataset: DatasetConfig,
    pub training: TrainConfig,
    #[serde(default)]
    pub robust_attack: Option<PgdConfig>,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_steps")]
    pub deletion_steps: usize,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub noise_methods: Vec<crate::attribution::MethodSpec>,
    #[serde(default)]
    pub sweeps: Vec<SweepConfig>,
    #[serde(default)]
    pub trends: Vec<TrendConfig>,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn default_precision() -> Precision {
    Precision::Double
}
fn default_steps() -> usize {
    32
}
fn default_noise_sigma() -> f64 {
    0.1
}
fn default_output() -> String {
    "out".to_string()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(&path.display().to_string(), e.to_string()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| cfg_err(&path.display().to_string(), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.train_count < crate::io::CLASS_COUNT {
            return Err(cfg_err(
                "dataset.train_count",
                format!("must be >= {}", crate::io::CLASS_COUNT),
            ));
        }
        if self.dataset.eval_count < 1 {
            return Err(cfg_err("dataset.eval_count", "must be >= 1"));
        }
        if self.dataset.image_side < 44 || self.dataset.image_side % 4 != 0 {
            return Err(cfg_err("dataset.image_side", "must be >= 44 and divisible by 4"));
        }
        if self.models.is_empty() {
            return Err(cfg_err("models", "at least one model required"));
        }
        let mut ids = HashSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if m.id.is_empty() {
                return Err(cfg_err(&format!("models[{i}].id"), "must be non-empty"));
            }
            if !ids.insert(m.id.clone()) {
                return Err(cfg_err(&format!("models[{i}].id"), format!("duplicate id '{}'", m.id)));
            }
            if m.robust && self.robust_attack.is_none() {
                return Err(cfg_err(
                    &format!("models[{i}].robust"),
                    "robust model requires top-level robust_attack",
                ));
            }
        }
        if self.deletion_steps < 1 {
            return Err(cfg_err("deletion_steps", "must be >= 1"));
        }
        if self.noise_sigma < 0.0 {
            return Err(cfg_err("noise_sigma", "must be >= 0"));
        }
        for (i, s) in self.sweeps.iter().enumerate() {
            s.spec
                .validate()
                .map_err(|e| cfg_err(&format!("sweeps[{i}]"), e.to_string()))?;
            for (j, mid) in s.models.iter().enumerate() {
                if !ids.contains(mid) {
                    return Err(cfg_err(
                        &format!("sweeps[{i}].models[{j}]"),
                        format!("unknown model id '{mid}'"),
                    ));
                }
            }
        }
        for (i, t) in self.trends.iter().enumerate() {
            for (field, id) in
                [("regular_model", &t.regular_model), ("robust_model", &t.robust_model)]
            {
                if !ids.contains(id) {
                    return Err(cfg_err(
                        &format!("trends[{i}].{field}"),
                        format!("unknown model id '{id}'"),
                    ));
                }
            }
            if t.sweep.is_empty() {
                return Err(cfg_err(&format!("trends[{i}].sweep"), "must be non-empty"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::MethodSpec;

    fn minimal() -> ExperimentConfig {
        ExperimentConfig {
            base_seed: 0,
            precision: Precision::Double,
            dataset: DatasetConfig { train_count: 60, eval_count: 4, image_side: 64 },
            training: TrainConfig {
                epochs: 1,
                batch_size: 12,
                learning_rate: 0.05,
                lr_decay_factor: 1.0,
                lr_decay_every_epochs: usize::MAX,
                base_seed: 0,
                warmup_epochs: 0,
            },
            robust_attack: None,
            models: vec![ModelConfig { id: "standard".into(), robust: false, seed: 0, training: None }],
            deletion_steps: 16,
            noise_sigma: 0.1,
            noise_methods: vec![],
            sweeps: vec![],
            trends: vec![],
            output_dir: "out".into(),
        }
    }

    #[test]
    fn minimal_config_validates_and_round_trips() {
        let cfg = minimal();
        cfg.validate().unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn duplicate_model_id_reports_json_path() {
        let mut cfg = minimal();
        cfg.models.push(ModelConfig { id: "standard".into(), robust: false, seed: 1, training: None });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("models[1].id"), "{err}");
    }

    #[test]
    fn robust_model_without_attack_is_rejected() {
        let mut cfg = minimal();
        cfg.models.push(ModelConfig { id: "robust".into(), robust: true, seed: 1, training: None });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("models[1].robust"), "{err}");
    }

    #[test]
    fn sweep_with_unknown_model_id_is_rejected() {
        let mut cfg = minimal();
        cfg.sweeps.push(SweepConfig {
            name: "sg".into(),
            spec: SweepSpec {
                method: MethodSpec::SmoothGrad { n_sg: 50, sigma: 0.15, seed: 0 },
                swept_field: "n_sg".into(),
                reference_value: 50.0,
                variant_values: vec![100.0],
            },
            models: vec!["nope".into()],
            accuracy: false,
        });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("sweeps[0].models[0]"), "{err}");
    }

    #[test]
    fn bad_sweep_field_is_rejected_at_validation() {
        let mut cfg = minimal();
        cfg.sweeps.push(SweepConfig {
            name: "bad".into(),
            spec: SweepSpec {
                method: MethodSpec::Gradient {},
                swept_field: "sigma".into(),
                reference_value: 0.1,
                variant_values: vec![0.2],
            },
            models: vec![],
            accuracy: false,
        });
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("sweeps[0]"), "{err}");
    }
}
