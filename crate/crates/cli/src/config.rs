//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by `--set section.key=value` flags. Unknown keys are usage errors.

use std::path::Path;

use poe_core::forge::ForgeConfig;
use poe_core::panel::PanelConfig;
use poe_core::trainer::{LossKind, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const SEED_ENV: &str = "POE_SEED";

/// Architecture knobs; vocabulary size and domains come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub bottleneck: usize,
    pub max_len: usize,
    pub init_range: f64,
    /// Tokens seen fewer times than this map to the unknown token.
    pub min_count: usize,
}

impl Default for PanelSection {
    fn default() -> Self {
        let p = PanelConfig::default();
        Self {
            layers: p.layers,
            hidden: p.hidden,
            heads: p.heads,
            ffn: p.ffn,
            bottleneck: p.bottleneck,
            max_len: p.max_len,
            init_range: p.init_range,
            min_count: 1,
        }
    }
}

impl PanelSection {
    pub fn panel_config(&self, vocab_size: usize, domains: Vec<String>) -> PanelConfig {
        PanelConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            bottleneck: self.bottleneck,
            max_len: self.max_len,
            vocab_size,
            init_range: self.init_range,
            domains,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterSection {
    /// Run the per-domain adapter finetuning stage after multitask training.
    pub enabled: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self {
            enabled: true,
            train: TrainConfig {
                patience: 3,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeSection {
    /// Per-pair pull of the rule-based teacher's confidence toward 0.5.
    pub teacher_noise: f64,
    #[serde(flatten)]
    pub config: ForgeConfig,
}

impl Default for ForgeSection {
    fn default() -> Self {
        Self {
            teacher_noise: 0.05,
            config: ForgeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FewShotSection {
    /// Percentages of the annotated set drawn for finetuning.
    pub k: Vec<f64>,
    pub seeds: usize,
    pub adapter_only: bool,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for FewShotSection {
    fn default() -> Self {
        Self {
            k: vec![10.0, 20.0, 30.0, 40.0],
            seeds: 10,
            adapter_only: false,
            train: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::fewshot()
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Root seed; every stage seed is derived from it.
    pub seed: u64,
    pub panel: PanelSection,
    pub train: TrainConfig,
    pub adapter: AdapterSection,
    pub forge: ForgeSection,
    pub fewshot: FewShotSection,
}

fn overlay(base: &mut Value, patch: Value, path: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let at = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v, &at)?,
                    None => return Err(CliError::usage(format!("unknown config key `{at}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            if v.is_object() {
                return Err(CliError::usage(format!(
                    "config key `{path}` is not a section"
                )));
            }
            *slot = v;
            Ok(())
        }
    }
}

fn toml_to_json(v: toml::Value) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::usage(e.to_string()))
}

impl RunConfig {
    /// Resolves the effective configuration. Seed precedence: `--seed`,
    /// then the file, then the `POE_SEED` environment variable, then 0.
    pub fn load(
        file: Option<&Path>,
        sets: &[String],
        seed_flag: Option<u64>,
    ) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        let mut file_has_seed = false;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
                CliError::usage(format!("config {}: {e}", path.display()))
            })?;
            file_has_seed = table.contains_key("seed");
            overlay(&mut value, toml_to_json(toml::Value::Table(table))?, "")?;
        }
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| {
                CliError::usage(format!("--set expects section.key=value, got `{s}`"))
            })?;
            let parsed: toml::Table = format!("v = {raw}")
                .parse()
                .or_else(|_| format!("v = {}", toml::Value::String(raw.to_string())).parse())
                .map_err(|e: toml::de::Error| CliError::usage(e.to_string()))?;
            let mut patch = toml_to_json(parsed["v"].clone())?;
            for part in key.trim().rsplit('.') {
                let mut m = Map::new();
                m.insert(part.to_string(), patch);
                patch = Value::Object(m);
            }
            file_has_seed |= key.trim() == "seed";
            overlay(&mut value, patch, "")?;
        }
        let mut cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| CliError::usage(format!("invalid config: {e}")))?;
        if let Some(s) = seed_flag {
            cfg.seed = s;
        } else if !file_has_seed {
            if let Ok(env) = std::env::var(SEED_ENV) {
                cfg.seed = env.trim().parse().map_err(|_| {
                    CliError::usage(format!("{SEED_ENV}={env} is not an unsigned integer"))
                })?;
            }
        }
        cfg.train.seed = cfg.seed;
        cfg.adapter.train.seed = cfg.seed;
        cfg.fewshot.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        self.adapter.train.validate()?;
        self.fewshot.train.validate()?;
        self.forge.config.validate()?;
        if self.fewshot.train.loss != LossKind::Mse {
            return Err(CliError::usage("fewshot.loss must be \"mse\""));
        }
        if !(0.0..=1.0).contains(&self.forge.teacher_noise) {
            return Err(CliError::usage("forge.teacher_noise must lie in [0, 1]"));
        }
        if self.fewshot.seeds == 0 || self.fewshot.k.is_empty() {
            return Err(CliError::usage("fewshot needs at least one seed and one K"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 9\n[panel]\nlayers = 2\n[train]\nlr = 0.01\nbatch_size = 4\n",
        )
        .unwrap();
        let cfg = RunConfig::load(
            Some(&path),
            &["train.lr=0.5".into(), "adapter.enabled=false".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.panel.layers, 2);
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.seed, 9);
        assert!(!cfg.adapter.enabled);
        assert_eq!(cfg.panel.hidden, PanelSection::default().hidden);
        let flagged = RunConfig::load(Some(&path), &[], Some(3)).unwrap();
        assert_eq!(flagged.seed, 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["train.learning_rate=1".into()], None).unwrap_err();
        assert_eq!(err.kind, crate::error::ExitKind::Usage);
        assert!(RunConfig::load(None, &["nosuch=1".into()], None).is_err());
        assert!(RunConfig::load(None, &["train=1".into()], None).is_err());
    }

    #[test]
    fn enum_and_list_values_parse() {
        let cfg = RunConfig::load(
            None,
            &["train.sampling=uniform".into(), "fewshot.k=[40]".into()],
            None,
        );
        let cfg = cfg.unwrap();
        assert_eq!(cfg.fewshot.k, vec![40.0]);
        assert_eq!(cfg.train.sampling, poe_core::trainer::Sampling::Uniform);
    }
}
