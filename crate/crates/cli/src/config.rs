use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use opforge::dataset::{Class, SplitRatios, SynthConfig};
use opforge::imageops::OperationSpec;
use opforge::model::ArchitectureConfig;
use opforge::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    /// Procedural textures generated from `dataset.synth`.
    Synth,
    /// A directory of square PGM originals.
    Corpus { path: PathBuf },
    /// A dataset previously written by `forge`.
    Forged { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub source: Source,
    /// Number of originals to use; synthetic sources generate this many,
    /// corpora are truncated to it (0 keeps all).
    pub originals: usize,
    pub crop: usize,
    pub classes: Vec<Class>,
    pub seed: u64,
    pub synth: SynthConfig,
    pub ratios: SplitRatios,
    /// Operations whose parameters are pinned instead of sampled.
    pub fixed: Vec<OperationSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: Source::Synth,
            originals: 2000,
            crop: 64,
            classes: vec![Class::Orig, Class::Op(opforge::imageops::OperationKind::MedF)],
            seed: 0,
            synth: SynthConfig::default(),
            ratios: SplitRatios::default(),
            fixed: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ArchitectureConfig,
    pub trainer: TrainConfig,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults: 64×64 synthetic crops and a narrow network.
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig::default(),
            model: ArchitectureConfig {
                input_size: 64,
                num_classes: 2,
                base_width: 4,
                init_std: 0.1,
                ..Default::default()
            },
            trainer: TrainConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing config {}", path.display()))
    }

    /// One seed for forging, splitting, initialisation and shuffling.
    pub fn set_seed(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.dataset.synth.seed = seed;
        self.trainer.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.classes.len() < 2 {
            bail!("dataset needs at least two classes, got {:?}", self.dataset.classes);
        }
        let mut seen = self.dataset.classes.clone();
        seen.sort_by_key(|c| c.code());
        seen.dedup();
        if seen.len() != self.dataset.classes.len() {
            bail!("duplicate classes in {:?}", self.dataset.classes);
        }
        if self.model.num_classes != self.dataset.classes.len() {
            bail!(
                "model.num_classes is {} but the dataset lists {} classes",
                self.model.num_classes,
                self.dataset.classes.len()
            );
        }
        if self.model.input_size != self.dataset.crop {
            bail!("model.input_size {} differs from dataset.crop {}", self.model.input_size, self.dataset.crop);
        }
        if matches!(self.dataset.source, Source::Synth) && self.dataset.originals == 0 {
            bail!("a synthetic dataset needs originals >= 1");
        }
        self.dataset.ratios.validate()?;
        self.model.validate()?;
        self.trainer.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&text).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"trainer": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(partial.trainer.max_epochs, 3);
        assert_eq!(partial.dataset, DatasetConfig::default());
    }

    #[test]
    fn class_count_must_match_model() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.num_classes = 3;
        assert!(cfg.validate().is_err());
        cfg.model.num_classes = 2;
        cfg.dataset.crop = 32;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn source_json_shape() {
        let s: Source = serde_json::from_str(r#"{"kind": "corpus", "path": "/data"}"#).unwrap();
        assert_eq!(s, Source::Corpus { path: "/data".into() });
    }
}
