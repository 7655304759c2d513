use std::fmt;
use std::fs;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use opforge::model::{Expansion, HpfMode, LastPool};
use opforge::ndtensor::Activation;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiment::{dataset, train_on, write_artifacts, CURVE_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Hpf,
    Expansion,
    LastPool,
    Activation,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Hpf => "hpf",
            Axis::Expansion => "expansion",
            Axis::LastPool => "last_pool",
            Axis::Activation => "activation",
        }
    }

    /// Every setting studied on this axis, baseline first.
    pub fn variants(self) -> &'static [&'static str] {
        match self {
            Axis::Hpf => &["untrainable", "trainable", "random", "no_high_pass"],
            Axis::Expansion => &["on", "off", "on_plus_pool"],
            Axis::LastPool => &["gap", "max_s2", "avg_s2"],
            Axis::Activation => &["tanh", "relu", "sigmoid"],
        }
    }

    /// `config` with this axis set to `variant`.
    pub fn apply(self, config: &ExperimentConfig, variant: &str) -> Result<ExperimentConfig> {
        let mut out = config.clone();
        let quoted = format!("\"{variant}\"");
        let bad = |e: serde_json::Error| anyhow::anyhow!("unknown {} variant {variant:?}: {e}", self.name());
        match self {
            Axis::Hpf => out.model.hpf_mode = serde_json::from_str::<HpfMode>(&quoted).map_err(bad)?,
            Axis::Expansion => out.model.expansion = serde_json::from_str::<Expansion>(&quoted).map_err(bad)?,
            Axis::LastPool => out.model.last_pool = serde_json::from_str::<LastPool>(&quoted).map_err(bad)?,
            Axis::Activation => out.model.activation = serde_json::from_str::<Activation>(&quoted).map_err(bad)?,
        }
        out.out_dir = config.out_dir.join(variant);
        Ok(out)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hpf" => Ok(Axis::Hpf),
            "expansion" => Ok(Axis::Expansion),
            "last_pool" => Ok(Axis::LastPool),
            "activation" => Ok(Axis::Activation),
            _ => Err(format!("unknown axis {s:?}; expected hpf, expansion, last_pool or activation")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: String,
    pub stalled: bool,
    pub final_validation_accuracy: f64,
    pub test_accuracy: f64,
    pub report: crate::experiment::ExperimentReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    /// Every variant trained on this dataset.
    pub manifest_hash: String,
    pub model_seed: u64,
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// `variant,final_validation_accuracy,test_accuracy,stalled`.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("variant,final_validation_accuracy,test_accuracy,stalled\n");
        for v in &self.variants {
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.variant, v.final_validation_accuracy, v.test_accuracy, v.stalled
            ));
        }
        out
    }

    /// Validation accuracy against iteration, one row per variant and epoch.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("variant,epoch,iterations,validation_accuracy\n");
        for v in &self.variants {
            for e in &v.report.train.epochs {
                out.push_str(&format!("{},{},{},{}\n", v.variant, e.epoch, e.iterations, e.validation_accuracy));
            }
        }
        out
    }
}

/// Trains each listed variant of `axis` (all of them when `only` is empty)
/// on one shared dataset and initialisation seed. Per-variant artifacts go
/// to `out_dir/<variant>`; the combined report to `out_dir`.
pub fn run_ablation(config: &ExperimentConfig, axis: Axis, only: &[String]) -> Result<AblationReport> {
    config.validate()?;
    let names: Vec<&str> = if only.is_empty() {
        axis.variants().to_vec()
    } else {
        for v in only {
            if !axis.variants().contains(&v.as_str()) {
                bail!("{v:?} is not a {axis} variant; expected one of {:?}", axis.variants());
            }
        }
        only.iter().map(String::as_str).collect()
    };
    let splits = dataset(config, 0)?;
    let manifest_hash = splits.manifest_hash();
    let mut variants = Vec::new();
    for name in names {
        let variant_config = axis.apply(config, name)?;
        variant_config.validate()?;
        log::info!("{axis} ablation: training {name}");
        let (model, report) = train_on(&variant_config, &splits).with_context(|| format!("variant {name}"))?;
        write_artifacts(&variant_config.out_dir, &variant_config, &splits, &model, &report)?;
        variants.push(VariantResult {
            variant: name.to_string(),
            stalled: report.train.stalled(),
            final_validation_accuracy: report.train.final_validation_accuracy,
            test_accuracy: report.test_accuracy,
            report,
        });
    }
    let report = AblationReport {
        axis,
        manifest_hash,
        model_seed: crate::experiment::model_seed(config),
        variants,
    };
    let dir = &config.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(dir.join("ablation.csv"), report.table_csv())?;
    fs::write(dir.join(CURVE_FILE), report.curves_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_parses() {
        let cfg = ExperimentConfig::default();
        for axis in [Axis::Hpf, Axis::Expansion, Axis::LastPool, Axis::Activation] {
            assert_eq!(axis.name().parse::<Axis>().unwrap(), axis);
            for v in axis.variants() {
                let c = axis.apply(&cfg, v).unwrap();
                assert!(c.out_dir.ends_with(v));
            }
            assert!(axis.apply(&cfg, "bogus").is_err());
        }
        assert_eq!(Axis::Hpf.variants().len(), 4);
        assert!("pool".parse::<Axis>().is_err());
    }
}
