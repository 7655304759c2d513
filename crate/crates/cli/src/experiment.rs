use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use opforge::dataset::{build_dataset_with, derive_seed, load_corpus, synth_corpus, table_order, Original, Splits};
use opforge::model::{save_checkpoint, Model};
use opforge::trainer::{evaluate, train, ConfusionMatrix, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Source};

const TAG_MODEL_INIT: u64 = 0x4d4f_4445_4c;

pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CURVE_FILE: &str = "curve.csv";
pub const CHECKPOINT_FILE: &str = "model.ofcnn";
pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest_hash: String,
    pub train: TrainReport,
    pub test_accuracy: f64,
    pub test_confusion: ConfusionMatrix,
}

/// Seed of the weight initialisation for a given trainer seed.
pub fn model_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.trainer.seed, &[TAG_MODEL_INIT])
}

pub fn originals(config: &ExperimentConfig) -> Result<Vec<Original>> {
    let ds = &config.dataset;
    let mut out = match &ds.source {
        Source::Synth => synth_corpus(&ds.synth, ds.originals).context("generating synthetic originals")?,
        Source::Corpus { path } => load_corpus(path, ds.crop).context("loading corpus")?,
        Source::Forged { path } => bail!("{} is a forged dataset, not a corpus of originals", path.display()),
    };
    if ds.originals > 0 {
        out.truncate(ds.originals);
    }
    if out.is_empty() {
        bail!("no original images available");
    }
    Ok(out)
}

/// Builds the labelled splits named by the config. `resplit` 0 uses the
/// dataset seed itself; later re-splits derive fresh seeds from it.
pub fn dataset(config: &ExperimentConfig, resplit: u64) -> Result<Splits> {
    let ds = &config.dataset;
    if let Source::Forged { path } = &ds.source {
        let splits = Splits::load(path).context("loading forged dataset")?;
        if splits.classes() != table_order(&ds.classes).as_slice() || splits.crop != ds.crop {
            bail!(
                "forged dataset at {} has classes {:?} at crop {}, config asks for {:?} at {}",
                path.display(),
                splits.classes(),
                splits.crop,
                ds.classes,
                ds.crop
            );
        }
        return Ok(splits);
    }
    let seed = if resplit == 0 { ds.seed } else { derive_seed(ds.seed, &[resplit]) };
    let originals = originals(config)?;
    build_dataset_with(&originals, &ds.classes, ds.crop, &ds.ratios, seed, &ds.fixed).context("forging dataset")
}

pub fn init_model(config: &ExperimentConfig) -> Result<Model> {
    Model::build(&config.model, &mut ChaCha8Rng::seed_from_u64(model_seed(config))).context("building model")
}

/// Trains on `splits` and evaluates the test split; nothing is written.
pub fn train_on(config: &ExperimentConfig, splits: &Splits) -> Result<(Model, ExperimentReport)> {
    let mut model = init_model(config)?;
    let started = Instant::now();
    let report = train(&mut model, &splits.train, &splits.validation, &config.trainer).context("training")?;
    log::info!(
        "trained {} epochs ({} iterations) in {:.1}s",
        report.epochs.len(),
        report.total_iterations,
        started.elapsed().as_secs_f64()
    );
    let (test_accuracy, test_confusion) =
        evaluate(&model, &splits.test, config.trainer.batch_size).context("evaluating test split")?;
    Ok((
        model,
        ExperimentReport {
            manifest_hash: splits.manifest_hash(),
            train: report,
            test_accuracy,
            test_confusion,
        },
    ))
}

pub fn write_artifacts(dir: &Path, config: &ExperimentConfig, splits: &Splits, model: &Model, report: &ExperimentReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let write = |name: &str, contents: String| {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    };
    config.save(&dir.join(CONFIG_FILE))?;
    write(MANIFEST_FILE, splits.manifest_jsonl())?;
    write(REPORT_FILE, serde_json::to_string_pretty(report)? + "\n")?;
    write(CONFUSION_FILE, report.test_confusion.to_csv())?;
    write(CURVE_FILE, report.train.curve_csv())?;
    save_checkpoint(model, &dir.join(CHECKPOINT_FILE)).context("writing checkpoint")?;
    Ok(())
}

/// Forges (or loads) the dataset, trains, evaluates the test split and
/// writes the config, manifest, report, confusion matrix, accuracy curve and
/// checkpoint under `out_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let splits = dataset(config, 0)?;
    let (model, report) = train_on(config, &splits)?;
    write_artifacts(&config.out_dir, config, &splits, &model, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResplitSummary {
    pub test_accuracies: Vec<f64>,
    pub mean_test_accuracy: f64,
}

/// [`run_experiment`] over `n` independent re-splits, each in
/// `out_dir/resplit-<r>`, plus a summary of the mean test accuracy.
pub fn run_resplits(config: &ExperimentConfig, n: u64) -> Result<ResplitSummary> {
    if n <= 1 {
        let report = run_experiment(config)?;
        return Ok(ResplitSummary {
            test_accuracies: vec![report.test_accuracy],
            mean_test_accuracy: report.test_accuracy,
        });
    }
    config.validate()?;
    let mut accs = Vec::new();
    for r in 0..n {
        let splits = dataset(config, r)?;
        let (model, report) = train_on(config, &splits)?;
        write_artifacts(&config.out_dir.join(format!("resplit-{r}")), config, &splits, &model, &report)?;
        accs.push(report.test_accuracy);
    }
    let summary = ResplitSummary {
        mean_test_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
        test_accuracies: accs,
    };
    fs::write(config.out_dir.join("resplits.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
