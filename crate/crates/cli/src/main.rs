use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use opforge::dataset::{Class, Split};
use opforge::model::{load_checkpoint, shape_report};
use opforge::trainer::evaluate;
use opforge_cli::{experiment, gradcheck_table, init_threads, run_ablation, run_gradcheck, run_resplits, Axis, ExperimentConfig};

#[derive(Parser)]
#[command(name = "opforge", version, about = "Forge operation datasets, train and ablate the residual CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Full experiment config (JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for forging, splitting, initialisation and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated class list, e.g. Orig,MedF,GC,JPEG.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<Class>>,
    #[arg(long)]
    originals: Option<usize>,
    /// Crop size, also used as the network input size.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    base_width: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(classes) = &self.classes {
            cfg.dataset.classes = classes.clone();
            cfg.model.num_classes = classes.len();
        }
        if let Some(n) = self.originals {
            cfg.dataset.originals = n;
        }
        if let Some(crop) = self.crop {
            cfg.dataset.crop = crop;
            cfg.model.input_size = crop;
        }
        if let Some(w) = self.base_width {
            cfg.model.base_width = w;
        }
        if let Some(e) = self.epochs {
            cfg.trainer.max_epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.trainer.batch_size = b;
        }
        if let Some(lr) = self.learning_rate {
            cfg.trainer.learning_rate = lr;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the labelled dataset and write it as PGM files plus a manifest.
    Forge(Common),
    /// Train, evaluate the test split and write report, curves and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Independent re-splits to train and average.
        #[arg(long, default_value_t = 1)]
        resplits: u64,
    },
    /// Evaluate a checkpoint on one split of the configured dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Train every variant of one architecture axis on a shared dataset.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// hpf, expansion, last_pool or activation.
        #[arg(long)]
        axis: Axis,
        /// Restrict to these variants (comma-separated).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Finite-difference checks of every layer and the composed model.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
        /// Double every analytic gradient; the run must then fail.
        #[arg(long)]
        inject_bug: bool,
    },
    /// Print layer output shapes and parameter counts.
    Shapes {
        #[command(flatten)]
        common: Common,
        /// Input size M (a multiple of 32).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Print the resolved experiment config as JSON.
    Config(Common),
}

fn parse_split(name: &str) -> Result<Split> {
    serde_json::from_str(&format!("\"{name}\"")).with_context(|| format!("unknown split {name:?}"))
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(n) = init_threads()? {
        log::info!("worker threads capped at {n}");
    }
    match cli.command {
        Command::Forge(common) => {
            let cfg = common.resolve()?;
            let splits = experiment::dataset(&cfg, 0)?;
            splits.save(&cfg.out_dir).context("writing dataset")?;
            cfg.save(&cfg.out_dir.join(experiment::CONFIG_FILE))?;
            println!(
                "forged {} / {} / {} images into {}",
                splits.train.len(),
                splits.validation.len(),
                splits.test.len(),
                cfg.out_dir.display()
            );
            println!("manifest hash {}", splits.manifest_hash());
        }
        Command::Train { common, resplits } => {
            let cfg = common.resolve()?;
            let summary = run_resplits(&cfg, resplits)?;
            for (r, acc) in summary.test_accuracies.iter().enumerate() {
                println!("split {r}: test accuracy {acc:.4}");
            }
            println!("mean test accuracy {:.4}", summary.mean_test_accuracy);
            println!("artifacts in {}", cfg.out_dir.display());
        }
        Command::Eval { common, checkpoint, split } => {
            let cfg = common.resolve()?;
            let split = parse_split(&split)?;
            let model = load_checkpoint(&checkpoint).context("loading checkpoint")?;
            let splits = experiment::dataset(&cfg, 0)?;
            let (acc, matrix) = evaluate(&model, splits.get(split), cfg.trainer.batch_size)?;
            print!("{}", matrix.to_csv());
            println!("accuracy {acc:.4}");
        }
        Command::Ablate { common, axis, variants } => {
            let cfg = common.resolve()?;
            let report = run_ablation(&cfg, axis, &variants)?;
            print!("{}", report.table_csv());
            println!("manifest hash {}", report.manifest_hash);
        }
        Command::Gradcheck { seeds, base_seed, inject_bug } => {
            let scale = if inject_bug { 2.0 } else { 1.0 };
            let list: Vec<String> = (base_seed..base_seed + seeds).map(|s| s.to_string()).collect();
            println!("seeds: {}", list.join(" "));
            let suite = run_gradcheck(base_seed, seeds, scale)?;
            print!("{}", gradcheck_table(&suite));
            println!("threshold {:e}: {}", suite.threshold, if suite.passed() { "all layers pass" } else { "FAILED" });
            return Ok(suite.passed());
        }
        Command::Shapes { common, size } => {
            let mut cfg = common.resolve()?.model;
            if let Some(m) = size {
                cfg.input_size = m;
            }
            let report = shape_report(&cfg)?;
            println!("{:<20} {:>20} {:>12}", "layer", "output", "params");
            for l in &report {
                let [c, h, w] = l.shape;
                println!("{:<20} {:>20} {:>12}", l.name, format!("{c}x{h}x{w}"), l.params);
            }
            println!("total parameters {}", report.iter().map(|l| l.params).sum::<usize>());
        }
        Command::Config(common) => {
            println!("{}", serde_json::to_string_pretty(&common.resolve()?)?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
