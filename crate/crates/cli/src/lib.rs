//! Reproducible experiments on top of `opforge`: dataset forging, training,
//! evaluation, architecture ablations and gradient checks.

pub mod ablation;
pub mod config;
pub mod experiment;

use anyhow::{Context, Result};
use opforge::gradsuite::{run_gradient_suite, GradSuite};

pub use ablation::{run_ablation, AblationReport, Axis, VariantResult};
pub use config::{DatasetConfig, ExperimentConfig, Source};
pub use experiment::{run_experiment, run_resplits, ExperimentReport};

pub const THREADS_ENV: &str = "OPFORGE_THREADS";

/// Caps the global worker pool at `OPFORGE_THREADS` when it is set.
/// Returns the cap, if any.
pub fn init_threads() -> Result<Option<usize>> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV}={value:?} is not a thread count"))?;
    let n = n.max(1);
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(Some(n))
}

/// Seeds `base..base+count` through the layer and model gradient checks.
pub fn run_gradcheck(base_seed: u64, count: u64, analytic_scale: f64) -> Result<GradSuite> {
    let seeds: Vec<u64> = (base_seed..base_seed + count).collect();
    Ok(run_gradient_suite(&seeds, analytic_scale)?)
}

/// Per-layer table: worst relative error, the seed that produced it, verdict.
pub fn gradcheck_table(suite: &GradSuite) -> String {
    let mut out = format!("{:<24} {:>14} {:>12}  result\n", "layer", "max rel err", "worst seed");
    for s in suite.summary() {
        out.push_str(&format!(
            "{:<24} {:>14.3e} {:>12}  {}\n",
            s.layer,
            s.max_relative_error,
            s.worst_seed,
            if s.passed { "pass" } else { "FAIL" }
        ));
    }
    out
}
