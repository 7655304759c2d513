use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Model;
use crate::error::{Error, Result};
use crate::ndtensor::{relative_error, softmax_cross_entropy, Tensor};

/// Relative departure from linear scaling of the one-sided slope gap that
/// marks a max-pool switch inside the probe interval; such coordinates are
/// redrawn.
const KINK_TOLERANCE: f64 = 0.1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpotCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpotCheck {
    pub entries: Vec<SpotCheckEntry>,
    /// Coordinates redrawn because the loss was not smooth around them.
    pub redrawn: usize,
    /// Coordinates skipped because both gradients are exactly zero.
    pub dead: usize,
}

impl SpotCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.relative_error))
    }
}

impl Model {
    /// Compares back-propagated gradients of the batch loss against central
    /// differences on `count` randomly drawn trainable weights.
    pub fn gradient_spot_check<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        labels: &[usize],
        count: usize,
        eps: f64,
        rng: &mut R,
    ) -> Result<SpotCheck> {
        self.spot_check_scaled(batch, labels, count, eps, 1.0, rng)
    }

    /// Self-test hook: identical to [`Model::gradient_spot_check`] but with
    /// every analytic gradient multiplied by `analytic_scale` before comparison.
    pub fn gradient_spot_check_corrupted<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        labels: &[usize],
        count: usize,
        eps: f64,
        analytic_scale: f64,
        rng: &mut R,
    ) -> Result<SpotCheck> {
        self.spot_check_scaled(batch, labels, count, eps, analytic_scale, rng)
    }

    fn spot_check_scaled<R: Rng + ?Sized>(
        &self,
        batch: &Tensor,
        labels: &[usize],
        count: usize,
        eps: f64,
        analytic_scale: f64,
        rng: &mut R,
    ) -> Result<SpotCheck> {
        let mut model = self.clone();
        model.loss_and_gradients(batch, labels)?;
        let trainable: Vec<usize> = (0..model.params.len())
            .filter(|&i| model.params[i].trainable)
            .collect();
        if trainable.is_empty() {
            return Err(Error::invalid("gradient spot check", "model has no trainable parameters"));
        }

        let mut probe = model.clone();
        let mut loss_at = |pi: usize, index: usize, delta: f64| -> Result<f64> {
            let orig = probe.params[pi].value.data()[index];
            probe.params[pi].value.data_mut()[index] = orig + delta;
            let logits = probe.forward(batch);
            probe.params[pi].value.data_mut()[index] = orig;
            let loss = softmax_cross_entropy(&logits?, labels)?.0;
            if !loss.is_finite() {
                return Err(Error::NonFinite("loss during spot check".into()));
            }
            Ok(loss)
        };

        let mut entries = Vec::with_capacity(count);
        let mut redrawn = 0;
        let mut dead = 0;
        while entries.len() < count {
            if redrawn > 10 * count + 10 || dead > 1000 * count {
                return Err(Error::invalid(
                    "gradient spot check",
                    format!("{redrawn} coordinates redrawn, {dead} dead; nothing left to probe"),
                ));
            }
            // tensor first so every layer gets probed, then a coordinate
            let pi = trainable[rng.random_range(0..trainable.len())];
            let index = rng.random_range(0..model.params[pi].value.len());
            let center = loss_at(pi, index, 0.0)?;
            let (up, down) = (loss_at(pi, index, eps)?, loss_at(pi, index, -eps)?);
            let (up_half, down_half) = (loss_at(pi, index, eps / 2.0)?, loss_at(pi, index, -eps / 2.0)?);
            let wide = (up - down) / (2.0 * eps);
            // forward minus backward slope: shrinks linearly with the step on a
            // smooth loss, stays put when a kink sits inside the interval
            let skew = (up - 2.0 * center + down) / eps;
            let skew_half = (up_half - 2.0 * center + down_half) / (eps / 2.0);
            if (skew_half - skew / 2.0).abs() > KINK_TOLERANCE * skew.abs() + 1e-8 {
                redrawn += 1;
                continue;
            }
            let analytic = model.params[pi].grad.data()[index];
            if analytic == 0.0 && wide == 0.0 {
                // structurally dead tap, e.g. a kernel entry that only sees padding
                dead += 1;
                continue;
            }
            let analytic = analytic_scale * model.params[pi].grad.data()[index];
            entries.push(SpotCheckEntry {
                param: model.params[pi].name.clone(),
                index,
                analytic,
                numeric: wide,
                relative_error: relative_error(analytic, wide),
            });
        }
        Ok(SpotCheck {
            entries,
            redrawn,
            dead,
        })
    }
}
