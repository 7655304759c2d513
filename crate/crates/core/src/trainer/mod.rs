//! Mini-batch training with Nesterov momentum and a plateau-driven
//! learning-rate schedule, plus confusion-matrix evaluation.

mod confusion;
mod optimizer;

pub use confusion::ConfusionMatrix;
pub use optimizer::{plateau_step, OptimizerState, PlateauDecision, PlateauDetector};

use serde::{Deserialize, Serialize};

use crate::dataset::{batches, derive_seed, sequential_batches, LabeledSet};
use crate::error::{Error, Result};
use crate::model::{argmax, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Learning-rate decays before the next plateau ends training.
    pub max_decays: u32,
    pub max_epochs: usize,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Stop once the run has been flagged as stalled.
    pub stop_when_stalled: bool,
    /// Consecutive epochs near chance that flag a run as stalled.
    pub stall_epochs: usize,
    /// Distance from chance accuracy counted as "near".
    pub stall_margin: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 64,
            patience: 3,
            min_delta: 0.001,
            max_decays: 3,
            max_epochs: 200,
            target_accuracy: None,
            stop_when_stalled: false,
            stall_epochs: 5,
            stall_margin: 0.02,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train config", msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay {} must be non-negative", self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch size, patience and max epochs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Iterations completed at the end of this epoch.
    pub iterations: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: f64,
    pub decision: PlateauDecision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxEpochs,
    TargetReached,
    Stalled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub classes: Vec<String>,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub total_iterations: usize,
    pub stop_reason: StopReason,
    /// Epoch at which training accuracy had sat near chance for
    /// `stall_epochs` epochs in a row.
    pub stalled_at: Option<usize>,
    pub final_validation_accuracy: f64,
    pub validation_confusion: ConfusionMatrix,
}

impl TrainReport {
    pub fn stalled(&self) -> bool {
        self.stalled_at.is_some()
    }

    /// Distinct learning rates in the order they were used.
    pub fn learning_rates(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.epochs {
            if out.last() != Some(&e.learning_rate) {
                out.push(e.learning_rate);
            }
        }
        out
    }

    /// `epoch,iterations,learning_rate,train_loss,train_accuracy,validation_accuracy`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,iterations,learning_rate,train_loss,train_accuracy,validation_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.iterations, e.learning_rate, e.train_loss, e.train_accuracy, e.validation_accuracy
            ));
        }
        out
    }
}

fn check_set(model: &Model, set: &LabeledSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::invalid("train", format!("{what} split is empty")));
    }
    if set.classes.len() != model.config().num_classes {
        return Err(Error::invalid(
            "train",
            format!(
                "{what} split has {} classes, model outputs {}",
                set.classes.len(),
                model.config().num_classes
            ),
        ));
    }
    Ok(())
}

fn class_names(set: &LabeledSet) -> Vec<String> {
    set.classes.iter().map(|c| c.name().to_string()).collect()
}

/// Accuracy and confusion matrix of `model` on `set`.
pub fn evaluate(model: &Model, set: &LabeledSet, batch_size: usize) -> Result<(f64, ConfusionMatrix)> {
    let mut matrix = ConfusionMatrix::new(class_names(set));
    for batch in sequential_batches(set, batch_size, model.config().input_scale)? {
        let (x, labels) = batch?;
        let logits = model.forward(&x)?;
        let k = logits.channels();
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            matrix.record(label, argmax(row))?;
        }
    }
    Ok((matrix.accuracy(), matrix))
}

/// Trains `model` in place and returns the per-epoch history.
pub fn train(model: &mut Model, train_set: &LabeledSet, validation: &LabeledSet, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    check_set(model, train_set, "training")?;
    check_set(model, validation, "validation")?;
    let mut opt = OptimizerState::new(model.params(), config.learning_rate, config.momentum, config.weight_decay);
    let mut plateau = PlateauDetector::new(config.patience, config.min_delta, config.max_decays);
    let chance = 1.0 / train_set.classes.len() as f64;
    let scale = model.config().input_scale;

    let mut epochs = Vec::new();
    let mut iterations = 0;
    let mut near_chance = 0;
    let mut stalled_at = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut confusion = ConfusionMatrix::new(class_names(validation));

    for epoch in 1..=config.max_epochs {
        let learning_rate = opt.learning_rate;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in batches(train_set, config.batch_size, derive_seed(config.seed, &[epoch as u64]), scale)? {
            let (x, labels) = batch?;
            let (loss, logits) = model.forward_backward(&x, &labels)?;
            opt.step(model.params_mut())?;
            iterations += 1;
            loss_sum += loss * labels.len() as f64;
            let k = logits.channels();
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = correct as f64 / train_set.len() as f64;
        let (validation_accuracy, matrix) = evaluate(model, validation, config.batch_size)?;
        confusion = matrix;
        let decision = plateau_step(&mut plateau, validation_accuracy, &mut opt);
        log::info!(
            "epoch {epoch}: lr {learning_rate:e} loss {train_loss:.4} train {train_accuracy:.4} val {validation_accuracy:.4} {decision:?}"
        );
        epochs.push(EpochRecord {
            epoch,
            iterations,
            learning_rate,
            train_loss,
            train_accuracy,
            validation_accuracy,
            decision,
        });

        if (train_accuracy - chance).abs() <= config.stall_margin {
            near_chance += 1;
        } else {
            near_chance = 0;
        }
        if stalled_at.is_none() && near_chance >= config.stall_epochs {
            stalled_at = Some(epoch);
        }
        if decision == PlateauDecision::Stop {
            stop_reason = StopReason::Plateau;
            break;
        }
        if config.target_accuracy.is_some_and(|t| validation_accuracy >= t) {
            stop_reason = StopReason::TargetReached;
            break;
        }
        if config.stop_when_stalled && stalled_at.is_some() {
            stop_reason = StopReason::Stalled;
            break;
        }
    }

    Ok(TrainReport {
        classes: class_names(train_set),
        config: config.clone(),
        final_validation_accuracy: confusion.accuracy(),
        epochs,
        total_iterations: iterations,
        stop_reason,
        stalled_at,
        validation_confusion: confusion,
    })
}

#[cfg(test)]
mod tests;
