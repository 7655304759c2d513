use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::{Parameter, Tensor};

/// Nesterov momentum with coupled L2 decay.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocities: Vec<Tensor>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_count: u32,
}

impl OptimizerState {
    pub fn new(params: &[Parameter], learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            velocities: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            learning_rate,
            momentum,
            weight_decay,
            decay_count: 0,
        }
    }

    /// With `g' = g + λθ`: `v ← μv − lr·g'`, then `θ ← θ + μv − lr·g'`.
    /// Frozen parameters and their velocities are left alone.
    pub fn step(&mut self, params: &mut [Parameter]) -> Result<()> {
        if params.len() != self.velocities.len() {
            return Err(Error::invalid(
                "optimizer",
                format!("{} parameters but {} velocity tensors", params.len(), self.velocities.len()),
            ));
        }
        for (p, v) in params.iter().zip(&self.velocities) {
            if p.value.shape() != v.shape() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer",
                    left: format!("{} {:?}", p.name, p.value.shape()),
                    right: format!("velocity {:?}", v.shape()),
                });
            }
            if p.trainable && !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        let (lr, mu, decay) = (self.learning_rate, self.momentum, self.weight_decay);
        for (p, v) in params.iter_mut().zip(&mut self.velocities) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data().to_vec();
            for ((theta, vel), g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(grads) {
                let g = g + decay * *theta;
                *vel = mu * *vel - lr * g;
                *theta += mu * *vel - lr * g;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauDecision {
    Continue,
    DecayLr,
    Stop,
}

/// Tracks validation accuracy and asks for a learning-rate decay after
/// `patience` epochs without an improvement larger than `min_delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauDetector {
    pub best_validation_accuracy: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Decays allowed before a plateau ends training.
    pub max_decays: u32,
}

impl PlateauDetector {
    pub fn new(patience: usize, min_delta: f64, max_decays: u32) -> Self {
        PlateauDetector {
            best_validation_accuracy: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
            patience,
            min_delta,
            max_decays,
        }
    }
}

/// Feeds one validation accuracy to the detector; a decay divides the
/// learning rate by 10. After `max_decays` decays the next plateau stops.
pub fn plateau_step(detector: &mut PlateauDetector, accuracy: f64, state: &mut OptimizerState) -> PlateauDecision {
    if accuracy > detector.best_validation_accuracy + detector.min_delta {
        detector.best_validation_accuracy = accuracy;
        detector.epochs_since_improvement = 0;
        return PlateauDecision::Continue;
    }
    detector.epochs_since_improvement += 1;
    if detector.epochs_since_improvement < detector.patience {
        return PlateauDecision::Continue;
    }
    if state.decay_count >= detector.max_decays {
        return PlateauDecision::Stop;
    }
    state.learning_rate /= 10.0;
    state.decay_count += 1;
    detector.epochs_since_improvement = 0;
    PlateauDecision::DecayLr
}
