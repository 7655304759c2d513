//! Finite-difference checks of every differentiable layer and of the
//! composed model, over randomised shapes and seeds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ArchitectureConfig, Model};
use crate::ndtensor::{
    activation, conv2d, dense, finite_diff_check, global_avg_pool, pool2d, softmax_cross_entropy, Activation, PoolKind,
    Tensor,
};

pub const LAYER_EPS: f64 = 1e-5;
pub const MODEL_EPS: f64 = 1e-6;
pub const THRESHOLD: f64 = 1e-4;
/// Weights probed per model check.
pub const MODEL_COORDS: usize = 20;

pub const LAYERS: [&str; 10] = [
    "conv2d",
    "max_pool",
    "avg_pool",
    "global_avg_pool",
    "tanh",
    "relu",
    "sigmoid",
    "dense",
    "softmax_cross_entropy",
    "model",
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    pub seed: u64,
    pub shape: String,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerSummary {
    pub layer: String,
    pub max_relative_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradSuite {
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub checks: Vec<LayerCheck>,
}

impl GradSuite {
    pub fn summary(&self) -> Vec<LayerSummary> {
        LAYERS
            .iter()
            .map(|&layer| {
                let (err, seed) = self
                    .checks
                    .iter()
                    .filter(|c| c.layer == layer)
                    .fold((0.0f64, 0), |(e, s), c| {
                        if c.max_relative_error > e {
                            (c.max_relative_error, c.seed)
                        } else {
                            (e, s)
                        }
                    });
                LayerSummary {
                    layer: layer.to_string(),
                    max_relative_error: err,
                    worst_seed: seed,
                    passed: err < self.threshold,
                }
            })
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.max_relative_error < self.threshold)
    }
}

fn shape_str(t: &Tensor) -> String {
    crate::ndtensor::fmt_shape(&t.shape())
}

/// Well-separated values in random order, so max-pool winners cannot swap
/// inside the difference interval.
fn spaced(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.05).collect();
    values.shuffle(rng);
    for v in &mut values {
        *v += rng.random_range(-0.01..0.01);
    }
    Tensor::from_vec(shape, values).expect("length matches")
}

/// Runs every layer check once per seed. `analytic_scale` multiplies the
/// analytic gradients before comparison; anything other than 1 is a
/// deliberately broken backward pass used to prove the checks can fail.
pub fn run_gradient_suite(seeds: &[u64], analytic_scale: f64) -> Result<GradSuite> {
    let mut checks = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut push = |layer: &str, shape: String, err: f64| {
            checks.push(LayerCheck {
                layer: layer.to_string(),
                seed,
                shape,
                max_relative_error: err,
            })
        };
        let scale = |t: &Tensor| t.map(|v| v * analytic_scale);

        // conv2d: input, weight and bias
        {
            let n = rng.random_range(1..3);
            let c = rng.random_range(1..4);
            let o = rng.random_range(1..4);
            let hw = rng.random_range(4..8);
            let stride = rng.random_range(1..3);
            let x = Tensor::randn([n, c, hw, hw], 1.0, &mut rng);
            let w = Tensor::randn([o, c, 3, 3], 1.0, &mut rng);
            let b = Tensor::randn([o, 1, 1, 1], 1.0, &mut rng);
            let (y, bw) = conv2d(x.clone(), &w, &b, stride, 1)?;
            let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
            let g = bw.backward(&w, &proj, true)?;
            let fx = |t: &Tensor| conv2d(t.clone(), &w, &b, stride, 1).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let fw = |t: &Tensor| conv2d(x.clone(), t, &b, stride, 1).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let fb = |t: &Tensor| conv2d(x.clone(), &w, t, stride, 1).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let gx = g.input.as_ref().expect("input gradient requested");
            let err = finite_diff_check(fx, &x, &scale(gx), LAYER_EPS)?
                .max(finite_diff_check(fw, &w, &scale(&g.weight), LAYER_EPS)?)
                .max(finite_diff_check(fb, &b, &scale(&g.bias), LAYER_EPS)?);
            push("conv2d", format!("{} s{stride}", shape_str(&x)), err);
        }

        for (layer, kind) in [("max_pool", PoolKind::Max), ("avg_pool", PoolKind::Avg)] {
            let hw = rng.random_range(3..9);
            let x = spaced([rng.random_range(1..3), rng.random_range(1..3), hw, hw], &mut rng);
            let (y, bw) = pool2d(&x, kind, 3, 2, 1)?;
            let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
            let g = bw.backward(&proj)?;
            let f = |t: &Tensor| pool2d(t, kind, 3, 2, 1).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            push(layer, shape_str(&x), finite_diff_check(f, &x, &scale(&g), LAYER_EPS)?);
        }

        {
            let x = Tensor::randn([rng.random_range(1..3), rng.random_range(1..6), 4, 4], 1.0, &mut rng);
            let (y, bw) = global_avg_pool(&x)?;
            let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
            let g = bw.backward(&proj)?;
            let f = |t: &Tensor| global_avg_pool(t).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            push("global_avg_pool", shape_str(&x), finite_diff_check(f, &x, &scale(&g), LAYER_EPS)?);
        }

        for (layer, kind) in [("tanh", Activation::Tanh), ("relu", Activation::Relu), ("sigmoid", Activation::Sigmoid)] {
            let mut x = Tensor::randn([2, rng.random_range(1..4), 3, 3], 1.0, &mut rng);
            // keep relu probes off its kink
            for v in x.data_mut() {
                if v.abs() < 1e-3 {
                    *v = 0.5;
                }
            }
            let (y, bw) = activation(x.clone(), kind);
            let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
            let g = bw.backward(&proj)?;
            let f = |t: &Tensor| activation(t.clone(), kind).0.dot(&proj);
            push(layer, shape_str(&x), finite_diff_check(f, &x, &scale(&g), LAYER_EPS)?);
        }

        {
            let (n, c, k) = (rng.random_range(1..4), rng.random_range(1..17), rng.random_range(2..13));
            let x = Tensor::randn([n, c, 1, 1], 1.0, &mut rng);
            let w = Tensor::randn([k, c, 1, 1], 1.0, &mut rng);
            let b = Tensor::randn([k, 1, 1, 1], 1.0, &mut rng);
            let (y, bw) = dense(x.clone(), &w, &b)?;
            let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
            let g = bw.backward(&w, &proj)?;
            let fx = |t: &Tensor| dense(t.clone(), &w, &b).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let fw = |t: &Tensor| dense(x.clone(), t, &b).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let fb = |t: &Tensor| dense(x.clone(), &w, t).map(|r| r.0.dot(&proj)).unwrap_or(f64::NAN);
            let err = finite_diff_check(fx, &x, &scale(&g.input), LAYER_EPS)?
                .max(finite_diff_check(fw, &w, &scale(&g.weight), LAYER_EPS)?)
                .max(finite_diff_check(fb, &b, &scale(&g.bias), LAYER_EPS)?);
            push("dense", shape_str(&x), err);
        }

        {
            let (n, k) = (rng.random_range(1..5), rng.random_range(2..13));
            let logits = Tensor::randn([n, k, 1, 1], 2.0, &mut rng);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let (_, g) = softmax_cross_entropy(&logits, &labels)?;
            let f = |t: &Tensor| softmax_cross_entropy(t, &labels).map(|r| r.0).unwrap_or(f64::NAN);
            push(
                "softmax_cross_entropy",
                shape_str(&logits),
                finite_diff_check(f, &logits, &scale(&g), LAYER_EPS)?,
            );
        }

        {
            let cfg = ArchitectureConfig {
                input_size: 32,
                num_classes: 3,
                base_width: 4,
                init_std: 0.1,
                ..Default::default()
            };
            let model = Model::build(&cfg, &mut rng)?;
            let batch = Tensor::uniform([3, 1, 32, 32], 0.0, 1.0, &mut rng);
            let labels = [0, 1, 2];
            let check = model.gradient_spot_check_corrupted(&batch, &labels, MODEL_COORDS, MODEL_EPS, analytic_scale, &mut rng)?;
            push("model", shape_str(&batch), check.max_relative_error());
        }
    }
    Ok(GradSuite {
        seeds: seeds.to_vec(),
        threshold: THRESHOLD,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_catches_a_doubled_gradient() {
        let good = run_gradient_suite(&[1, 2], 1.0).unwrap();
        assert!(good.passed(), "{:?}", good.summary());
        assert_eq!(good.checks.len(), 2 * LAYERS.len());
        let bad = run_gradient_suite(&[1], 2.0).unwrap();
        assert!(bad.summary().iter().all(|s| !s.passed));
    }
}
