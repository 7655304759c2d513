//! The operation-identification network: a fixed residual filter bank, a
//! channel-expansion conv, six conv/pool groups and a linear classifier.

mod checkpoint;
mod config;
mod hpf;
mod spotcheck;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use config::{ArchitectureConfig, Expansion, HpfMode, InputScale, LastPool, GROUPS, RESIDUAL_CHANNELS};
pub use spotcheck::{SpotCheck, SpotCheckEntry};
pub use hpf::{make_hpf_bank, pad_replicate, DIFFERENCE_TAPS, HPF_PARAM};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageops::GrayImage;
use crate::ndtensor::{
    activation, conv2d, dense, fmt_shape, global_avg_pool, pool2d, softmax, softmax_cross_entropy, window_output,
    Activation, ActivationBackward, Conv2dBackward, DenseBackward, GlobalAvgPoolBackward, Parameter, Pool2dBackward,
    PoolKind, Shape, Tensor,
};

const POOL_K: usize = 3;
const POOL_STRIDE: usize = 2;
const POOL_PAD: usize = 1;

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    /// Replicate-padded 3×3 filter bank on the single input plane.
    HighPass { weight: usize },
    Conv { weight: usize, bias: usize, need_input_grad: bool },
    Act(Activation),
    Pool(PoolKind),
    Gap,
    Flatten,
    Dense { weight: usize, bias: usize },
}

enum Step {
    HighPass { bw: Conv2dBackward, weight: usize },
    Conv { bw: Conv2dBackward, weight: usize, bias: usize, need_input_grad: bool },
    Act(ActivationBackward),
    Pool(Pool2dBackward),
    Gap(GlobalAvgPoolBackward),
    Flatten(Shape),
    Dense { bw: DenseBackward, weight: usize, bias: usize },
}

/// One row of [`shape_report`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    /// Channels, height, width of the layer output.
    pub shape: [usize; 3],
    pub params: usize,
}

/// Output shapes and parameter counts of every layer, from arithmetic alone.
pub fn shape_report(config: &ArchitectureConfig) -> Result<Vec<LayerShape>> {
    config.validate()?;
    let m = config.input_size;
    let pooled = |s: usize| window_output(s, POOL_K, POOL_STRIDE, POOL_PAD).unwrap_or(1);
    let mut rows = vec![LayerShape {
        name: "hpf".into(),
        shape: [RESIDUAL_CHANNELS, m, m],
        params: RESIDUAL_CHANNELS * 9,
    }];
    let (mut c, mut s) = (RESIDUAL_CHANNELS, m);
    if config.expansion != Expansion::Off {
        let out = config.base_width;
        rows.push(LayerShape {
            name: "expansion".into(),
            shape: [out, s, s],
            params: out * c * 9 + out,
        });
        c = out;
        if config.expansion == Expansion::OnPlusPool {
            s = pooled(s);
            rows.push(LayerShape {
                name: "expansion.pool".into(),
                shape: [c, s, s],
                params: 0,
            });
        }
    }
    for g in 1..=GROUPS {
        let out = c * 2;
        rows.push(LayerShape {
            name: format!("group{g}.conv"),
            shape: [out, s, s],
            params: out * c * 9 + out,
        });
        c = out;
        let name = format!("group{g}.pool");
        if g < GROUPS || config.last_pool != LastPool::Gap {
            s = pooled(s);
        } else {
            s = 1;
        }
        rows.push(LayerShape {
            name,
            shape: [c, s, s],
            params: 0,
        });
    }
    let features = c * s * s;
    rows.push(LayerShape {
        name: "fc".into(),
        shape: [config.num_classes, 1, 1],
        params: features * config.num_classes + config.num_classes,
    });
    Ok(rows)
}

/// A built network: parameters plus the ordered layer plan.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ArchitectureConfig,
    params: Vec<Parameter>,
    layers: Vec<Layer>,
}

impl Model {
    /// Builds the network for `config`, drawing weights from N(0, init_std²)
    /// and setting biases to zero.
    pub fn build<R: Rng + ?Sized>(config: &ArchitectureConfig, rng: &mut R) -> Result<Model> {
        config.validate()?;
        let std = config.init_std;
        let mut params = vec![make_hpf_bank(config.hpf_mode, std, rng)];
        let mut layers = vec![Layer::HighPass { weight: 0 }];
        let mut any_trainable = params[0].trainable;
        let mut channels = RESIDUAL_CHANNELS;

        let mut push_conv = |name: &str, in_c: usize, out_c: usize, params: &mut Vec<Parameter>, layers: &mut Vec<Layer>| {
            let w = Tensor::randn([out_c, in_c, 3, 3], std, rng);
            params.push(Parameter::new(format!("{name}.weight"), w, true));
            params.push(Parameter::new(format!("{name}.bias"), Tensor::zeros([out_c, 1, 1, 1]), true));
            layers.push(Layer::Conv {
                weight: params.len() - 2,
                bias: params.len() - 1,
                need_input_grad: any_trainable,
            });
            layers.push(Layer::Act(config.activation));
            any_trainable = true;
        };
        let inner_pool = if config.all_avg_pool {
            PoolKind::Avg
        } else {
            PoolKind::Max
        };

        if config.expansion != Expansion::Off {
            push_conv("expansion", channels, config.base_width, &mut params, &mut layers);
            channels = config.base_width;
            if config.expansion == Expansion::OnPlusPool {
                layers.push(Layer::Pool(inner_pool));
            }
        }
        for g in 1..=GROUPS {
            push_conv(&format!("group{g}"), channels, channels * 2, &mut params, &mut layers);
            channels *= 2;
            if g < GROUPS {
                layers.push(Layer::Pool(inner_pool));
            } else {
                match config.last_pool {
                    LastPool::Gap => layers.push(Layer::Gap),
                    LastPool::MaxS2 => layers.extend([Layer::Pool(PoolKind::Max), Layer::Flatten]),
                    LastPool::AvgS2 => layers.extend([Layer::Pool(PoolKind::Avg), Layer::Flatten]),
                }
            }
        }
        let report = shape_report(config)?;
        let [fc_c, fc_h, fc_w] = report[report.len() - 2].shape;
        let features = fc_c * fc_h * fc_w;
        let k = config.num_classes;
        params.push(Parameter::new("fc.weight", Tensor::randn([k, features, 1, 1], std, rng), true));
        params.push(Parameter::new("fc.bias", Tensor::zeros([k, 1, 1, 1]), true));
        layers.push(Layer::Dense {
            weight: params.len() - 2,
            bias: params.len() - 1,
        });
        Ok(Model {
            config: config.clone(),
            params,
            layers,
        })
    }

    /// Rebuilds a model from a config and an explicit parameter list (as read
    /// from a checkpoint). Names and shapes must match the config's layout.
    pub fn from_parameters(config: &ArchitectureConfig, loaded: Vec<Parameter>) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::build(config, &mut rng)?;
        if loaded.len() != model.params.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("expected {} tensors, found {}", model.params.len(), loaded.len()),
            ));
        }
        for (slot, p) in model.params.iter_mut().zip(loaded) {
            if slot.name != p.name || slot.value.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    left: format!("{} {}", slot.name, fmt_shape(&slot.value.shape())),
                    right: format!("{} {}", p.name, fmt_shape(&p.value.shape())),
                });
            }
            slot.value = p.value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let m = self.config.input_size;
        let [n, c, h, w] = batch.shape();
        if n == 0 || c != 1 || h != m || w != m {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: format!("batch {}", fmt_shape(&batch.shape())),
                right: format!("expected Nx1x{m}x{m}"),
            });
        }
        Ok(())
    }

    fn run(&self, batch: Tensor, mut tape: Option<&mut Vec<Step>>) -> Result<Tensor> {
        let mut x = batch;
        for layer in &self.layers {
            let p = &self.params;
            x = match *layer {
                Layer::HighPass { weight } => {
                    let zero_bias = Tensor::zeros([p[weight].value.batch(), 1, 1, 1]);
                    let (y, bw) = conv2d(pad_replicate(&x, 1), &p[weight].value, &zero_bias, 1, 0)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::HighPass { bw, weight });
                    }
                    y
                }
                Layer::Conv {
                    weight,
                    bias,
                    need_input_grad,
                } => {
                    let (y, bw) = conv2d(x, &p[weight].value, &p[bias].value, 1, 1)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Conv {
                            bw,
                            weight,
                            bias,
                            need_input_grad,
                        });
                    }
                    y
                }
                Layer::Act(kind) => {
                    let (y, bw) = activation(x, kind);
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Act(bw));
                    }
                    y
                }
                Layer::Pool(kind) => {
                    let (y, bw) = pool2d(&x, kind, POOL_K, POOL_STRIDE, POOL_PAD)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Pool(bw));
                    }
                    y
                }
                Layer::Gap => {
                    let (y, bw) = global_avg_pool(&x)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Gap(bw));
                    }
                    y
                }
                Layer::Flatten => {
                    let shape = x.shape();
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Flatten(shape));
                    }
                    x.reshape([shape[0], shape[1] * shape[2] * shape[3], 1, 1])?
                }
                Layer::Dense { weight, bias } => {
                    let (y, bw) = dense(x, &p[weight].value, &p[bias].value)?;
                    if let Some(t) = tape.as_deref_mut() {
                        t.push(Step::Dense { bw, weight, bias });
                    }
                    y
                }
            };
        }
        Ok(x)
    }

    /// Logits `[N, K, 1, 1]` for a pre-scaled batch `[N, 1, M, M]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        self.run(batch.clone(), None)
    }

    /// Mean cross-entropy on the batch. Overwrites the gradient of every
    /// trainable parameter; frozen parameters keep a zero gradient.
    pub fn loss_and_gradients(&mut self, batch: &Tensor, labels: &[usize]) -> Result<f64> {
        self.forward_backward(batch, labels).map(|(loss, _)| loss)
    }

    /// Like [`Model::loss_and_gradients`], also returning the logits.
    pub fn forward_backward(&mut self, batch: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        self.check_input(batch)?;
        let mut tape = Vec::with_capacity(self.layers.len());
        let logits = self.run(batch.clone(), Some(&mut tape))?;
        let (loss, mut grad) = softmax_cross_entropy(&logits, labels)?;
        for p in &mut self.params {
            p.zero_grad();
        }
        while let Some(step) = tape.pop() {
            grad = match step {
                Step::Dense { bw, weight, bias } => {
                    let g = bw.backward(&self.params[weight].value, &grad)?;
                    self.params[weight].grad = g.weight;
                    self.params[bias].grad = g.bias;
                    g.input
                }
                Step::Flatten(shape) => grad.reshape(shape)?,
                Step::Gap(bw) => bw.backward(&grad)?,
                Step::Pool(bw) => bw.backward(&grad)?,
                Step::Act(bw) => bw.backward(&grad)?,
                Step::Conv {
                    bw,
                    weight,
                    bias,
                    need_input_grad,
                } => {
                    let g = bw.backward(&self.params[weight].value, &grad, need_input_grad)?;
                    self.params[weight].grad = g.weight;
                    self.params[bias].grad = g.bias;
                    match g.input {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                Step::HighPass { bw, weight } => {
                    if self.params[weight].trainable {
                        let g = bw.backward(&self.params[weight].value, &grad, false)?;
                        self.params[weight].grad = g.weight;
                    }
                    break;
                }
            };
        }
        for p in &self.params {
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        Ok((loss, logits))
    }

    /// Converts images to a `[N, 1, M, M]` batch scaled per `input_scale`.
    pub fn images_to_batch(&self, images: &[&GrayImage]) -> Result<Tensor> {
        images_to_tensor(images, self.config.input_scale)
    }

    /// Most probable class (lowest index wins ties) and the softmax vector.
    pub fn predict(&self, image: &GrayImage) -> Result<(usize, Vec<f64>)> {
        let m = self.config.input_size;
        if image.width() != m || image.height() != m {
            return Err(Error::invalid(
                "predict",
                format!("image is {}x{}, model expects {m}x{m}", image.width(), image.height()),
            ));
        }
        let logits = self.forward(&self.images_to_batch(&[image])?)?;
        let probs = softmax(&logits).remove(0);
        Ok((argmax(&probs), probs))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Stacks equally sized images into a `[N, 1, H, W]` tensor.
pub fn images_to_tensor(images: &[&GrayImage], scale: InputScale) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return Err(Error::invalid("batch", "no images"));
    };
    let (w, h) = (first.width(), first.height());
    let factor = scale.factor();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::invalid(
                "batch",
                format!("mixed sizes {}x{} and {}x{}", w, h, img.width(), img.height()),
            ));
        }
        data.extend(img.pixels().iter().map(|&p| f64::from(p) * factor));
    }
    Tensor::from_vec([images.len(), 1, h, w], data)
}

#[cfg(test)]
mod tests;
