//! Dense 4-D tensors and the handful of differentiable layers the
//! operation-identification network is built from.
//!
//! Every layer is a forward function returning its output together with a
//! backward value that captures whatever forward state the gradient needs.
//! There is no general autodiff graph; the model composes these by hand.

mod activation;
mod conv;
mod dense;
mod gemm;
mod gradcheck;
mod loss;
mod pool;

pub use activation::{activation, Activation, ActivationBackward};
pub use conv::{conv2d, Conv2dBackward, ConvGrads};
pub use dense::{dense, DenseBackward, DenseGrads};
pub use gradcheck::{finite_diff_check, finite_diff_check_coords, relative_error};
pub use loss::{softmax, softmax_cross_entropy};
pub use pool::{global_avg_pool, pool2d, GlobalAvgPoolBackward, Pool2dBackward, PoolKind};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a tensor: batch, channels, height, width.
pub type Shape = [usize; 4];

pub fn fmt_shape(shape: &Shape) -> String {
    format!("{}x{}x{}x{}", shape[0], shape[1], shape[2], shape[3])
}

/// Row-major `f64` tensor of rank 4 (N, C, H, W).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: fmt_shape(&shape),
                right: format!("{} values", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Samples every entry from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let len = shape.iter().product();
        let data = (0..len).map(|_| normal.sample(rng)).collect();
        Tensor { shape, data }
    }

    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of values in one batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn item(&self, n: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f64) {
        let [_, cs, hs, ws] = self.shape;
        self.data[((n * cs + c) * hs + y) * ws + x] = value;
    }

    /// Same data viewed under a different shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Σ self ⊙ other.
    pub fn dot(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A learnable (or frozen) tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Spatial output size of a sliding window, or `None` when it would be < 1.
pub fn window_output(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Serializable description of a tensor, used by checkpoints and reports.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Shape,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn from_vec_rejects_wrong_length() {
        let err = Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).unwrap_err();
        assert!(err.to_string().contains("1x1x2x2"));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::from_vec([1, 2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t.at(0, 1, 0, 2), 8.0);
        assert_eq!(t.item(0).len(), 12);
    }

    #[test]
    fn randn_is_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            Tensor::randn([2, 2, 2, 2], 0.01, &mut a),
            Tensor::randn([2, 2, 2, 2], 0.01, &mut b)
        );
    }

    #[test]
    fn window_output_law() {
        assert_eq!(window_output(8, 3, 2, 1), Some(4));
        assert_eq!(window_output(3, 3, 1, 1), Some(3));
        assert_eq!(window_output(1, 3, 1, 0), None);
        assert_eq!(window_output(4, 3, 0, 1), None);
    }
}
