use serde::{Deserialize, Serialize};

use super::{fmt_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the output value `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActivationBackward {
    kind: Activation,
    output: Tensor,
}

/// Elementwise activation. Takes ownership of the input and reuses its buffer.
pub fn activation(mut input: Tensor, kind: Activation) -> (Tensor, ActivationBackward) {
    input.data_mut().iter_mut().for_each(|v| *v = kind.apply(*v));
    let output = input;
    (
        output.clone(),
        ActivationBackward { kind, output },
    )
}

impl ActivationBackward {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != self.output.shape() {
            return Err(Error::ShapeMismatch {
                op: "activation backward",
                left: fmt_shape(&grad_out.shape()),
                right: fmt_shape(&self.output.shape()),
            });
        }
        let data = grad_out
            .data()
            .iter()
            .zip(self.output.data())
            .map(|(g, &y)| g * self.kind.derivative_from_output(y))
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pointwise_values() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(3.0), 3.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert!(Activation::Sigmoid.apply(-800.0) >= 0.0);
        assert!(Activation::Sigmoid.apply(800.0) <= 1.0);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let (_, bw) = activation(Tensor::zeros([1, 1, 1, 1]), Activation::Relu);
        assert_eq!(bw.backward(&Tensor::filled([1, 1, 1, 1], 1.0)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn output_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::randn([1, 2, 8, 8], 5.0, &mut rng);
        let (t, _) = activation(x.clone(), Activation::Tanh);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
        let (r, _) = activation(x.clone(), Activation::Relu);
        assert!(r.data().iter().all(|&v| v >= 0.0));
        let (s, _) = activation(x, Activation::Sigmoid);
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for kind in [Activation::Tanh, Activation::Relu, Activation::Sigmoid] {
            let mut x = Tensor::randn([2, 3, 4, 4], 1.0, &mut rng);
            if kind == Activation::Relu {
                // keep clear of the kink
                x = x.map(|v| if v.abs() < 1e-3 { 0.5 } else { v });
            }
            let proj = Tensor::randn(x.shape(), 1.0, &mut rng);
            let (_, bw) = activation(x.clone(), kind);
            let g = bw.backward(&proj).unwrap();
            let f = |xt: &Tensor| activation(xt.clone(), kind).0.dot(&proj);
            assert!(finite_diff_check(f, &x, &g, 1e-5).unwrap() < 1e-6, "{kind:?}");
        }
    }
}
