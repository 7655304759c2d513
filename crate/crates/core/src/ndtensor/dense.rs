use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{fmt_shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DenseBackward {
    input: Tensor,
}

#[derive(Clone, Debug)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Fully connected layer on N×C×1×1 features. `weight` is `[K, C, 1, 1]`,
/// `bias` is `[K, 1, 1, 1]`; the result is N×K×1×1.
pub fn dense(input: Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, DenseBackward)> {
    let [n, c, h, w] = input.shape();
    if h != 1 || w != 1 {
        return Err(Error::invalid(
            "dense",
            format!("input {} must be spatially 1x1", fmt_shape(&input.shape())),
        ));
    }
    let [k, wc, wh, ww] = weight.shape();
    if wc != c || wh != 1 || ww != 1 || bias.len() != k {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: format!("input {}", fmt_shape(&input.shape())),
            right: format!(
                "weights {} / bias {}",
                fmt_shape(&weight.shape()),
                fmt_shape(&bias.shape())
            ),
        });
    }
    let mut logits = Vec::with_capacity(n * k);
    for _ in 0..n {
        logits.extend_from_slice(bias.data());
    }
    // logits (n×k) += x (n×c) · Wᵀ
    gemm_nt(n, c, k, input.data(), weight.data(), &mut logits, 1.0);
    Ok((Tensor::from_vec([n, k, 1, 1], logits)?, DenseBackward { input }))
}

impl DenseBackward {
    pub fn backward(&self, weight: &Tensor, grad_out: &Tensor) -> Result<DenseGrads> {
        let [n, c, _, _] = self.input.shape();
        let k = weight.batch();
        if grad_out.shape() != [n, k, 1, 1] {
            return Err(Error::ShapeMismatch {
                op: "dense backward",
                left: fmt_shape(&grad_out.shape()),
                right: fmt_shape(&[n, k, 1, 1]),
            });
        }
        let mut gx = vec![0.0; n * c];
        gemm_nn(n, k, c, grad_out.data(), weight.data(), &mut gx, 0.0);
        let mut gw = vec![0.0; k * c];
        gemm_tn(k, n, c, grad_out.data(), self.input.data(), &mut gw, 0.0);
        let mut gb = vec![0.0; k];
        for row in grad_out.data().chunks(k) {
            for (acc, v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Ok(DenseGrads {
            input: Tensor::from_vec([n, c, 1, 1], gx)?,
            weight: Tensor::from_vec(weight.shape(), gw)?,
            bias: Tensor::from_vec([k, 1, 1, 1], gb)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights() {
        let mut w = Tensor::zeros([3, 3, 1, 1]);
        for i in 0..3 {
            w.set(i, i, 0, 0, 1.0);
        }
        let x = Tensor::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let (y, _) = dense(x.clone(), &w, &Tensor::zeros([3, 1, 1, 1])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::randn([12, 16, 1, 1], 1.0, &mut rng);
        let b = Tensor::randn([12, 1, 1, 1], 1.0, &mut rng);
        let (y, _) = dense(Tensor::zeros([2, 16, 1, 1]), &w, &b).unwrap();
        assert_eq!(&y.data()[..12], b.data());
        assert_eq!(&y.data()[12..], b.data());
    }

    #[test]
    fn rejects_spatial_input() {
        let w = Tensor::zeros([2, 4, 1, 1]);
        let b = Tensor::zeros([2, 1, 1, 1]);
        assert!(dense(Tensor::zeros([1, 4, 2, 2]), &w, &b).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn([3, 16, 1, 1], 1.0, &mut rng);
        let w = Tensor::randn([12, 16, 1, 1], 1.0, &mut rng);
        let b = Tensor::randn([12, 1, 1, 1], 1.0, &mut rng);
        let proj = Tensor::randn([3, 12, 1, 1], 1.0, &mut rng);
        let (_, bw) = dense(x.clone(), &w, &b).unwrap();
        let g = bw.backward(&w, &proj).unwrap();
        let fx = |t: &Tensor| dense(t.clone(), &w, &b).unwrap().0.dot(&proj);
        assert!(finite_diff_check(fx, &x, &g.input, 1e-5).unwrap() < 1e-6);
        let fw = |t: &Tensor| dense(x.clone(), t, &b).unwrap().0.dot(&proj);
        assert!(finite_diff_check(fw, &w, &g.weight, 1e-5).unwrap() < 1e-6);
        let fb = |t: &Tensor| dense(x.clone(), &w, t).unwrap().0.dot(&proj);
        assert!(finite_diff_check(fb, &b, &g.bias, 1e-5).unwrap() < 1e-6);
    }
}
