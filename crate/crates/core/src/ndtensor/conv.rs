use rayon::prelude::*;

use super::gemm::{gemm_nn, gemm_nt, gemm_tn};
use super::{fmt_shape, window_output, Tensor};
use crate::error::{Error, Result};

/// Items per reduction group in the weight-gradient pass. Fixed so that the
/// summation order never depends on the thread count.
const GROUP: usize = 8;

#[derive(Clone, Copy, Debug)]
struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds one item (C×H×W) into a (C·kh·kw)×(out_h·out_w) patch matrix.
fn im2col(g: &Geometry, x: &[f64], col: &mut [f64]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch-matrix gradients into the item.
fn col2im(g: &Geometry, col: &[f64], dx: &mut [f64]) {
    let cols = g.cols();
    let mut row = 0;
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward state kept for [`Conv2dBackward::backward`].
#[derive(Clone, Debug)]
pub struct Conv2dBackward {
    input: Tensor,
    geometry: Geometry,
    out_c: usize,
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// 2-D cross-correlation (no kernel flip) with zero padding and a
/// per-output-channel bias.
///
/// `weight` is `[out_c, in_c, kh, kw]`, `bias` is `[out_c, 1, 1, 1]`.
pub fn conv2d(
    input: Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Conv2dBackward)> {
    let [n, in_c, in_h, in_w] = input.shape();
    let [out_c, w_in, kh, kw] = weight.shape();
    if w_in != in_c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: format!("input {}", fmt_shape(&input.shape())),
            right: format!("weights {}", fmt_shape(&weight.shape())),
        });
    }
    if bias.len() != out_c {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: format!("weights {}", fmt_shape(&weight.shape())),
            right: format!("bias {}", fmt_shape(&bias.shape())),
        });
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    let (out_h, out_w) = match (
        window_output(in_h, kh, stride, pad),
        window_output(in_w, kw, stride, pad),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "empty output for input {} with kernel {}x{}, stride {stride}, pad {pad}",
                    fmt_shape(&input.shape()),
                    kh,
                    kw
                ),
            ))
        }
    };
    let g = Geometry {
        in_c,
        in_h,
        in_w,
        kh,
        kw,
        stride,
        pad,
        out_h,
        out_w,
    };
    let mut out = Tensor::zeros([n, out_c, out_h, out_w]);
    let out_item = out.item_len();
    let in_item = input.item_len();
    let (rows, cols) = (g.rows(), g.cols());
    let x = input.data();
    let w = weight.data();
    let b = bias.data();

    out.data_mut()
        .par_chunks_mut(out_item)
        .enumerate()
        .for_each_init(
            || vec![0.0; rows * cols],
            |col, (item, y)| {
                im2col(&g, &x[item * in_item..(item + 1) * in_item], col);
                for (o, plane) in y.chunks_mut(cols).enumerate() {
                    plane.fill(b[o]);
                }
                gemm_nn(out_c, rows, cols, w, col, y, 1.0);
            },
        );

    Ok((
        out,
        Conv2dBackward {
            input,
            geometry: g,
            out_c,
        },
    ))
}

impl Conv2dBackward {
    pub fn input(&self) -> &Tensor {
        &self.input
    }

    pub fn into_input(self) -> Tensor {
        self.input
    }

    /// Back-propagates `grad_out`. The input gradient is only formed when
    /// `need_input` is set.
    pub fn backward(&self, weight: &Tensor, grad_out: &Tensor, need_input: bool) -> Result<ConvGrads> {
        let g = self.geometry;
        let n = self.input.batch();
        let expected = [n, self.out_c, g.out_h, g.out_w];
        if grad_out.shape() != expected {
            return Err(Error::ShapeMismatch {
                op: "conv2d backward",
                left: format!("grad {}", fmt_shape(&grad_out.shape())),
                right: format!("output {}", fmt_shape(&expected)),
            });
        }
        let (rows, cols, out_c) = (g.rows(), g.cols(), self.out_c);
        let in_item = self.input.item_len();
        let out_item = out_c * cols;
        let x = self.input.data();
        let gy = grad_out.data();
        let w = weight.data();

        let mut grad_input = need_input.then(|| Tensor::zeros(self.input.shape()));
        let groups = n.div_ceil(GROUP);

        let group_work = |group: usize, dx: Option<&mut [f64]>| -> (Vec<f64>, Vec<f64>) {
            let mut dw = vec![0.0; out_c * rows];
            let mut db = vec![0.0; out_c];
            let mut col = vec![0.0; rows * cols];
            let mut dcol = if dx.is_some() { vec![0.0; rows * cols] } else { Vec::new() };
            let mut dx = dx;
            let start = group * GROUP;
            let end = (start + GROUP).min(n);
            for item in start..end {
                let gy_item = &gy[item * out_item..(item + 1) * out_item];
                im2col(&g, &x[item * in_item..(item + 1) * in_item], &mut col);
                gemm_nt(out_c, cols, rows, gy_item, &col, &mut dw, 1.0);
                for (o, plane) in gy_item.chunks(cols).enumerate() {
                    db[o] += plane.iter().sum::<f64>();
                }
                if let Some(dx) = dx.as_deref_mut() {
                    gemm_tn(rows, out_c, cols, w, gy_item, &mut dcol, 0.0);
                    let local = item - start;
                    col2im(&g, &dcol, &mut dx[local * in_item..(local + 1) * in_item]);
                }
            }
            (dw, db)
        };

        let partials: Vec<(Vec<f64>, Vec<f64>)> = match grad_input.as_mut() {
            Some(gi) => gi
                .data_mut()
                .par_chunks_mut(in_item * GROUP)
                .enumerate()
                .map(|(group, dx)| group_work(group, Some(dx)))
                .collect(),
            None => (0..groups)
                .into_par_iter()
                .map(|group| group_work(group, None))
                .collect(),
        };

        let mut grad_w = Tensor::zeros(weight.shape());
        let mut grad_b = Tensor::zeros([out_c, 1, 1, 1]);
        for (dw, db) in &partials {
            for (acc, v) in grad_w.data_mut().iter_mut().zip(dw) {
                *acc += v;
            }
            for (acc, v) in grad_b.data_mut().iter_mut().zip(db) {
                *acc += v;
            }
        }
        Ok(ConvGrads {
            input: grad_input,
            weight: grad_w,
            bias: grad_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndtensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation used as an oracle.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let [n, c, h, wd] = x.shape();
        let [o, _, kh, kw] = w.shape();
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros([n, o, oh, ow]);
        for ni in 0..n {
            for oi in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b.data()[oi];
                        for ci in 0..c {
                            for i in 0..kh {
                                for j in 0..kw {
                                    let iy = (y * stride + i) as isize - pad as isize;
                                    let ix = (xx * stride + j) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.at(ni, ci, iy as usize, ix as usize) * w.at(oi, ci, i, j);
                                    }
                                }
                            }
                        }
                        out.set(ni, oi, y, xx, s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn ones_filter_on_ones_image() {
        let x = Tensor::filled([1, 1, 3, 3], 1.0);
        let w = Tensor::filled([1, 1, 3, 3], 1.0);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let (y, _) = conv2d(x, &w, &b, 1, 1).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = Tensor::randn([3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::from_vec([3, 1, 1, 1], vec![0.5, -1.25, 2.0]).unwrap();
        let (y, _) = conv2d(Tensor::zeros([2, 2, 5, 5]), &w, &b, 1, 1).unwrap();
        for n in 0..2 {
            for o in 0..3 {
                for i in 0..25 {
                    assert_eq!(y.data()[(n * 3 + o) * 25 + i], b.data()[o]);
                }
            }
        }
    }

    #[test]
    fn matches_naive_for_strides_and_pads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
            let x = Tensor::randn([2, 3, 7, 6], 1.0, &mut rng);
            let w = Tensor::randn([4, 3, 3, 3], 1.0, &mut rng);
            let b = Tensor::randn([4, 1, 1, 1], 1.0, &mut rng);
            let expect = naive_conv(&x, &w, &b, stride, pad);
            let (y, _) = conv2d(x, &w, &b, stride, pad).unwrap();
            assert_eq!(y.shape(), expect.shape());
            for (a, e) in y.data().iter().zip(expect.data()) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_names_both_shapes() {
        let w = Tensor::zeros([4, 2, 3, 3]);
        let b = Tensor::zeros([4, 1, 1, 1]);
        let err = conv2d(Tensor::zeros([1, 3, 4, 4]), &w, &b, 1, 1).unwrap_err().to_string();
        assert!(err.contains("1x3x4x4") && err.contains("4x2x3x3"), "{err}");
    }

    #[test]
    fn rejects_empty_output_and_zero_stride() {
        let w = Tensor::zeros([1, 1, 3, 3]);
        let b = Tensor::zeros([1, 1, 1, 1]);
        assert!(conv2d(Tensor::zeros([1, 1, 2, 2]), &w, &b, 1, 0).is_err());
        assert!(conv2d(Tensor::zeros([1, 1, 4, 4]), &w, &b, 0, 1).is_err());
    }

    #[test]
    fn linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn([2, 2, 6, 6], 1.0, &mut rng);
        let z = Tensor::randn([2, 2, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn([3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::zeros([3, 1, 1, 1]);
        let (a, bcoef) = (1.7, -0.3);
        let mix = Tensor::from_vec(
            x.shape(),
            x.data().iter().zip(z.data()).map(|(p, q)| a * p + bcoef * q).collect(),
        )
        .unwrap();
        let (lhs, _) = conv2d(mix, &w, &b, 1, 1).unwrap();
        let (cx, _) = conv2d(x, &w, &b, 1, 1).unwrap();
        let (cz, _) = conv2d(z, &w, &b, 1, 1).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs.data()[i] - (a * cx.data()[i] + bcoef * cz.data()[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::randn([2, 3, 8, 8], 1.0, &mut rng);
        let w = Tensor::randn([4, 3, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn([4, 1, 1, 1], 1.0, &mut rng);
        let proj = Tensor::randn([2, 4, 8, 8], 1.0, &mut rng);
        let (_, bw) = conv2d(x.clone(), &w, &b, 1, 1).unwrap();
        let grads = bw.backward(&w, &proj, true).unwrap();

        let f_w = |wt: &Tensor| conv2d(x.clone(), wt, &b, 1, 1).unwrap().0.dot(&proj);
        assert!(finite_diff_check(f_w, &w, &grads.weight, 1e-5).unwrap() < 1e-6);
        let f_b = |bt: &Tensor| conv2d(x.clone(), &w, bt, 1, 1).unwrap().0.dot(&proj);
        assert!(finite_diff_check(f_b, &b, &grads.bias, 1e-5).unwrap() < 1e-6);
        let f_x = |xt: &Tensor| conv2d(xt.clone(), &w, &b, 1, 1).unwrap().0.dot(&proj);
        assert!(finite_diff_check(f_x, &x, grads.input.as_ref().unwrap(), 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn strided_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::randn([3, 2, 7, 7], 1.0, &mut rng);
        let w = Tensor::randn([2, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn([2, 1, 1, 1], 1.0, &mut rng);
        let (y, bw) = conv2d(x.clone(), &w, &b, 2, 1).unwrap();
        let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
        let grads = bw.backward(&w, &proj, true).unwrap();
        let f_x = |xt: &Tensor| conv2d(xt.clone(), &w, &b, 2, 1).unwrap().0.dot(&proj);
        assert!(finite_diff_check(f_x, &x, grads.input.as_ref().unwrap(), 1e-5).unwrap() < 1e-6);
        let f_w = |wt: &Tensor| conv2d(x.clone(), wt, &b, 2, 1).unwrap().0.dot(&proj);
        assert!(finite_diff_check(f_w, &w, &grads.weight, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn weight_gradient_is_group_size_independent() {
        // 19 items span three reduction groups; sum of per-item grads must agree.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::randn([19, 2, 5, 5], 1.0, &mut rng);
        let w = Tensor::randn([3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::zeros([3, 1, 1, 1]);
        let (y, bw) = conv2d(x.clone(), &w, &b, 1, 1).unwrap();
        let proj = Tensor::randn(y.shape(), 1.0, &mut rng);
        let full = bw.backward(&w, &proj, false).unwrap();
        assert!(full.input.is_none());
        let mut summed = Tensor::zeros(w.shape());
        for n in 0..19 {
            let xi = Tensor::from_vec([1, 2, 5, 5], x.item(n).to_vec()).unwrap();
            let pi = Tensor::from_vec([1, 3, 5, 5], proj.item(n).to_vec()).unwrap();
            let (_, bwi) = conv2d(xi, &w, &b, 1, 1).unwrap();
            let gi = bwi.backward(&w, &pi, false).unwrap();
            for (s, v) in summed.data_mut().iter_mut().zip(gi.weight.data()) {
                *s += v;
            }
        }
        for (a, e) in full.weight.data().iter().zip(summed.data()) {
            assert!((a - e).abs() < 1e-9);
        }
    }
}
