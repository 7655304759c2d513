use serde::{Deserialize, Serialize};

use super::{fmt_shape, window_output, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Forward state of a windowed pooling layer.
#[derive(Clone, Debug)]
pub struct Pool2dBackward {
    input_shape: [usize; 4],
    output_shape: [usize; 4],
    kind: PoolKind,
    /// For max pooling: plane-local input index chosen for every output cell.
    argmax: Vec<u32>,
    k: usize,
    stride: usize,
    pad: usize,
}

/// Half-open range of valid input rows/cols covered by window `o`.
fn span(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> (usize, usize) {
    let start = (o * stride) as isize - pad as isize;
    let end = (start + k as isize).min(len as isize);
    (start.max(0) as usize, end as usize)
}

/// k×k pooling with the given stride and padding. Windows are clipped at the
/// borders; padded cells take part in neither the max nor the average.
pub fn pool2d(
    input: &Tensor,
    kind: PoolKind,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Pool2dBackward)> {
    let [n, c, h, w] = input.shape();
    if k == 0 || pad >= k {
        return Err(Error::invalid("pool2d", format!("kernel {k} with pad {pad} leaves empty windows")));
    }
    let (oh, ow) = match (window_output(h, k, stride, pad), window_output(w, k, stride, pad)) {
        (Some(oh), Some(ow)) => (oh, ow),
        _ => {
            return Err(Error::invalid(
                "pool2d",
                format!(
                    "non-positive output for input {} (k={k}, stride={stride}, pad={pad})",
                    fmt_shape(&input.shape())
                ),
            ))
        }
    };
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = if kind == PoolKind::Max {
        vec![0u32; n * c * oh * ow]
    } else {
        Vec::new()
    };
    let x = input.data();
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let (y0, y1) = span(oy, k, stride, pad, h);
            for ox in 0..ow {
                let (x0, x1) = span(ox, k, stride, pad, w);
                let o = (p * oh + oy) * ow + ox;
                match kind {
                    PoolKind::Max => {
                        let mut best = y0 * w + x0;
                        for yy in y0..y1 {
                            for xx in x0..x1 {
                                if plane[yy * w + xx] > plane[best] {
                                    best = yy * w + xx;
                                }
                            }
                        }
                        out.data_mut()[o] = plane[best];
                        argmax[o] = best as u32;
                    }
                    PoolKind::Avg => {
                        let mut s = 0.0;
                        for yy in y0..y1 {
                            s += plane[yy * w + x0..yy * w + x1].iter().sum::<f64>();
                        }
                        out.data_mut()[o] = s / ((y1 - y0) * (x1 - x0)) as f64;
                    }
                }
            }
        }
    }
    let output_shape = out.shape();
    Ok((
        out,
        Pool2dBackward {
            input_shape: input.shape(),
            output_shape,
            kind,
            argmax,
            k,
            stride,
            pad,
        },
    ))
}

impl Pool2dBackward {
    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != self.output_shape {
            return Err(Error::ShapeMismatch {
                op: "pool2d backward",
                left: fmt_shape(&grad_out.shape()),
                right: fmt_shape(&self.output_shape),
            });
        }
        let [n, c, h, w] = self.input_shape;
        let [_, _, oh, ow] = self.output_shape;
        let mut gx = Tensor::zeros(self.input_shape);
        let gy = grad_out.data();
        let dx = gx.data_mut();
        for p in 0..n * c {
            let plane = &mut dx[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                let (y0, y1) = span(oy, self.k, self.stride, self.pad, h);
                for ox in 0..ow {
                    let o = (p * oh + oy) * ow + ox;
                    match self.kind {
                        PoolKind::Max => plane[self.argmax[o] as usize] += gy[o],
                        PoolKind::Avg => {
                            let (x0, x1) = span(ox, self.k, self.stride, self.pad, w);
                            let share = gy[o] / ((y1 - y0) * (x1 - x0)) as f64;
                            for yy in y0..y1 {
                                plane[yy * w + x0..yy * w + x1].iter_mut().for_each(|v| *v += share);
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

/// Forward state of global average pooling.
#[derive(Clone, Debug)]
pub struct GlobalAvgPoolBackward {
    input_shape: [usize; 4],
}

/// Mean over each H×W plane, giving an N×C×1×1 tensor.
pub fn global_avg_pool(input: &Tensor) -> Result<(Tensor, GlobalAvgPoolBackward)> {
    let [n, c, h, w] = input.shape();
    if input.is_empty() || h == 0 || w == 0 {
        return Err(Error::invalid("global_avg_pool", "empty input"));
    }
    let area = (h * w) as f64;
    let data = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f64>() / area)
        .collect();
    Ok((
        Tensor::from_vec([n, c, 1, 1], data)?,
        GlobalAvgPoolBackward {
            input_shape: input.shape(),
        },
    ))
}

impl GlobalAvgPoolBackward {
    pub fn backward(&self, grad_out: &Tensor) -> Result<Tensor> {
        let [n, c, h, w] = self.input_shape;
        if grad_out.shape() != [n, c, 1, 1] {
            return Err(Error::ShapeMismatch {
                op: "global_avg_pool backward",
                left: fmt_shape(&grad_out.shape()),
                right: fmt_shape(&[n, c, 1, 1]),
            });
        }
        let area = (h * w) as f64;
        let mut data = Vec::with_capacity(n * c * h * w);
        for &g in grad_out.data() {
            data.extend(std::iter::repeat_n(g / area, h * w));
        }
        Tensor::from_vec(self.input_shape, data)
    }
}
