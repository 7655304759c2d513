//! The residual filter bank that opens the network.
//!
//! Four first-order adjacent-pixel differences, one per direction, written in
//! cross-correlation orientation (kernel entry `[i][j]` multiplies the pixel at
//! offset `(i-1, j-1)`):
//!
//! ```text
//! horizontal     vertical       diagonal       anti-diagonal
//!  0  0  0        0  0  0        0  0  0        0  0  0
//!  0 -1  1        0 -1  0        0 -1  0        0 -1  0
//!  0  0  0        0  1  0        0  0  1        1  0  0
//! ```
//!
//! The bank pads its input by edge replication, so a constant image yields
//! residual planes that are zero everywhere, borders included.

use rand::Rng;

use super::config::{HpfMode, RESIDUAL_CHANNELS};
use crate::ndtensor::{Parameter, Tensor};

/// (row, col) offsets of the +1 tap for each direction; −1 sits at the centre.
pub const DIFFERENCE_TAPS: [(usize, usize); RESIDUAL_CHANNELS] = [(1, 2), (2, 1), (2, 2), (2, 0)];

pub const HPF_PARAM: &str = "hpf.weight";

fn difference_kernels() -> Tensor {
    let mut w = Tensor::zeros([RESIDUAL_CHANNELS, 1, 3, 3]);
    for (o, &(i, j)) in DIFFERENCE_TAPS.iter().enumerate() {
        w.set(o, 0, 1, 1, -1.0);
        w.set(o, 0, i, j, 1.0);
    }
    w
}

fn identity_kernels() -> Tensor {
    let mut w = Tensor::zeros([RESIDUAL_CHANNELS, 1, 3, 3]);
    for o in 0..RESIDUAL_CHANNELS {
        w.set(o, 0, 1, 1, 1.0);
    }
    w
}

/// Builds the first-layer kernels for `mode`. `NoHighPass` is realised as
/// frozen centre-tap kernels, which copy the input into every channel.
pub fn make_hpf_bank<R: Rng + ?Sized>(mode: HpfMode, init_std: f64, rng: &mut R) -> Parameter {
    let (value, trainable) = match mode {
        HpfMode::Untrainable => (difference_kernels(), false),
        HpfMode::Trainable => (difference_kernels(), true),
        HpfMode::Random => (Tensor::randn([RESIDUAL_CHANNELS, 1, 3, 3], init_std, rng), true),
        HpfMode::NoHighPass => (identity_kernels(), false),
    };
    Parameter::new(HPF_PARAM, value, trainable)
}

/// Pads every plane by `pad` cells replicating the nearest edge pixel.
pub fn pad_replicate(input: &Tensor, pad: usize) -> Tensor {
    let [n, c, h, w] = input.shape();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros([n, c, ph, pw]);
    let src = input.data();
    let dst = out.data_mut();
    for p in 0..n * c {
        let plane = &src[p * h * w..(p + 1) * h * w];
        let target = &mut dst[p * ph * pw..(p + 1) * ph * pw];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            let row = &plane[sy * w..(sy + 1) * w];
            let out_row = &mut target[y * pw..(y + 1) * pw];
            out_row[..pad].fill(row[0]);
            out_row[pad..pad + w].copy_from_slice(row);
            out_row[pad + w..].fill(row[w - 1]);
        }
    }
    out
}
