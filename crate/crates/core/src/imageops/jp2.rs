//! JPEG 2000-like distortion: a three-level CDF 9/7 wavelet, one uniform
//! dead-zone quantiser for all subbands, and a step size chosen so that the
//! zeroth-order entropy of the quantised coefficients hits a target rate.

use super::{to_u8, GrayImage, JP2_RATIO_RANGE};
use crate::error::{Error, Result};

const ALPHA: f64 = -1.586_134_342_059_924;
const BETA: f64 = -0.052_980_118_572_961;
const GAMMA: f64 = 0.882_911_075_530_934;
const DELTA: f64 = 0.443_506_852_043_971;
/// DC gain of the unscaled lifting low-pass branch.
const K: f64 = 1.230_174_104_914_001;

pub const LEVELS: usize = 3;
pub const STEP_RANGE: (f64, f64) = (1e-3, 1e4);
pub const RATE_TOLERANCE: f64 = 0.05;
const BISECTION_STEPS: usize = 80;

fn reflect(i: isize, n: usize) -> usize {
    if i < 0 {
        (-i) as usize
    } else if i as usize >= n {
        2 * (n - 1) - i as usize
    } else {
        i as usize
    }
}

fn lift(x: &mut [f64], coeff: f64, parity: usize) {
    let n = x.len();
    for i in (parity..n).step_by(2) {
        let l = x[reflect(i as isize - 1, n)];
        let r = x[reflect(i as isize + 1, n)];
        x[i] += coeff * (l + r);
    }
}

/// In-place 1-D analysis; the result holds `ceil(n/2)` low-pass then the
/// high-pass coefficients. Both branches are scaled to a gain of √2.
fn analyze(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    lift(x, ALPHA, 1);
    lift(x, BETA, 0);
    lift(x, GAMMA, 1);
    lift(x, DELTA, 0);
    scratch.clear();
    scratch.extend(x.iter().step_by(2).map(|v| v * std::f64::consts::SQRT_2 / K));
    scratch.extend(x.iter().skip(1).step_by(2).map(|v| v * K / std::f64::consts::SQRT_2));
    debug_assert_eq!(scratch.len(), n);
    x.copy_from_slice(scratch);
}

fn synthesize(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let low = n.div_ceil(2);
    scratch.clear();
    scratch.resize(n, 0.0);
    for i in 0..n {
        scratch[i] = if i % 2 == 0 {
            x[i / 2] * K / std::f64::consts::SQRT_2
        } else {
            x[low + i / 2] * std::f64::consts::SQRT_2 / K
        };
    }
    x.copy_from_slice(scratch);
    lift(x, -DELTA, 0);
    lift(x, -GAMMA, 1);
    lift(x, -BETA, 0);
    lift(x, -ALPHA, 1);
}

/// Rectangle `(x, y, w, h)` of coefficients belonging to one subband.
pub type Band = (usize, usize, usize, usize);

/// Multi-level 2-D wavelet over a row-major plane.
pub struct Wavelet {
    width: usize,
    height: usize,
    /// Low-pass region size before each level.
    regions: Vec<(usize, usize)>,
}

impl Wavelet {
    pub fn new(width: usize, height: usize, levels: usize) -> Self {
        let mut regions = Vec::new();
        let (mut w, mut h) = (width, height);
        for _ in 0..levels {
            if w < 2 && h < 2 {
                break;
            }
            regions.push((w, h));
            w = if w >= 2 { w.div_ceil(2) } else { w };
            h = if h >= 2 { h.div_ceil(2) } else { h };
        }
        Wavelet { width, height, regions }
    }

    pub fn forward(&self, data: &mut [f64]) {
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for &(w, h) in &self.regions {
            self.pass(data, w, h, &mut line, &mut scratch, analyze);
        }
    }

    pub fn inverse(&self, data: &mut [f64]) {
        let mut line = Vec::new();
        let mut scratch = Vec::new();
        for &(w, h) in self.regions.iter().rev() {
            self.pass_inverse(data, w, h, &mut line, &mut scratch);
        }
    }

    fn pass(
        &self,
        data: &mut [f64],
        w: usize,
        h: usize,
        line: &mut Vec<f64>,
        scratch: &mut Vec<f64>,
        f: fn(&mut [f64], &mut Vec<f64>),
    ) {
        for y in 0..h {
            f(&mut data[y * self.width..y * self.width + w], scratch);
        }
        for x in 0..w {
            line.clear();
            line.extend((0..h).map(|y| data[y * self.width + x]));
            f(line, scratch);
            for y in 0..h {
                data[y * self.width + x] = line[y];
            }
        }
    }

    fn pass_inverse(&self, data: &mut [f64], w: usize, h: usize, line: &mut Vec<f64>, scratch: &mut Vec<f64>) {
        for x in 0..w {
            line.clear();
            line.extend((0..h).map(|y| data[y * self.width + x]));
            synthesize(line, scratch);
            for y in 0..h {
                data[y * self.width + x] = line[y];
            }
        }
        for y in 0..h {
            synthesize(&mut data[y * self.width..y * self.width + w], scratch);
        }
    }

    /// Every subband rectangle, detail bands first and the final low-pass last.
    pub fn bands(&self) -> Vec<Band> {
        let mut bands = Vec::new();
        let (mut lw, mut lh) = (self.width, self.height);
        for &(w, h) in &self.regions {
            let nw = if w >= 2 { w.div_ceil(2) } else { w };
            let nh = if h >= 2 { h.div_ceil(2) } else { h };
            for band in [(nw, 0, w - nw, nh), (0, nh, nw, h - nh), (nw, nh, w - nw, h - nh)] {
                if band.2 > 0 && band.3 > 0 {
                    bands.push(band);
                }
            }
            (lw, lh) = (nw, nh);
        }
        bands.push((0, 0, lw, lh));
        bands
    }
}

fn quantize(c: f64, step: f64) -> i64 {
    (c.signum() * (c.abs() / step).floor()) as i64
}

fn dequantize(q: i64, step: f64) -> f64 {
    if q == 0 {
        0.0
    } else {
        (q.signum() as f64) * ((q.unsigned_abs() as f64) + 0.5) * step
    }
}

/// Bits per pixel under a per-subband zeroth-order entropy model.
fn entropy_rate(coef: &[f64], width: usize, bands: &[Band], step: f64) -> f64 {
    let mut symbols = Vec::new();
    let mut bits = 0.0;
    for &(bx, by, bw, bh) in bands {
        symbols.clear();
        for y in by..by + bh {
            symbols.extend(coef[y * width + bx..y * width + bx + bw].iter().map(|&c| quantize(c, step)));
        }
        symbols.sort_unstable();
        let n = symbols.len() as f64;
        let mut i = 0;
        while i < symbols.len() {
            let j = symbols[i..].partition_point(|&s| s == symbols[i]) + i;
            let p = (j - i) as f64 / n;
            bits -= (j - i) as f64 * p.log2();
            i = j;
        }
    }
    bits / coef.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jp2Stats {
    pub step: f64,
    /// Estimated bits per pixel at `step`.
    pub rate: f64,
    pub target_rate: f64,
}

/// Round trip at `ratio` (8-bit input bits over coded bits).
pub fn jp2_roundtrip(img: &GrayImage, ratio: f64) -> Result<GrayImage> {
    jp2_roundtrip_with_stats(img, ratio).map(|(img, _)| img)
}

pub fn jp2_roundtrip_with_stats(img: &GrayImage, ratio: f64) -> Result<(GrayImage, Jp2Stats)> {
    let (lo, hi) = JP2_RATIO_RANGE;
    if !(lo..=hi).contains(&ratio) {
        return Err(Error::invalid("jp2_roundtrip", format!("ratio {ratio} outside [{lo}, {hi}]")));
    }
    let (w, h) = (img.width(), img.height());
    let wavelet = Wavelet::new(w, h, LEVELS);
    let mut coef: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p) - 128.0).collect();
    wavelet.forward(&mut coef);
    let bands = wavelet.bands();
    let target = 8.0 / ratio;
    let rate_at = |step: f64| entropy_rate(&coef, w, &bands, step);

    let (min_step, max_step) = STEP_RANGE;
    let (step, rate) = if rate_at(min_step) <= target {
        // too little content to spend the budget: finest step is as close as it gets
        (min_step, rate_at(min_step))
    } else {
        if rate_at(max_step) > target {
            return Err(Error::invalid(
                "jp2_roundtrip",
                format!("rate {target:.3} bpp not reachable with step <= {max_step}"),
            ));
        }
        // rate falls with step; search in log-step, keeping lo above target and hi at or below
        let (mut lo, mut hi) = (min_step.ln(), max_step.ln());
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if rate_at(mid.exp()) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (rl, rh) = (rate_at(lo.exp()), rate_at(hi.exp()));
        let best = if (rl - target).abs() < (rh - target).abs() {
            (lo.exp(), rl)
        } else {
            (hi.exp(), rh)
        };
        if (best.1 - target).abs() > RATE_TOLERANCE * target {
            return Err(Error::invalid(
                "jp2_roundtrip",
                format!(
                    "closest rate {:.4} bpp misses target {target:.4} by more than {}%",
                    best.1,
                    RATE_TOLERANCE * 100.0
                ),
            ));
        }
        best
    };

    for c in &mut coef {
        *c = dequantize(quantize(*c, step), step);
    }
    wavelet.inverse(&mut coef);
    let pixels = coef.into_iter().map(|v| to_u8(v + 128.0)).collect();
    Ok((
        GrayImage::new(w, h, pixels)?,
        Jp2Stats {
            step,
            rate,
            target_rate: target,
        },
    ))
}
