//! Neighbourhood filters. Every window reads outside the image through
//! half-sample symmetric reflection (`d c b a | a b c d | d c b a`).

use super::{to_u8, GrayImage};
use crate::error::{Error, Result};

/// Reflects `i` into `0..n` with edge pixels repeated.
pub fn mirror_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn check_window(op: &'static str, window: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::invalid(op, format!("window {window} is even; need an odd size")));
    }
    if !super::WINDOWS.contains(&window) {
        return Err(Error::invalid(op, format!("window {window} not in {{3, 5, 7}}")));
    }
    Ok(())
}

/// Calls `f(index, x, y)` for every position of a `window`² neighbourhood,
/// row-major, with reflected coordinates.
fn for_window(img: &GrayImage, cx: usize, cy: usize, window: usize, mut f: impl FnMut(usize, u8)) {
    let r = (window / 2) as isize;
    let (w, h) = (img.width(), img.height());
    let mut k = 0;
    for dy in -r..=r {
        let y = mirror_index(cy as isize + dy, h);
        for dx in -r..=r {
            let x = mirror_index(cx as isize + dx, w);
            f(k, img.get(x, y));
            k += 1;
        }
    }
}

/// Real-valued cross-correlation with a `window`×`window` kernel.
pub(crate) fn correlate(img: &GrayImage, kernel: &[f64], window: usize) -> Vec<f64> {
    debug_assert_eq!(kernel.len(), window * window);
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let mut acc = 0.0;
            for_window(img, x, y, window, |k, p| acc += kernel[k] * f64::from(p));
            out.push(acc);
        }
    }
    out
}

/// Sampled 2-D Gaussian on integer offsets, normalised to sum 1, row-major.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let mut k = Vec::with_capacity(window * window);
    for dy in -r..=r {
        for dx in -r..=r {
            k.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn from_real(img: &GrayImage, values: impl IntoIterator<Item = f64>) -> GrayImage {
    let pixels = values.into_iter().map(to_u8).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmoothKind {
    Mean,
    Gaussian { sigma: f64 },
}

/// Box or sampled-Gaussian smoothing.
pub fn linear_smooth(img: &GrayImage, kind: SmoothKind, window: usize) -> Result<GrayImage> {
    check_window("linear_smooth", window)?;
    match kind {
        SmoothKind::Mean => {
            let n = (window * window) as f64;
            let mut out = Vec::with_capacity(img.pixels().len());
            for y in 0..img.height() {
                for x in 0..img.width() {
                    let mut sum = 0u32;
                    for_window(img, x, y, window, |_, p| sum += u32::from(p));
                    out.push(f64::from(sum) / n);
                }
            }
            Ok(from_real(img, out))
        }
        SmoothKind::Gaussian { sigma } => {
            let (lo, hi) = super::GF_SIGMA_RANGE;
            if !(lo..=hi).contains(&sigma) {
                return Err(Error::invalid(
                    "linear_smooth",
                    format!("gaussian sigma {sigma} outside [{lo}, {hi}]"),
                ));
            }
            Ok(from_real(img, correlate(img, &gaussian_kernel(window, sigma), window)))
        }
    }
}

/// `in + λ·(in − G_σ(in))` with a Gaussian window of `2·ceil(2σ)+1`.
pub fn unsharp_mask(img: &GrayImage, sigma: f64, lambda: f64) -> Result<GrayImage> {
    if !(sigma > 0.0 && sigma.is_finite()) || !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "unsharp_mask",
            format!("need sigma > 0 and lambda >= 0, got {sigma}, {lambda}"),
        ));
    }
    let window = 2 * (2.0 * sigma).ceil() as usize + 1;
    let blurred = correlate(img, &gaussian_kernel(window, sigma), window);
    Ok(from_real(
        img,
        img.pixels().iter().zip(blurred).map(|(&p, g)| {
            let p = f64::from(p);
            p + lambda * (p - g)
        }),
    ))
}

pub fn median_filter(img: &GrayImage, window: usize) -> Result<GrayImage> {
    check_window("median_filter", window)?;
    let mut buf = vec![0u8; window * window];
    let mid = buf.len() / 2;
    let mut out = Vec::with_capacity(img.pixels().len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            for_window(img, x, y, window, |k, p| buf[k] = p);
            out.push(*buf.select_nth_unstable(mid).1);
        }
    }
    Ok(GrayImage::new(img.width(), img.height(), out).expect("same dimensions"))
}

/// Adaptive local Wiener filter with the noise power estimated as the mean
/// of all local variances.
pub fn wiener_filter(img: &GrayImage, window: usize) -> Result<GrayImage> {
    check_window("wiener_filter", window)?;
    let n = (window * window) as u64;
    let mut means = Vec::with_capacity(img.pixels().len());
    let mut vars = Vec::with_capacity(img.pixels().len());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (mut s1, mut s2) = (0u64, 0u64);
            for_window(img, x, y, window, |_, p| {
                s1 += u64::from(p);
                s2 += u64::from(p) * u64::from(p);
            });
            means.push(s1 as f64 / n as f64);
            // integer numerator keeps the variance exactly non-negative
            vars.push((n * s2 - s1 * s1) as f64 / (n * n) as f64);
        }
    }
    let noise = vars.iter().sum::<f64>() / vars.len() as f64;
    let out = img.pixels().iter().zip(means.iter().zip(&vars)).map(|(&p, (&mu, &var))| {
        let denom = var.max(noise);
        if denom == 0.0 {
            mu
        } else {
            mu + (var - noise).max(0.0) / denom * (f64::from(p) - mu)
        }
    });
    Ok(from_real(img, out))
}
