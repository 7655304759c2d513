use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::imageops::{to_u8, GrayImage};

/// Parameters of the synthetic texture corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub size: usize,
    /// Spectral exponent range; each image draws β uniformly from it.
    pub beta: (f64, f64),
    /// Output intensity range `(lo, hi)`; each image draws a span inside it
    /// covering at least a third of 0..=255.
    pub contrast: (u8, u8),
    /// Peak-to-peak weight of the planar gradient relative to the noise.
    pub gradient: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 64,
            beta: (1.0, 2.0),
            contrast: (0, 255),
            gradient: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::invalid("synth", format!("size {} below 32", self.size)));
        }
        let (b0, b1) = self.beta;
        if !(1.0..=2.0).contains(&b0) || !(1.0..=2.0).contains(&b1) || b0 > b1 {
            return Err(Error::invalid("synth", format!("beta range {b0}..{b1} not inside [1, 2]")));
        }
        let (lo, hi) = self.contrast;
        if u32::from(hi) < u32::from(lo) + 86 {
            return Err(Error::invalid(
                "synth",
                format!("contrast range {lo}..{hi} spans less than a third of 0..=255"),
            ));
        }
        if !(self.gradient >= 0.0 && self.gradient.is_finite()) {
            return Err(Error::invalid("synth", "gradient weight must be non-negative"));
        }
        Ok(())
    }
}

/// In-place 2-D inverse FFT of an `n`×`n` row-major spectrum.
fn ifft2(data: &mut [Complex<f64>], n: usize) {
    let fft = FftPlanner::new().plan_fft_inverse(n);
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::default(); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

/// Signed frequency of FFT bin `k` in cycles per sample.
fn freq(k: usize, n: usize) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k / n as f64
}

/// Random-phase 1/f^β noise plus a planar gradient, stretched to a random
/// intensity span. Deterministic in `(config.seed, index)`.
pub fn synth_image(config: &SynthConfig, index: u64) -> Result<GrayImage> {
    config.validate()?;
    let n = config.size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0x5e17, index]));
    let beta = if config.beta.0 == config.beta.1 {
        config.beta.0
    } else {
        rng.random_range(config.beta.0..=config.beta.1)
    };
    let mut spectrum = vec![Complex::default(); n * n];
    for ky in 0..n {
        for kx in 0..n {
            let f = freq(kx, n).hypot(freq(ky, n));
            if f == 0.0 {
                continue;
            }
            // amplitude f^(-β/2) gives a power spectrum falling as 1/f^β
            let amp = f.powf(-beta / 2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            spectrum[ky * n + kx] = Complex::from_polar(amp, phase);
        }
    }
    ifft2(&mut spectrum, n);
    let mut field: Vec<f64> = spectrum.iter().map(|c| c.re).collect();

    let (min, max) = min_max(&field);
    let span = (max - min).max(f64::MIN_POSITIVE);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let weight = config.gradient * span / n as f64;
    for y in 0..n {
        for x in 0..n {
            field[y * n + x] += weight * (gx * x as f64 + gy * y as f64);
        }
    }

    let (lo, hi) = (f64::from(config.contrast.0), f64::from(config.contrast.1));
    let min_span = 86.0;
    let width = rng.random_range(min_span..=hi - lo);
    let start = rng.random_range(lo..=hi - width);
    let (min, max) = min_max(&field);
    let scale = width / (max - min).max(f64::MIN_POSITIVE);
    Ok(GrayImage::from_fn(n, n, |x, y| {
        to_u8(start + (field[y * n + x] - min) * scale)
    }))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn high_band_fraction(img: &GrayImage) -> f64 {
        let n = img.width();
        let mean = img.pixels().iter().map(|&p| f64::from(p)).sum::<f64>() / (n * n) as f64;
        let mut data: Vec<Complex<f64>> = img
            .pixels()
            .iter()
            .map(|&p| Complex::new(f64::from(p) - mean, 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        for row in data.chunks_mut(n) {
            fft.process(row);
        }
        let mut col = vec![Complex::default(); n];
        for x in 0..n {
            (0..n).for_each(|y| col[y] = data[y * n + x]);
            fft.process(&mut col);
            (0..n).for_each(|y| data[y * n + x] = col[y]);
        }
        let (mut high, mut total) = (0.0, 0.0);
        for ky in 0..n {
            for kx in 0..n {
                let p = data[ky * n + kx].norm_sqr();
                total += p;
                if freq(kx, n).hypot(freq(ky, n)) > 0.25 {
                    high += p;
                }
            }
        }
        high / total
    }

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_image(&cfg, 3).unwrap(), synth_image(&cfg, 3).unwrap());
        assert_ne!(synth_image(&cfg, 3).unwrap(), synth_image(&cfg, 4).unwrap());
        let other = SynthConfig { seed: 1, ..cfg.clone() };
        assert_ne!(synth_image(&cfg, 3).unwrap(), synth_image(&other, 3).unwrap());
    }

    #[test]
    fn steeper_spectrum_has_less_high_frequency_power() {
        for seed in 0..5 {
            let flat = SynthConfig { beta: (1.0, 1.0), seed, ..Default::default() };
            let steep = SynthConfig { beta: (2.0, 2.0), seed, ..Default::default() };
            let a = high_band_fraction(&synth_image(&flat, 0).unwrap());
            let b = high_band_fraction(&synth_image(&steep, 0).unwrap());
            assert!(b / a < 1.0, "{b} vs {a}");
        }
    }

    #[test]
    fn texture_spans_a_third_of_the_range() {
        let cfg = SynthConfig::default();
        for i in 0..50 {
            let img = synth_image(&cfg, i).unwrap();
            assert_eq!((img.width(), img.height()), (64, 64));
            let lo = *img.pixels().iter().min().unwrap();
            let hi = *img.pixels().iter().max().unwrap();
            assert!(hi - lo >= 85, "{i}: {lo}..{hi}");
        }
    }

    #[test]
    fn validation() {
        assert!(synth_image(&SynthConfig { size: 16, ..Default::default() }, 0).is_err());
        assert!(synth_image(&SynthConfig { beta: (0.5, 1.0), ..Default::default() }, 0).is_err());
        assert!(synth_image(&SynthConfig { contrast: (100, 150), ..Default::default() }, 0).is_err());
    }
}
