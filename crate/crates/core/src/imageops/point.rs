use super::{to_u8, GrayImage};
use crate::error::{Error, Result};

fn map_lut(img: &GrayImage, lut: &[u8; 256]) -> GrayImage {
    let pixels = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    GrayImage::new(img.width(), img.height(), pixels).expect("same dimensions")
}

/// `out = round(255·(in/255)^γ)`.
pub fn gamma_correct(img: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma_correct", format!("gamma must be positive, got {gamma}")));
    }
    Ok(map_lut(img, &gamma_lut(gamma)))
}

pub fn gamma_lut(gamma: f64) -> [u8; 256] {
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = to_u8(255.0 * (v as f64 / 255.0).powf(gamma));
    }
    lut
}

/// Global histogram equalisation. A single-valued image is returned as is.
pub fn hist_equalize(img: &GrayImage) -> GrayImage {
    match equalize_lut(img) {
        Some(lut) => map_lut(img, &lut),
        None => img.clone(),
    }
}

/// The equalisation mapping, or `None` for a single-valued image.
pub fn equalize_lut(img: &GrayImage) -> Option<[u8; 256]> {
    let mut hist = [0u64; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let total = img.pixels().len() as u64;
    let min_count = hist[*img.pixels().iter().min().expect("non-empty") as usize];
    if min_count == total {
        return None;
    }
    let mut lut = [0u8; 256];
    let mut cum = 0u64;
    for v in 0..256 {
        cum += hist[v];
        // below the darkest pixel the numerator would go negative; nothing maps there
        let num = cum.saturating_sub(min_count) as f64;
        lut[v] = to_u8(255.0 * num / (total - min_count) as f64);
    }
    Some(lut)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gamma_examples() {
        let img = GrayImage::from_fn(3, 1, |x, _| [0, 128, 255][x]);
        assert_eq!(gamma_correct(&img, 0.5).unwrap().pixels(), &[0, 181, 255]);
        assert_eq!(gamma_correct(&img, 2.0).unwrap().pixels()[0], 0);
        let ramp = GrayImage::from_fn(256, 1, |x, _| x as u8);
        assert_eq!(gamma_correct(&ramp, 1.0).unwrap(), ramp);
        assert!(gamma_correct(&ramp, 0.0).is_err());
    }

    #[test]
    fn gamma_is_monotone_with_fixed_endpoints() {
        for g in super::super::GAMMAS {
            let lut = gamma_lut(g);
            assert!(lut.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!((lut[0], lut[255]), (0, 255));
        }
    }

    #[test]
    fn equalize_degenerate_and_binary() {
        let flat = GrayImage::filled(8, 8, 77);
        assert_eq!(hist_equalize(&flat), flat);
        let half = GrayImage::from_fn(8, 8, |x, _| if x < 4 { 0 } else { 255 });
        assert_eq!(hist_equalize(&half), half);
    }

    #[test]
    fn equalize_is_monotone_and_reaches_white() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let lo: u8 = rng.random_range(0..100);
            let hi: u8 = rng.random_range(lo + 1..=255);
            let img = GrayImage::from_fn(16, 16, |_, _| rng.random_range(lo..=hi));
            let lut = equalize_lut(&img).unwrap();
            assert!(lut.windows(2).all(|w| w[0] <= w[1]));
            let out = hist_equalize(&img);
            assert!(out.pixels().contains(&255));
            assert!(out.pixels().contains(&0));
        }
    }
}
