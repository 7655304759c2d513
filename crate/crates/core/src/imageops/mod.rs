//! The eleven image-processing operations, their parameter sampling, and
//! the 8-bit grayscale image type they act on.

mod filter;
mod geometry;
mod gray;
mod jp2;
mod jpeg;
mod point;
mod spec;

pub use filter::{
    gaussian_kernel, linear_smooth, median_filter, mirror_index, unsharp_mask, wiener_filter, SmoothKind,
};
pub use geometry::{
    resample_scale, rotate, rotate_any, rotation_crop_is_clean, rotation_source, scaled_len, SCALE_RANGE,
};
pub use gray::{psnr, to_u8, GrayImage};
pub use jp2::{jp2_roundtrip, jp2_roundtrip_with_stats, Jp2Stats, Wavelet};
pub use jpeg::{ijg_scale, jpeg_roundtrip, jpeg_roundtrip_with_table, quant_table, LUMA_TABLE};
pub use point::{equalize_lut, gamma_correct, gamma_lut, hist_equalize};
pub use spec::*;

use crate::error::Result;

/// Runs the operation described by `spec`. Only scaling changes the size.
pub fn apply(img: &GrayImage, spec: &OperationSpec) -> Result<GrayImage> {
    match *spec {
        OperationSpec::GC { gamma } => gamma_correct(img, gamma),
        OperationSpec::HE => Ok(hist_equalize(img)),
        OperationSpec::UM { sigma, lambda } => unsharp_mask(img, sigma, lambda),
        OperationSpec::MeanF { window } => linear_smooth(img, SmoothKind::Mean, window),
        OperationSpec::GF { window, sigma } => linear_smooth(img, SmoothKind::Gaussian { sigma }, window),
        OperationSpec::MedF { window } => median_filter(img, window),
        OperationSpec::WF { window } => wiener_filter(img, window),
        OperationSpec::Sca { factor } => resample_scale(img, factor),
        OperationSpec::Rot { degrees } => rotate(img, degrees),
        OperationSpec::JPEG { quality } => jpeg_roundtrip(img, quality),
        OperationSpec::JP2 { ratio } => jp2_roundtrip(img, ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn apply_examples() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * 16 + y) as u8);
        assert_eq!(apply(&img, &OperationSpec::GC { gamma: 1.0 }).unwrap(), img);
        let impulse = GrayImage::from_fn(9, 9, |x, y| if (x, y) == (4, 4) { 255 } else { 0 });
        let out = apply(&impulse, &OperationSpec::MedF { window: 3 }).unwrap();
        assert!(out.pixels().iter().all(|&p| p == 0));
        let big = GrayImage::filled(512, 512, 1);
        let up = apply(&big, &OperationSpec::Sca { factor: 1.10 }).unwrap();
        assert_eq!((up.width(), up.height()), (563, 563));
    }

    #[test]
    fn random_specs_give_valid_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for i in 0..1000 {
            let (w, h) = (rng.random_range(8..40), rng.random_range(8..40));
            let img = GrayImage::from_fn(w, h, |x, y| ((x * 9 + y * 5) as u8).wrapping_add(rng.random_range(0..30)));
            let spec = sample_operation(OperationKind::ALL[i % 11], &mut rng);
            let out = apply(&img, &spec).unwrap();
            assert_eq!(out.pixels().len(), out.width() * out.height());
            if spec.kind() != OperationKind::Sca {
                assert_eq!((out.width(), out.height()), (w, h), "{spec:?}");
            }
        }
    }
}
