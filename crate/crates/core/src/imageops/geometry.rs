use super::{to_u8, GrayImage};
use crate::error::{Error, Result};

pub const SCALE_RANGE: (f64, f64) = (0.55, 1.90);

/// Slack on the support test so that grid-aligned source coordinates
/// carrying trigonometric round-off still count as inside.
const SUPPORT_SLACK: f64 = 1e-9;

/// Bilinear sample at a continuous coordinate already inside the support.
fn bilinear(img: &GrayImage, sx: f64, sy: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let p = |x, y| f64::from(img.get(x, y));
    let top = (1.0 - fx) * p(x0, y0) + fx * p(x1, y0);
    let bottom = (1.0 - fx) * p(x0, y1) + fx * p(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

/// Output size of rescaling `len` by `factor`.
pub fn scaled_len(len: usize, factor: f64) -> usize {
    (len as f64 * factor).round() as usize
}

/// Corner-aligned bilinear rescaling: the first and last pixel centres of
/// input and output coincide.
pub fn resample_scale(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    let (lo, hi) = SCALE_RANGE;
    if !(lo..=hi).contains(&factor) {
        return Err(Error::invalid(
            "resample_scale",
            format!("factor {factor} outside [{lo}, {hi}]"),
        ));
    }
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = (scaled_len(w, factor), scaled_len(h, factor));
    if ow == 0 || oh == 0 {
        return Err(Error::invalid(
            "resample_scale",
            format!("{w}x{h} at factor {factor} leaves an empty image"),
        ));
    }
    let map = |o: usize, out_len: usize, in_len: usize| -> f64 {
        if out_len == 1 {
            0.0
        } else {
            (o * (in_len - 1)) as f64 / (out_len - 1) as f64
        }
    };
    Ok(GrayImage::from_fn(ow, oh, |x, y| {
        to_u8(bilinear(img, map(x, ow, w), map(y, oh, h)))
    }))
}

/// Rotation by `degrees` in [0, 45].
pub fn rotate(img: &GrayImage, degrees: f64) -> Result<GrayImage> {
    if !(0.0..=45.0).contains(&degrees) {
        return Err(Error::invalid("rotate", format!("{degrees} degrees outside [0, 45]")));
    }
    Ok(rotate_any(img, degrees))
}

/// Source coordinate that inverse mapping reads for output pixel `(x, y)`.
pub fn rotation_source(width: usize, height: usize, degrees: f64, x: f64, y: f64) -> (f64, f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let (dx, dy) = (x - cx, y - cy);
    (cx + c * dx + s * dy, cy - s * dx + c * dy)
}

/// Rotation about the image centre by any angle. Pixels whose source falls
/// outside the input are filled with 0.
pub fn rotate_any(img: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let inside = |v: f64, len: usize| v >= -SUPPORT_SLACK && v <= (len - 1) as f64 + SUPPORT_SLACK;
    GrayImage::from_fn(w, h, |x, y| {
        let (sx, sy) = rotation_source(w, h, degrees, x as f64, y as f64);
        if inside(sx, w) && inside(sy, h) {
            to_u8(bilinear(img, sx, sy))
        } else {
            0
        }
    })
}

/// Whether the centred `crop`×`crop` window of an image rotated by `degrees`
/// lies entirely inside the rotated support. The support is convex, so the
/// four corners decide.
pub fn rotation_crop_is_clean(width: usize, height: usize, degrees: f64, crop: usize) -> bool {
    if crop > width || crop > height {
        return false;
    }
    let (ox, oy) = ((width - crop) / 2, (height - crop) / 2);
    let corners = [(ox, oy), (ox + crop - 1, oy), (ox, oy + crop - 1), (ox + crop - 1, oy + crop - 1)];
    corners.iter().all(|&(x, y)| {
        let (sx, sy) = rotation_source(width, height, degrees, x as f64, y as f64);
        sx >= -SUPPORT_SLACK
            && sy >= -SUPPORT_SLACK
            && sx <= (width - 1) as f64 + SUPPORT_SLACK
            && sy <= (height - 1) as f64 + SUPPORT_SLACK
    })
}
