use super::{fmt_shape, Tensor};
use crate::error::{Error, Result};

/// |a − c| / max(|a|, |c|, 1e-12).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Compares `analytic` against central differences of `f` at `point`, over
/// every coordinate. Returns the maximum relative error.
pub fn finite_diff_check<F>(f: F, point: &Tensor, analytic: &Tensor, eps: f64) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_check_coords(f, point, analytic, &coords, eps)
}

/// Same as [`finite_diff_check`] restricted to the given flat coordinates.
pub fn finite_diff_check_coords<F>(
    mut f: F,
    point: &Tensor,
    analytic: &Tensor,
    coords: &[usize],
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("finite_diff_check", format!("eps must be > 0, got {eps}")));
    }
    if analytic.shape() != point.shape() {
        return Err(Error::ShapeMismatch {
            op: "finite_diff_check",
            left: fmt_shape(&point.shape()),
            right: fmt_shape(&analytic.shape()),
        });
    }
    let mut probe = point.clone();
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("function value at coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn([1, 2, 3, 3], 1.0, &mut rng);
        let grad = x.map(|v| 2.0 * v);
        let err = finite_diff_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn([1, 1, 4, 4], 1.0, &mut rng);
        let grad = x.map(|v| 4.0 * v);
        let err = finite_diff_check(|t| t.data().iter().map(|v| v * v).sum(), &x, &grad, 1e-5).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }

    #[test]
    fn rejects_non_finite_and_bad_eps() {
        let x = Tensor::filled([1, 1, 1, 2], 1.0);
        let g = Tensor::zeros([1, 1, 1, 2]);
        assert!(finite_diff_check(|_| f64::NAN, &x, &g, 1e-5).is_err());
        assert!(finite_diff_check(|_| 0.0, &x, &g, 0.0).is_err());
    }
}
