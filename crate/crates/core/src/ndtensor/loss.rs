use super::{fmt_shape, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax over the class axis of N×K×1×1 logits, stabilised by
/// subtracting each row's maximum.
pub fn softmax(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.channels();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / sum).collect()
        })
        .collect()
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, k, h, w] = logits.shape();
    if h != 1 || w != 1 || labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: fmt_shape(&logits.shape()),
            right: format!("{} labels", labels.len()),
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("label {bad} out of range for {k} classes"),
        ));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        for (j, v) in row.iter().enumerate() {
            let p = (v - log_sum).exp();
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push((p - onehot) / n as f64);
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("softmax_cross_entropy loss".into()));
    }
    Ok((loss, Tensor::from_vec(logits.shape(), grad)?))
}
