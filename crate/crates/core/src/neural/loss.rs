use ndarray::Array2;

use crate::error::{GapError, Result};

/// Row-wise softmax.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean cross-entropy over the batch and its gradient
/// `(softmax - one_hot) / batch`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(GapError::DimensionMismatch(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if b == 0 {
        return Err(GapError::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(GapError::LabelOutOfRange {
            label,
            num_classes: c,
        });
    }
    let mut loss = 0.0;
    let mut grad = Array2::<f64>::zeros((b, c));
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        for (j, &x) in row.iter().enumerate() {
            grad[[i, j]] = (x - lse).exp();
        }
        grad[[i, y]] -= 1.0;
    }
    grad /= b as f64;
    Ok((loss / b as f64, grad))
}
