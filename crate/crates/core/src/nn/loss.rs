use super::{NnError, Tensor};

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let s = logits.shape();
    if s.len() != 2 || s[1] == 0 {
        return Err(NnError::Shape(format!("softmax expects N x C logits, got {s:?}")));
    }
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(s[1]) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`, and
/// its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(NnError::Shape(format!("logits {s:?} do not match {} labels", labels.len())));
    }
    let (n, c) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::LabelOutOfRange { label: bad, classes: c });
    }
    let mut grad = Tensor::zeros(s);
    let mut loss = 0.0;
    for ((row, g), &label) in logits.data().chunks(c).zip(grad.data_mut().chunks_mut(c)).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss -= row[label] - max - log_sum;
        for (gi, v) in g.iter_mut().zip(row) {
            *gi = (v - max - log_sum).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}
