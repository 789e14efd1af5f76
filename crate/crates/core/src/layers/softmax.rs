use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of `logits [N×K]`, stabilised by subtracting the row max.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = match logits.shape() {
        &[n, k] => (n, k),
        s => {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: s.to_vec(),
                right: vec![0, 0],
            })
        }
    };
    let mut out = vec![T::zero(); n * k];
    for (row, dst) in logits.data().chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (d, e) in dst.iter_mut().zip(exps) {
            *d = T::from_f64(e / z);
        }
    }
    Tensor::new([n, k], out)
}

/// Mean cross-entropy over the batch. Returns `(loss, probabilities)`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let probs = softmax(logits)?;
    let loss = xent_from_probs(&probs, logits, labels)?;
    Ok((loss, probs))
}

/// Mean negative log-likelihood, computed from the logits via log-sum-exp so
/// saturated rows stay finite.
fn xent_from_probs<T: Scalar>(probs: &Tensor<T>, logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, k) = (probs.dim(0), probs.dim(1));
    check_labels(n, k, labels)?;
    let mut total = 0f64;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[y].as_f64();
    }
    Ok(total / n as f64)
}

fn check_labels(n: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            op: "softmax_xent labels",
            left: vec![n, k],
            right: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok(())
}

/// Gradient `(p − onehot) · scale`; `scale = 1/N` gives the batch-mean loss gradient.
pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, labels: &[usize], scale: f64) -> Result<Tensor<T>> {
    let (n, k) = (probs.dim(0), probs.dim(1));
    check_labels(n, k, labels)?;
    let mut grad = probs.clone();
    let s = T::from_f64(scale);
    for (row, &y) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        row[y] -= T::one();
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    Ok(grad)
}
