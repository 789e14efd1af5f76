use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Concatenates `[N×Ci×H×W]` tensors along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let (n, h, w) = match first.shape() {
        &[n, _, h, w] => (n, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: s.to_vec(),
                right: vec![0, 0, 0, 0],
            })
        }
    };
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        match t.shape() {
            &[tn, c, th, tw] if (tn, th, tw) == (n, h, w) => channels.push(c),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape().to_vec(),
                    right: s.to_vec(),
                })
            }
        }
    }
    let total: usize = channels.iter().sum();
    let hw = h * w;
    let mut out = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for (t, &c) in inputs.iter().zip(&channels) {
            out.extend_from_slice(&t.data()[s * c * hw..(s + 1) * c * hw]);
        }
    }
    Tensor::new([n, total, h, w], out)
}

/// Splits a channel-concatenated gradient back into per-input pieces.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (n, c, h, w) = match grad.shape() {
        &[n, c, h, w] => (n, c, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "concat backward",
                left: s.to_vec(),
                right: channels.to_vec(),
            })
        }
    };
    if channels.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch {
            op: "concat backward",
            left: grad.shape().to_vec(),
            right: channels.to_vec(),
        });
    }
    let hw = h * w;
    let mut parts: Vec<Vec<T>> = channels.iter().map(|&ci| Vec::with_capacity(n * ci * hw)).collect();
    for s in 0..n {
        let mut off = s * c * hw;
        for (part, &ci) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[off..off + ci * hw]);
            off += ci * hw;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &ci)| Tensor::new([n, ci, h, w], d))
        .collect()
}
