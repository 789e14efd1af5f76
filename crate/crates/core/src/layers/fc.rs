use crate::error::{Error, Result};
use crate::tensor::{gemm, transpose_into, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Leading axis is the batch; all trailing axes are flattened into `D`.
fn rows<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let n = input.dim(0);
    let d = input.len() / n;
    match weight.shape() {
        &[wd, m] if wd == d && input.rank() >= 2 => Ok((n, d, m)),
        s => Err(Error::ShapeMismatch {
            op: "fully_connected",
            left: input.shape().to_vec(),
            right: s.to_vec(),
        }),
    }
}

/// `input [N×D] · weight [D×M] + bias [M]`.
pub fn fc_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d, m) = rows(input, weight)?;
    bias.ensure_shape("fully_connected bias", &[m])?;
    let mut out = vec![T::zero(); n * m];
    gemm(n, d, m, input.data(), weight.data(), &mut out);
    for row in out.chunks_exact_mut(m) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Tensor::new([n, m], out)
}

pub fn fc_backward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &Tensor<T>, need_input_grad: bool) -> Result<FcGrads<T>> {
    let (n, d, m) = rows(input, weight)?;
    grad_out.ensure_shape("fully_connected backward", &[n, m])?;
    let g = grad_out.data();

    let mut x_t = vec![T::zero(); n * d];
    transpose_into(input.data(), n, d, &mut x_t);
    let mut dw = vec![T::zero(); d * m];
    gemm(d, n, m, &x_t, g, &mut dw);

    let db: Vec<T> = (0..m).map(|j| T::from_f64((0..n).map(|i| g[i * m + j].as_f64()).sum())).collect();

    let input_grad = if need_input_grad {
        let mut w_t = vec![T::zero(); d * m];
        transpose_into(weight.data(), d, m, &mut w_t);
        let mut dx = vec![T::zero(); n * d];
        gemm(n, m, d, g, &w_t, &mut dx);
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok(FcGrads {
        input: input_grad,
        weight: Tensor::new([d, m], dw)?,
        bias: Tensor::new([m], db)?,
    })
}
