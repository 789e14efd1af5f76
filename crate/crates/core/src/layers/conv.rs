use crate::error::{Error, Result};
use crate::tensor::{col2im_from, gemm, im2col_into, transpose_into, Scalar, Tensor, Window};

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    patch: usize,
}

fn geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, window: Window) -> Result<Geometry> {
    let (n, cin, h, w) = match input.shape() {
        &[n, c, h, w] => (n, c, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: s.to_vec(),
                right: weight.shape().to_vec(),
            })
        }
    };
    let (cout, kh, kw) = match weight.shape() {
        &[co, ci, kh, kw] if ci == cin && (kh, kw) == window.kernel => (co, kh, kw),
        s => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: s.to_vec(),
            })
        }
    };
    let (ho, wo) = window.conv_output(h, w)?;
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        ho,
        wo,
        patch: cin * kh * kw,
    })
}

fn unfold_batch<T: Scalar>(input: &Tensor<T>, g: &Geometry, window: Window) -> Vec<T> {
    let hw = g.ho * g.wo;
    let row_len = g.n * hw;
    let mut cols = vec![T::zero(); g.patch * row_len];
    let plane = g.cin * g.h * g.w;
    for s in 0..g.n {
        im2col_into(
            &input.data()[s * plane..(s + 1) * plane],
            g.cin,
            g.h,
            g.w,
            window,
            g.ho,
            g.wo,
            &mut cols,
            row_len,
            s * hw,
        );
    }
    cols
}

/// Cross-correlation of `input [N×Cin×H×W]` with `weight [Cout×Cin×kh×kw]`
/// plus a per-output-channel bias.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, window: Window) -> Result<Tensor<T>> {
    let g = geometry(input, weight, window)?;
    bias.ensure_shape("conv2d bias", &[g.cout])?;
    let hw = g.ho * g.wo;
    let cols = unfold_batch(input, &g, window);
    let mut prod = vec![T::zero(); g.cout * g.n * hw];
    gemm(g.cout, g.patch, g.n * hw, weight.data(), &cols, &mut prod);

    let mut out = vec![T::zero(); g.n * g.cout * hw];
    for s in 0..g.n {
        for c in 0..g.cout {
            let b = bias.data()[c];
            let src = &prod[c * g.n * hw + s * hw..c * g.n * hw + (s + 1) * hw];
            let dst = &mut out[(s * g.cout + c) * hw..(s * g.cout + c + 1) * hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = v + b;
            }
        }
    }
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    window: Window,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = geometry(input, weight, window)?;
    grad_out.ensure_shape("conv2d backward", &[g.n, g.cout, g.ho, g.wo])?;
    let hw = g.ho * g.wo;
    let row_len = g.n * hw;

    // [N×Cout×HW] -> [Cout × N·HW]
    let mut dy = vec![T::zero(); g.cout * row_len];
    for s in 0..g.n {
        for c in 0..g.cout {
            dy[c * row_len + s * hw..c * row_len + (s + 1) * hw]
                .copy_from_slice(&grad_out.data()[(s * g.cout + c) * hw..(s * g.cout + c + 1) * hw]);
        }
    }

    let bias: Vec<T> = (0..g.cout)
        .map(|c| T::from_f64(dy[c * row_len..(c + 1) * row_len].iter().map(|v| v.as_f64()).sum()))
        .collect();

    let cols = unfold_batch(input, &g, window);
    let mut cols_t = vec![T::zero(); cols.len()];
    transpose_into(&cols, g.patch, row_len, &mut cols_t);
    drop(cols);
    let mut dw = vec![T::zero(); g.cout * g.patch];
    gemm(g.cout, row_len, g.patch, &dy, &cols_t, &mut dw);
    drop(cols_t);

    let input_grad = if need_input_grad {
        let mut w_t = vec![T::zero(); weight.len()];
        transpose_into(weight.data(), g.cout, g.patch, &mut w_t);
        let mut dcols = vec![T::zero(); g.patch * row_len];
        gemm(g.patch, g.cout, row_len, &w_t, &dy, &mut dcols);
        let plane = g.cin * g.h * g.w;
        let mut dx = vec![T::zero(); g.n * plane];
        for s in 0..g.n {
            col2im_from(
                &dcols,
                g.cin,
                g.h,
                g.w,
                window,
                g.ho,
                g.wo,
                row_len,
                s * hw,
                &mut dx[s * plane..(s + 1) * plane],
            );
        }
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new([g.cout], bias)?,
    })
}
