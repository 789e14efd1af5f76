//! Inception module: four parallel branches concatenated along channels.
//!
//! ```text
//! input ─┬─ 1x1 ───────────────────┐
//!        ├─ 1x1 reduce ── 3x3 (p1) ├─ concat
//!        ├─ 1x1 reduce ── 5x5 (p2) │
//!        └─ 3x3 maxpool (s1 p1) ── 1x1 proj
//! ```
//! Every convolution is followed by a ReLU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::activation::{relu_backward, relu_forward};
use crate::layers::concat::{concat_channels, split_channels};
use crate::layers::conv::{conv2d_backward, conv2d_forward};
use crate::layers::pool::{maxpool_backward, maxpool_forward, PoolIndices};
use crate::tensor::{Scalar, Tensor, Window};

/// Branch widths, in the order of the reference tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub c1: usize,
    pub c3_reduce: usize,
    pub c3: usize,
    pub c5_reduce: usize,
    pub c5: usize,
    pub pool_proj: usize,
}

/// Sub-layer names, one per convolution, in parameter order.
pub const BRANCH_SLOTS: [&str; 6] = ["1x1", "3x3_reduce", "3x3", "5x5_reduce", "5x5", "pool_proj"];

impl InceptionSpec {
    pub const fn new(c1: usize, c3_reduce: usize, c3: usize, c5_reduce: usize, c5: usize, pool_proj: usize) -> Self {
        Self {
            c1,
            c3_reduce,
            c3,
            c5_reduce,
            c5,
            pool_proj,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.c1 + self.c3 + self.c5 + self.pool_proj
    }

    /// `(out, in, kernel)` of each convolution given the module's input channels.
    pub fn conv_shapes(&self, cin: usize) -> [(usize, usize, usize); 6] {
        [
            (self.c1, cin, 1),
            (self.c3_reduce, cin, 1),
            (self.c3, self.c3_reduce, 3),
            (self.c5_reduce, cin, 1),
            (self.c5, self.c5_reduce, 5),
            (self.pool_proj, cin, 1),
        ]
    }
}

fn windows() -> [Window; 6] {
    [
        Window::square(1, 1, 0),
        Window::square(1, 1, 0),
        Window::square(3, 1, 1),
        Window::square(1, 1, 0),
        Window::square(5, 1, 2),
        Window::square(1, 1, 0),
    ]
}

const POOL: Window = Window {
    kernel: (3, 3),
    stride: (1, 1),
    pad: (1, 1),
};

/// Borrowed `(weight, bias)` pairs in [`BRANCH_SLOTS`] order.
pub struct InceptionParams<'a, T> {
    pub convs: [(&'a Tensor<T>, &'a Tensor<T>); 6],
}

#[derive(Debug, Clone)]
pub struct InceptionCache<T> {
    reduce3: Tensor<T>,
    reduce5: Tensor<T>,
    pooled: Tensor<T>,
    pool_idx: PoolIndices,
    /// Post-ReLU branch outputs, used as ReLU masks.
    branches: [Tensor<T>; 4],
}

#[derive(Debug, Clone)]
pub struct InceptionGrads<T> {
    pub input: Tensor<T>,
    /// `(weight, bias)` gradients in [`BRANCH_SLOTS`] order.
    pub convs: Vec<(Tensor<T>, Tensor<T>)>,
}

fn conv_relu<T: Scalar>(x: &Tensor<T>, p: (&Tensor<T>, &Tensor<T>), win: Window) -> Result<Tensor<T>> {
    Ok(relu_forward(&conv2d_forward(x, p.0, p.1, win)?))
}

pub fn inception_forward<T: Scalar>(
    input: &Tensor<T>,
    spec: &InceptionSpec,
    params: &InceptionParams<'_, T>,
) -> Result<(Tensor<T>, InceptionCache<T>)> {
    let cin = input.shape().get(1).copied().unwrap_or(0);
    for ((w, _), (co, ci, k)) in params.convs.iter().zip(spec.conv_shapes(cin)) {
        if w.shape() != [co, ci, k, k] {
            return Err(Error::ShapeMismatch {
                op: "inception",
                left: w.shape().to_vec(),
                right: vec![co, ci, k, k],
            });
        }
    }
    let win = windows();
    let c = &params.convs;
    let b1 = conv_relu(input, c[0], win[0])?;
    let reduce3 = conv_relu(input, c[1], win[1])?;
    let b3 = conv_relu(&reduce3, c[2], win[2])?;
    let reduce5 = conv_relu(input, c[3], win[3])?;
    let b5 = conv_relu(&reduce5, c[4], win[4])?;
    let (pooled, pool_idx) = maxpool_forward(input, POOL)?;
    let bp = conv_relu(&pooled, c[5], win[5])?;
    let out = concat_channels(&[&b1, &b3, &b5, &bp])?;
    Ok((
        out,
        InceptionCache {
            reduce3,
            reduce5,
            pooled,
            pool_idx,
            branches: [b1, b3, b5, bp],
        },
    ))
}

pub fn inception_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &InceptionSpec,
    params: &InceptionParams<'_, T>,
    cache: &InceptionCache<T>,
    grad_out: &Tensor<T>,
) -> Result<InceptionGrads<T>> {
    let win = windows();
    let c = &params.convs;
    let parts = split_channels(grad_out, &[spec.c1, spec.c3, spec.c5, spec.pool_proj])?;
    let masked: Vec<Tensor<T>> = parts
        .iter()
        .zip(&cache.branches)
        .map(|(g, out)| relu_backward(out, g))
        .collect::<Result<_>>()?;

    let mut grads: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; 6];
    let mut dx = Tensor::zeros(input.shape().to_vec());

    let g1 = conv2d_backward(input, c[0].0, win[0], &masked[0], true)?;
    dx.add_assign(g1.input.as_ref().unwrap())?;
    grads[0] = Some((g1.weight, g1.bias));

    let g3 = conv2d_backward(&cache.reduce3, c[2].0, win[2], &masked[1], true)?;
    grads[2] = Some((g3.weight, g3.bias));
    let d_r3 = relu_backward(&cache.reduce3, g3.input.as_ref().unwrap())?;
    let g3r = conv2d_backward(input, c[1].0, win[1], &d_r3, true)?;
    dx.add_assign(g3r.input.as_ref().unwrap())?;
    grads[1] = Some((g3r.weight, g3r.bias));

    let g5 = conv2d_backward(&cache.reduce5, c[4].0, win[4], &masked[2], true)?;
    grads[4] = Some((g5.weight, g5.bias));
    let d_r5 = relu_backward(&cache.reduce5, g5.input.as_ref().unwrap())?;
    let g5r = conv2d_backward(input, c[3].0, win[3], &d_r5, true)?;
    dx.add_assign(g5r.input.as_ref().unwrap())?;
    grads[3] = Some((g5r.weight, g5r.bias));

    let gp = conv2d_backward(&cache.pooled, c[5].0, win[5], &masked[3], true)?;
    grads[5] = Some((gp.weight, gp.bias));
    let d_in_pool = maxpool_backward(input.shape(), &cache.pool_idx, gp.input.as_ref().unwrap())?;
    dx.add_assign(&d_in_pool)?;

    Ok(InceptionGrads {
        input: dx,
        convs: grads.into_iter().map(|g| g.expect("every branch visited")).collect(),
    })
}
