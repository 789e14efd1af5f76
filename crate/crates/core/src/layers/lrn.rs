//! Local response normalization across channels.
//!
//! `b_c = a_c / (k + (alpha / n) · Σ a_{c'}²)^beta`, the sum running over the
//! `n` channels centred on `c`, truncated at the channel edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub size: usize,
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            size: 5,
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

/// Per-element `scale^(-beta)` where `scale = k + (alpha/n)·Σ a²`, kept in
/// 64-bit for backward.
#[derive(Debug, Clone)]
pub struct LrnCache<T> {
    scale: Vec<f64>,
    inv_pow: Vec<f64>,
    _t: std::marker::PhantomData<T>,
}

fn neg_pow(s: f64, beta: f64) -> f64 {
    if beta == 0.75 {
        let r = s.sqrt();
        1.0 / (r * r.sqrt())
    } else {
        s.powf(-beta)
    }
}

fn nchw<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h * w)),
        s => Err(Error::ShapeMismatch {
            op: "lrn",
            left: s.to_vec(),
            right: vec![0, 0, 0, 0],
        }),
    }
}

fn window(c: usize, channels: usize, size: usize) -> std::ops::Range<usize> {
    let half = size / 2;
    c.saturating_sub(half)..(c + half + 1).min(channels)
}

pub fn lrn_forward<T: Scalar>(input: &Tensor<T>, p: LrnParams) -> Result<(Tensor<T>, LrnCache<T>)> {
    if p.size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("LRN size must be odd, got {}", p.size)));
    }
    let (n, c, hw) = nchw(input)?;
    let x = input.data();
    let mut scale = vec![0f64; x.len()];
    let mut inv_pow = vec![0f64; x.len()];
    let mut out = vec![T::zero(); x.len()];
    let coef = p.alpha / p.size as f64;
    let mut acc = vec![0f64; hw];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for cc in window(ch, c, p.size) {
                let plane = &x[base + cc * hw..base + (cc + 1) * hw];
                for (a, &v) in acc.iter_mut().zip(plane) {
                    let v = v.as_f64();
                    *a += v * v;
                }
            }
            let o = base + ch * hw;
            for i in 0..hw {
                let sc = p.k + coef * acc[i];
                let ip = neg_pow(sc, p.beta);
                scale[o + i] = sc;
                inv_pow[o + i] = ip;
                out[o + i] = T::from_f64(x[o + i].as_f64() * ip);
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out)?,
        LrnCache {
            scale,
            inv_pow,
            _t: std::marker::PhantomData,
        },
    ))
}

pub fn lrn_backward<T: Scalar>(input: &Tensor<T>, cache: &LrnCache<T>, grad_out: &Tensor<T>, p: LrnParams) -> Result<Tensor<T>> {
    grad_out.ensure_shape("lrn backward", input.shape())?;
    let (n, c, hw) = nchw(input)?;
    let x = input.data();
    let g = grad_out.data();
    let coef = 2.0 * p.alpha * p.beta / p.size as f64;

    // r_i = g_i · a_i · scale_i^(-beta-1)
    let r: Vec<f64> = (0..x.len())
        .map(|i| g[i].as_f64() * x[i].as_f64() * cache.inv_pow[i] / cache.scale[i])
        .collect();
    let mut out = vec![T::zero(); x.len()];
    let mut acc = vec![0f64; hw];
    for s in 0..n {
        let base = s * c * hw;
        for ch in 0..c {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for cc in window(ch, c, p.size) {
                for (a, &v) in acc.iter_mut().zip(&r[base + cc * hw..base + (cc + 1) * hw]) {
                    *a += v;
                }
            }
            let o = base + ch * hw;
            for i in 0..hw {
                let j = o + i;
                let direct = g[j].as_f64() * cache.inv_pow[j];
                out[j] = T::from_f64(direct - coef * x[j].as_f64() * acc[i]);
            }
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}
