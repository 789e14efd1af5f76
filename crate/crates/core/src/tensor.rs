//! Dense row-major tensors and the numeric kernels the layers are built on.
//!
//! Storage is generic over [`Scalar`] so the same kernels run in 32-bit for
//! training and in 64-bit for gradient checks. Reductions always accumulate
//! in `f64` with a fixed per-element summation order, so results never depend
//! on how work is split.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar: Float + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Display + Send + Sync + 'static {
    fn as_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let preview: Vec<_> = self.data.iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        if len != data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            data: (0..len).map(&mut f).collect(),
            shape,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Extent of axis `axis`; panics if out of range.
    #[inline]
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of bounds for extent {d}");
            acc * d + i
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn ensure_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        other.ensure_shape("add", &self.shape)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of `self[i] * other[i]`, accumulated in `f64`.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        other.ensure_shape("dot", &self.shape)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn transpose2(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![0, 0],
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); r * c];
        transpose_into(&self.data, r, c, &mut out);
        Ok(Self {
            shape: vec![c, r],
            data: out,
        })
    }
}

pub(crate) fn transpose_into<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// `a [m×k] · b [k×n]`, accumulated in `f64`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, &a.data, &b.data, &mut out);
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// Row-major `out = a · b` for raw slices.
///
/// Every output element is summed over `k` in increasing order, starting from
/// zero, so the result equals a plain triple loop with an `f64` accumulator.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    // Column blocks sized so the accumulator tile for all rows stays in
    // cache; `b` is then streamed once. Per-element order is unchanged.
    if m == 0 || n == 0 {
        return;
    }
    let jb = (16_384 / m).clamp(16, 1024).min(n);
    let mut acc = vec![0f64; m * jb];
    for j0 in (0..n).step_by(jb) {
        let jn = jb.min(n - j0);
        acc.iter_mut().for_each(|v| *v = 0.0);
        let r = |q: usize| &b[q * n + j0..q * n + j0 + jn];
        let mut p = 0;
        while p + 4 <= k {
            let (b0, b1, b2, b3) = (r(p), r(p + 1), r(p + 2), r(p + 3));
            for i in 0..m {
                let arow = &a[i * k + p..i * k + p + 4];
                let (a0, a1, a2, a3) = (arow[0].as_f64(), arow[1].as_f64(), arow[2].as_f64(), arow[3].as_f64());
                if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                    continue;
                }
                let acc = &mut acc[i * jb..i * jb + jn];
                for j in 0..jn {
                    let mut s = acc[j];
                    s += a0 * b0[j].as_f64();
                    s += a1 * b1[j].as_f64();
                    s += a2 * b2[j].as_f64();
                    s += a3 * b3[j].as_f64();
                    acc[j] = s;
                }
            }
            p += 4;
        }
        while p < k {
            let brow = r(p);
            for i in 0..m {
                let av = a[i * k + p].as_f64();
                if av != 0.0 {
                    for (s, &x) in acc[i * jb..i * jb + jn].iter_mut().zip(brow) {
                        *s += av * x.as_f64();
                    }
                }
            }
            p += 1;
        }
        for i in 0..m {
            for (o, &v) in out[i * n + j0..i * n + j0 + jn].iter_mut().zip(&acc[i * jb..i * jb + jn]) {
                *o = T::from_f64(v);
            }
        }
    }
}

/// Window geometry shared by convolution, im2col, and pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Window {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride: (stride, stride),
            pad: (pad, pad),
        }
    }

    /// Output extents for convolution. A trailing remainder is only tolerated
    /// when it falls entirely inside the padding; dropping real input rows or
    /// columns is a non-integral extent.
    pub fn conv_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_extent("conv", h, self.kernel.0, self.stride.0, self.pad.0)?,
            conv_extent("conv", w, self.kernel.1, self.stride.1, self.pad.1)?,
        ))
    }

    /// Output extents for pooling: floor arithmetic, no ceil mode.
    pub fn pool_output(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            pool_extent(h, self.kernel.0, self.stride.0, self.pad.0)?,
            pool_extent(w, self.kernel.1, self.stride.1, self.pad.1)?,
        ))
    }
}

fn conv_extent(op: &'static str, input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let err = || Error::NonIntegralExtent {
        op,
        input,
        kernel,
        stride,
        pad,
    };
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return Err(err());
    }
    let out = (input + 2 * pad - kernel) / stride + 1;
    let covered_to = (out - 1) * stride + kernel; // exclusive, padded coordinates
    if covered_to < pad + input {
        return Err(err());
    }
    Ok(out)
}

fn pool_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel || pad >= kernel {
        return Err(Error::NonIntegralExtent {
            op: "pool",
            input,
            kernel,
            stride,
            pad,
        });
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Unfold `input [C×H×W]` into `[(C·kh·kw) × (Hout·Wout)]`.
pub fn im2col<T: Scalar>(input: &Tensor<T>, window: Window) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input, "im2col")?;
    let (ho, wo) = window.conv_output(h, w)?;
    let rows = c * window.kernel.0 * window.kernel.1;
    let mut out = vec![T::zero(); rows * ho * wo];
    im2col_into(input.data(), c, h, w, window, ho, wo, &mut out, ho * wo, 0);
    Tensor::new([rows, ho * wo], out)
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[C×H×W]` image.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, channels: usize, h: usize, w: usize, window: Window) -> Result<Tensor<T>> {
    let (ho, wo) = window.conv_output(h, w)?;
    let rows = channels * window.kernel.0 * window.kernel.1;
    cols.ensure_shape("col2im", &[rows, ho * wo])?;
    let mut out = vec![T::zero(); channels * h * w];
    col2im_from(cols.data(), channels, h, w, window, ho, wo, ho * wo, 0, &mut out);
    Tensor::new([channels, h, w], out)
}

fn chw<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::ShapeMismatch {
            op,
            left: s.to_vec(),
            right: vec![0, 0, 0],
        }),
    }
}

/// Writes the unfolded image into columns `[col_offset, col_offset + ho·wo)` of
/// a row-major matrix whose rows have length `row_len`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col_into<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    dst: &mut [T],
    row_len: usize,
    col_offset: usize,
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let out_row = &mut dst[row * row_len + col_offset..row * row_len + col_offset + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let seg = &mut out_row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        seg.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { line[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns `[col_offset, col_offset + ho·wo)` into `dst [C×H×W]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_from<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    row_len: usize,
    col_offset: usize,
    dst: &mut [T],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let in_row = &cols[row * row_len + col_offset..row * row_len + col_offset + ho * wo];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += in_row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}
