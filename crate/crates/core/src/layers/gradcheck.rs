//! Central finite-difference helpers for checking backward passes.

use crate::tensor::{Scalar, Tensor};

/// Step used for central differences in 64-bit mode.
pub const STEP_F64: f64 = 1e-6;
/// Step used in 32-bit mode.
pub const STEP_F32: f64 = 1e-2;

/// Central-difference gradient of scalar `f` with respect to every element of `x`.
pub fn numeric_grad<T: Scalar>(x: &Tensor<T>, f: impl Fn(&Tensor<T>) -> f64) -> Tensor<T> {
    let step = if std::mem::size_of::<T>() == 8 { STEP_F64 } else { STEP_F32 };
    numeric_grad_at(x, (0..x.len()).collect::<Vec<_>>().as_slice(), step, f)
}

/// Central differences at a subset of flat indices; other entries are zero.
pub fn numeric_grad_at<T: Scalar>(x: &Tensor<T>, indices: &[usize], step: f64, f: impl Fn(&Tensor<T>) -> f64) -> Tensor<T> {
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for &i in indices {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::from_f64(orig.as_f64() + step);
        let up = f(&probe);
        probe.data_mut()[i] = T::from_f64(orig.as_f64() - step);
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = T::from_f64((up - down) / (2.0 * step));
    }
    grad
}

/// Floor on the denominator so that exact zeros on both sides compare equal.
pub const REL_FLOOR: f64 = 1e-6;

/// Relative error `|a - b| / max(|a|, |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub fn max_rel_error<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| rel_error(a.as_f64(), n.as_f64()))
        .fold(0.0, f64::max)
}

/// Same as [`max_rel_error`] restricted to `indices`.
pub fn max_rel_error_at<T: Scalar>(analytic: &Tensor<T>, numeric: &Tensor<T>, indices: &[usize]) -> f64 {
    indices
        .iter()
        .map(|&i| rel_error(analytic.data()[i].as_f64(), numeric.data()[i].as_f64()))
        .fold(0.0, f64::max)
}
