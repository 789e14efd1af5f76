use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-element multiplier: `0` for dropped units, `1/(1-ratio)` for survivors.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    factors: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn sample<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> Result<Self> {
        check_ratio(ratio)?;
        let keep = T::from_f64(1.0 / (1.0 - ratio));
        let factors = (0..len).map(|_| if rng.gen::<f64>() < ratio { T::zero() } else { keep }).collect();
        Ok(Self { factors })
    }

    pub fn from_factors(factors: Vec<T>) -> Self {
        Self { factors }
    }

    pub fn factors(&self) -> &[T] {
        &self.factors
    }

    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.len() != self.factors.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                left: input.shape().to_vec(),
                right: vec![self.factors.len()],
            });
        }
        let data = input.data().iter().zip(&self.factors).map(|(&x, &m)| x * m).collect();
        Tensor::new(input.shape().to_vec(), data)
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("dropout ratio {ratio} not in (0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Eval mode is the identity and returns no mask.
pub fn dropout_forward<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    ratio: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    check_ratio(ratio)?;
    match mode {
        Mode::Eval => Ok((input.clone(), None)),
        Mode::Train => {
            let mask = DropoutMask::sample(input.len(), ratio, rng)?;
            Ok((mask.apply(input)?, Some(mask)))
        }
    }
}

pub fn dropout_backward<T: Scalar>(mask: Option<&DropoutMask<T>>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => m.apply(grad_out),
        None => Ok(grad_out.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{max_rel_error, numeric_grad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_is_identity() {
        let x = Tensor::from_fn([4, 5], |i| i as f32);
        let (y, mask) = dropout_forward(&x, 0.5, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(y, x);
        assert!(mask.is_none());
    }

    #[test]
    fn fixed_seed_same_mask() {
        let x = Tensor::full([100], 1.0f32);
        let a = dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = dropout_forward(&x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn survivor_statistics() {
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor<f32> = Tensor::from_fn([n], |i| 1.0 + (i % 7) as f32 * 0.1);
        let (y, _) = dropout_forward(&x, 0.5, Mode::Train, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.01, "survivor fraction {frac}");
        let mean_in = x.sum() / n as f64;
        let mean_out = y.sum() / n as f64;
        assert!((mean_out - mean_in).abs() / mean_in <= 0.02);
    }

    #[test]
    fn ratio_validated() {
        let x = Tensor::<f32>::zeros([2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_forward(&x, 0.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_forward(&x, 1.0, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn fixed_mask_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Tensor<f64> = Tensor::from_fn([3, 8], |i| (i as f64).cos());
        let mask = DropoutMask::sample(x.len(), 0.5, &mut rng).unwrap();
        let r: Tensor<f64> = Tensor::from_fn([3, 8], |i| (i as f64 * 0.3).sin());
        let analytic = dropout_backward(Some(&mask), &r).unwrap();
        let numeric = numeric_grad(&x, |t| mask.apply(t).unwrap().dot(&r).unwrap());
        assert!(max_rel_error(&analytic, &numeric) < 1e-6);
    }
}
