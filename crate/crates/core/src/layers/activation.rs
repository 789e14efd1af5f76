use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `grad_out` wherever the forward input was `<= 0`.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.ensure_shape("relu backward", input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn definition() {
        let x = Tensor::new([3], vec![-1.0f32, 0.0, 2.5]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.5]);
    }

    #[test]
    fn nonnegative_unchanged_negative_zeroed() {
        let pos = Tensor::from_fn([2, 3], |i| i as f32);
        assert_eq!(relu_forward(&pos), pos);
        let neg = Tensor::from_fn([2, 3], |i| -(i as f32) - 0.5);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_masks() {
        let x = Tensor::new([4], vec![-1.0f64, 0.0, 0.5, 3.0]).unwrap();
        let g = Tensor::full([4], 2.0f64);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 2.0, 2.0]);
    }

    proptest! {
        #[test]
        fn shape_preserved(dims in prop::collection::vec(1usize..5, 1..5)) {
            let x = Tensor::from_fn(dims.clone(), |i| (i as f32).sin());
            let y = relu_forward(&x);
            prop_assert_eq!(y.shape(), x.shape());
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        }
    }
}
