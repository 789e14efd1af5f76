use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Window};

/// Flat per-plane argmax index for each max-pool output.
#[derive(Debug, Clone)]
pub struct PoolIndices(Vec<u32>);

fn nchw<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        s => Err(Error::ShapeMismatch {
            op,
            left: s.to_vec(),
            right: vec![0, 0, 0, 0],
        }),
    }
}

/// Max over each window; padding never wins. Ties resolve to the first
/// element in row-major window order.
pub fn maxpool_forward<T: Scalar>(input: &Tensor<T>, win: Window) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, c, h, w) = nchw(input, "maxpool")?;
    let (ho, wo) = win.pool_output(h, w)?;
    let x = input.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut arg = vec![0u32; out.len()];
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let y0 = (oy * win.stride.0) as isize - win.pad.0 as isize;
            let ys = y0.max(0) as usize..((y0 + win.kernel.0 as isize).min(h as isize)) as usize;
            for ox in 0..wo {
                let x0 = (ox * win.stride.1) as isize - win.pad.1 as isize;
                let xs = x0.max(0) as usize..((x0 + win.kernel.1 as isize).min(w as isize)) as usize;
                let mut best = T::neg_infinity();
                let mut best_i = 0usize;
                for iy in ys.clone() {
                    for ix in xs.clone() {
                        let v = plane[iy * w + ix];
                        if v > best {
                            best = v;
                            best_i = iy * w + ix;
                        }
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out[o] = best;
                arg[o] = best_i as u32;
            }
        }
    }
    Ok((Tensor::new([n, c, ho, wo], out)?, PoolIndices(arg)))
}

pub fn maxpool_backward<T: Scalar>(input_shape: &[usize], indices: &PoolIndices, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "maxpool backward",
                left: s.to_vec(),
                right: grad_out.shape().to_vec(),
            })
        }
    };
    if indices.0.len() != grad_out.len() {
        return Err(Error::ShapeMismatch {
            op: "maxpool backward",
            left: vec![indices.0.len()],
            right: grad_out.shape().to_vec(),
        });
    }
    let per_plane = grad_out.len() / (n * c);
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for o in p * per_plane..(p + 1) * per_plane {
            plane[indices.0[o] as usize] += grad_out.data()[o];
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Average over each window, padding counted as zeros. `None` pools globally.
pub fn avgpool_forward<T: Scalar>(input: &Tensor<T>, win: Option<Window>) -> Result<Tensor<T>> {
    let (n, c, h, w) = nchw(input, "avgpool")?;
    let win = win.unwrap_or(Window {
        kernel: (h, w),
        stride: (1, 1),
        pad: (0, 0),
    });
    let (ho, wo) = win.pool_output(h, w)?;
    let area = (win.kernel.0 * win.kernel.1) as f64;
    let x = input.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    for p in 0..n * c {
        let plane = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let y0 = (oy * win.stride.0) as isize - win.pad.0 as isize;
            for ox in 0..wo {
                let x0 = (ox * win.stride.1) as isize - win.pad.1 as isize;
                let mut acc = 0f64;
                for iy in y0.max(0)..(y0 + win.kernel.0 as isize).min(h as isize) {
                    for ix in x0.max(0)..(x0 + win.kernel.1 as isize).min(w as isize) {
                        acc += plane[iy as usize * w + ix as usize].as_f64();
                    }
                }
                out[(p * ho + oy) * wo + ox] = T::from_f64(acc / area);
            }
        }
    }
    Tensor::new([n, c, ho, wo], out)
}

pub fn avgpool_backward<T: Scalar>(input_shape: &[usize], win: Option<Window>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match input_shape {
        &[n, c, h, w] => (n, c, h, w),
        s => {
            return Err(Error::ShapeMismatch {
                op: "avgpool backward",
                left: s.to_vec(),
                right: grad_out.shape().to_vec(),
            })
        }
    };
    let win = win.unwrap_or(Window {
        kernel: (h, w),
        stride: (1, 1),
        pad: (0, 0),
    });
    let (ho, wo) = win.pool_output(h, w)?;
    grad_out.ensure_shape("avgpool backward", &[n, c, ho, wo])?;
    let inv = T::from_f64(1.0 / (win.kernel.0 * win.kernel.1) as f64);
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let plane = &mut dx[p * h * w..(p + 1) * h * w];
        for oy in 0..ho {
            let y0 = (oy * win.stride.0) as isize - win.pad.0 as isize;
            for ox in 0..wo {
                let x0 = (ox * win.stride.1) as isize - win.pad.1 as isize;
                let g = grad_out.data()[(p * ho + oy) * wo + ox] * inv;
                for iy in y0.max(0)..(y0 + win.kernel.0 as isize).min(h as isize) {
                    for ix in x0.max(0)..(x0 + win.kernel.1 as isize).min(w as isize) {
                        plane[iy as usize * w + ix as usize] += g;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck::{max_rel_error, numeric_grad};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full([1, 2, 6, 6], 3.5f32);
        let (y, _) = maxpool_forward(&x, Window::square(3, 2, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ramp_2x2_stride_2() {
        let x = Tensor::from_fn([1, 1, 4, 4], |i| i as f32);
        let (y, _) = maxpool_forward(&x, Window::square(2, 2, 0)).unwrap();
        assert_eq!(y.data(), &[5., 7., 13., 15.]);
    }

    #[test]
    fn ties_route_to_first_occurrence() {
        let x = Tensor::full([1, 1, 2, 2], 1.0f32);
        let (_, idx) = maxpool_forward(&x, Window::square(2, 2, 0)).unwrap();
        let dx = maxpool_backward(x.shape(), &idx, &Tensor::full([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(dx.data(), &[1., 0., 0., 0.]);
    }

    #[test]
    fn maxpool_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        // distinct values spaced well beyond the FD step
        let mut vals: Vec<f64> = (0..2 * 3 * 5 * 5).map(|i| i as f64 * 0.01).collect();
        vals.shuffle(&mut rng);
        let x = Tensor::new([2, 3, 5, 5], vals).unwrap();
        let win = Window::square(3, 2, 1);
        let (y, idx) = maxpool_forward(&x, win).unwrap();
        let r: Tensor<f64> = Tensor::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
        let analytic = maxpool_backward(x.shape(), &idx, &r).unwrap();
        let numeric = numeric_grad(&x, |t| maxpool_forward(t, win).unwrap().0.dot(&r).unwrap());
        assert!(max_rel_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn global_average() {
        let x = Tensor::from_fn([1, 2, 2, 2], |i| i as f32);
        let y = avgpool_forward(&x, None).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1, 1]);
        assert_eq!(y.data(), &[1.5, 5.5]);
    }

    #[test]
    fn avgpool_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x: Tensor<f64> = Tensor::from_fn([1, 2, 6, 6], |_| rng.gen_range(-1.0..1.0));
        for win in [Some(Window::square(3, 2, 1)), None] {
            let y = avgpool_forward(&x, win).unwrap();
            let r: Tensor<f64> = Tensor::from_fn(y.shape().to_vec(), |_| rng.gen_range(-1.0..1.0));
            let analytic = avgpool_backward(x.shape(), win, &r).unwrap();
            let numeric = numeric_grad(&x, |t| avgpool_forward(t, win).unwrap().dot(&r).unwrap());
            assert!(max_rel_error(&analytic, &numeric) < 1e-6);
        }
    }
}
