//! SGD with momentum, L2 weight decay and a step learning-rate policy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub step_epochs: usize,
    pub batch_size: usize,
    pub total_epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            momentum: 0.9,
            weight_decay: 0.0005,
            gamma: 0.1,
            step_epochs: 10,
            batch_size: 100,
            total_epochs: 30,
        }
    }
}

impl OptimizerConfig {
    pub fn with_batch_size(batch_size: usize) -> Self {
        Self {
            batch_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("optimizer {what}")));
        if !(self.base_lr > 0.0) {
            return bad("base_lr must be positive");
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if self.step_epochs == 0 || self.batch_size == 0 || self.total_epochs == 0 {
            return bad("step_epochs, batch_size and total_epochs must be positive");
        }
        Ok(())
    }
}

/// `base_lr · gamma^⌊epoch / step_epochs⌋`. The power is applied by repeated
/// multiplication so the decayed values come out as the literal decimals.
pub fn lr_at_epoch(cfg: &OptimizerConfig, epoch: usize) -> Result<f64> {
    if epoch >= cfg.total_epochs {
        return Err(Error::EpochOutOfRange {
            epoch,
            total: cfg.total_epochs,
        });
    }
    Ok((0..epoch / cfg.step_epochs).fold(cfg.base_lr, |lr, _| lr * cfg.gamma))
}

/// Momentum buffers, one per parameter slot, zero-initialised.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityState<T: Scalar = f32> {
    pub buffers: ParamStore<T>,
}

impl<T: Scalar> VelocityState<T> {
    pub fn zeros_like(params: &ParamStore<T>) -> Self {
        Self {
            buffers: params.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape().to_vec()))).collect(),
        }
    }
}

/// One update per slot: `g' = g + wd·p`, `v ← μ·v − lr·g'`, `p ← p + v`.
/// Decay applies to every slot, biases included.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    velocity: &mut VelocityState<T>,
    lr: f64,
    cfg: &OptimizerConfig,
) -> Result<()> {
    for (key, p) in params.iter() {
        let g = grads.get(key).ok_or_else(|| Error::UnknownLayer(key.clone()))?;
        let v = velocity.buffers.get(key).ok_or_else(|| Error::UnknownLayer(key.clone()))?;
        for other in [g, v] {
            if other.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: p.shape().to_vec(),
                    right: other.shape().to_vec(),
                });
            }
        }
    }
    let (mu, wd, lr) = (T::from_f64(cfg.momentum), T::from_f64(cfg.weight_decay), T::from_f64(lr));
    for (key, p) in params.iter_mut() {
        let g = &grads[key];
        let v = velocity.buffers.get_mut(key).expect("checked above");
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gd = gi + wd * *pi;
            *vi = mu * *vi - lr * gd;
            *pi += *vi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn store(v: Vec<f64>) -> ParamStore<f64> {
        let n = v.len();
        [("p".to_string(), Tensor::new([n], v).unwrap())].into_iter().collect()
    }

    fn plain(lr: f64) -> OptimizerConfig {
        OptimizerConfig {
            base_lr: lr,
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn schedule_values() {
        let cfg = OptimizerConfig::default();
        assert_eq!(lr_at_epoch(&cfg, 0).unwrap(), 0.005);
        assert_eq!(lr_at_epoch(&cfg, 10).unwrap(), 0.0005);
        assert_eq!(lr_at_epoch(&cfg, 29).unwrap(), 0.00005);
        assert!(matches!(
            lr_at_epoch(&cfg, 30),
            Err(Error::EpochOutOfRange { epoch: 30, total: 30 })
        ));
        let mut distinct: Vec<f64> = (0..30).map(|e| lr_at_epoch(&cfg, e).unwrap()).collect();
        distinct.dedup();
        assert_eq!(distinct, [0.005, 0.0005, 0.00005]);
    }

    #[test]
    fn fixed_point_and_plain_sgd() {
        let mut p = store(vec![1.0, -2.0]);
        let mut v = VelocityState::zeros_like(&p);
        sgd_step(
            &mut p,
            &store(vec![0.0, 0.0]),
            &mut v,
            0.1,
            &OptimizerConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p["p"].data(), &[1.0, -2.0]);

        sgd_step(&mut p, &store(vec![0.5, 1.0]), &mut v, 0.1, &plain(0.1)).unwrap();
        assert_eq!(p["p"].data(), &[1.0 - 0.1 * 0.5, -2.0 - 0.1 * 1.0]);
    }

    #[test]
    fn momentum_recurrence() {
        let cfg = OptimizerConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut p = store(vec![0.0]);
        let mut v = VelocityState::zeros_like(&p);
        let g = store(vec![1.0]);
        sgd_step(&mut p, &g, &mut v, 0.1, &cfg).unwrap();
        assert!((p["p"].data()[0] + 0.1).abs() < 1e-15);
        sgd_step(&mut p, &g, &mut v, 0.1, &cfg).unwrap();
        assert!((p["p"].data()[0] + 0.29).abs() < 1e-15);
        assert!((v.buffers["p"].data()[0] + 0.19).abs() < 1e-15);
    }

    #[test]
    fn decay_applies_to_biases() {
        let cfg = OptimizerConfig {
            momentum: 0.0,
            weight_decay: 0.5,
            ..OptimizerConfig::default()
        };
        let mut p: ParamStore<f64> = [("fc/bias".to_string(), Tensor::full([2], 2.0))].into_iter().collect();
        let g: ParamStore<f64> = [("fc/bias".to_string(), Tensor::zeros([2]))].into_iter().collect();
        let mut v = VelocityState::zeros_like(&p);
        sgd_step(&mut p, &g, &mut v, 0.1, &cfg).unwrap();
        assert_eq!(p["fc/bias"].data(), &[1.9, 1.9]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = store(vec![0.0, 0.0]);
        let mut v = VelocityState::zeros_like(&p);
        assert!(matches!(
            sgd_step(&mut p, &store(vec![1.0]), &mut v, 0.1, &plain(0.1)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn descent_on_quadratic(x in prop::collection::vec(-10.0f64..10.0, 1..20), lr in 0.001f64..1.999) {
            prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
            let loss = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
            let mut p = store(x.clone());
            let before = loss(p["p"].data());
            let g = store(x);
            let mut v = VelocityState::zeros_like(&p);
            sgd_step(&mut p, &g, &mut v, lr, &plain(lr)).unwrap();
            prop_assert!(loss(p["p"].data()) < before);
        }

        #[test]
        fn step_is_deterministic(x in prop::collection::vec(-1.0f32..1.0, 1..16), g in -1.0f32..1.0) {
            let mk = || -> ParamStore<f32> { [("p".to_string(), Tensor::new([x.len()], x.clone()).unwrap())].into_iter().collect() };
            let grads: ParamStore<f32> = [("p".to_string(), Tensor::full([x.len()], g))].into_iter().collect();
            let (mut a, mut b) = (mk(), mk());
            let (mut va, mut vb) = (VelocityState::zeros_like(&a), VelocityState::zeros_like(&b));
            for _ in 0..3 {
                sgd_step(&mut a, &grads, &mut va, 0.01, &OptimizerConfig::default()).unwrap();
                sgd_step(&mut b, &grads, &mut vb, 0.01, &OptimizerConfig::default()).unwrap();
            }
            prop_assert_eq!(a, b);
        }
    }
}
