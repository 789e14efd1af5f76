use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Parameter initialization. Every slot draws from its own stream derived
/// from `(seed, slot key)`, so re-initializing one slot reproduces exactly
/// what a fresh build would have produced for it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitPolicy {
    /// Standard deviation of the zero-mean Gaussian for fully connected weights.
    pub fc_std: f64,
    /// Conv weights are uniform in `±sqrt(conv_scale / fan_in)`.
    pub conv_scale: f64,
    pub bias: f64,
    pub seed: u64,
}

impl Default for InitPolicy {
    fn default() -> Self {
        Self {
            fc_std: 0.01,
            conv_scale: 3.0,
            bias: 0.0,
            seed: 0,
        }
    }
}

impl InitPolicy {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub(crate) fn rng_for(&self, key: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(key.as_bytes()))
    }

    pub(crate) fn conv_weight(&self, key: &str, shape: [usize; 4]) -> Tensor {
        let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
        let bound = (self.conv_scale / fan_in).sqrt();
        let mut rng = self.rng_for(key);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..=bound) as f32)
    }

    pub(crate) fn fc_weight(&self, key: &str, shape: [usize; 2]) -> Tensor {
        let normal = Normal::new(0.0, self.fc_std).expect("finite std");
        let mut rng = self.rng_for(key);
        Tensor::from_fn(shape.to_vec(), |_| normal.sample(&mut rng) as f32)
    }

    pub(crate) fn bias(&self, len: usize) -> Tensor {
        Tensor::full([len], self.bias as f32)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
