use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::segmentation::{segment, SegmentationParams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Color,
    GrayScale,
    Segmented,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Color, Variant::GrayScale, Variant::Segmented];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Color => "Color",
            Variant::GrayScale => "GrayScale",
            Variant::Segmented => "Segmented",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| Error::Config {
            field: "dataset_type",
            token: s.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    /// Output side length.
    pub size: usize,
    pub segmentation: SegmentationParams,
    /// Gray-world correction before computing the segmentation mask.
    pub fix_cast: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            size: 256,
            segmentation: SegmentationParams::default(),
            fix_cast: false,
        }
    }
}

impl PrepareOptions {
    pub fn with_size(size: usize) -> Self {
        Self { size, ..Self::default() }
    }
}

/// Variant transform at source resolution, then bilinear resize.
pub fn prepare_rgb(image: &RgbImage, variant: Variant, opts: &PrepareOptions) -> Result<RgbImage> {
    let img = match variant {
        Variant::Color => image.clone(),
        Variant::GrayScale => image.to_grayscale(),
        Variant::Segmented => segment(image, &opts.segmentation, opts.fix_cast)?.1,
    };
    Ok(img.resize(opts.size, opts.size))
}

/// `[3 × size × size]` in `[0, 1]`. Mean subtraction is applied separately
/// with means taken from the training split ([`subtract_means`]).
pub fn prepare_image(path: &Path, variant: Variant, opts: &PrepareOptions) -> Result<Tensor> {
    Ok(prepare_rgb(&RgbImage::load(path)?, variant, opts)?.to_tensor())
}

/// Per-channel means over `[3 × H × W]` tensors, accumulated in 64-bit.
pub fn channel_means<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> [f32; 3] {
    let mut acc = [0f64; 3];
    let mut count = 0usize;
    for t in tensors {
        let plane = t.len() / 3;
        for (c, a) in acc.iter_mut().enumerate() {
            *a += t.data()[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>();
        }
        count += plane;
    }
    acc.map(|a| if count == 0 { 0.0 } else { (a / count as f64) as f32 })
}

pub fn subtract_means(t: &mut Tensor, means: [f32; 3]) {
    let plane = t.len() / 3;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        for v in chunk {
            *v -= means[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gray_fixed_point() {
        let img = RgbImage::new(40, 30, [0.5, 0.5, 0.5]);
        let o = PrepareOptions::default();
        let c = prepare_rgb(&img, Variant::Color, &o).unwrap();
        let g = prepare_rgb(&img, Variant::GrayScale, &o).unwrap();
        for (a, b) in c.pixels.iter().zip(&g.pixels) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn every_variant_has_fixed_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = RgbImage::from_fn(37, 53, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        img.save(&p).unwrap();
        for v in Variant::ALL {
            let t = prepare_image(&p, v, &PrepareOptions::default()).unwrap();
            assert_eq!(t.shape(), &[3, 256, 256]);
            if v == Variant::GrayScale {
                let plane = 256 * 256;
                assert_eq!(t.data()[..plane], t.data()[plane..2 * plane]);
                assert_eq!(t.data()[..plane], t.data()[2 * plane..]);
            }
        }
    }

    #[test]
    fn pure_green_stays_constant() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        RgbImage::new(512, 512, [0.0, 1.0, 0.0]).save(&p).unwrap();
        let t = prepare_image(&p, Variant::Color, &PrepareOptions::default()).unwrap();
        let plane = 256 * 256;
        assert!(t.data()[..plane].iter().all(|v| v.abs() < 1e-6));
        assert!(t.data()[plane..2 * plane].iter().all(|v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn mean_subtraction() {
        let t = RgbImage::new(2, 2, [0.2, 0.4, 0.6]).to_tensor();
        let m = channel_means([&t]);
        assert_eq!(m, [0.2, 0.4, 0.6]);
        let mut centred = t.clone();
        subtract_means(&mut centred, m);
        assert!(centred.data().iter().all(|v| v.abs() < 1e-7));
    }
}
