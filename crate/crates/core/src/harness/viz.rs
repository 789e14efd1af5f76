use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::{normalise_input, FULL_RESIZE};
use crate::data::{prepare_rgb, PrepareOptions, Variant};
use crate::error::{Error, Result};
use crate::imaging::{save_gray, RgbImage};
use crate::layers::Mode;
use crate::network::{forward, Checkpoint, NetworkGraph};
use crate::tensor::Tensor;

/// Channels of one activation tiled row-major into a grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationGrid {
    pub rows: usize,
    pub cols: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub pixels: Vec<u8>,
}

impl ActivationGrid {
    pub fn width(&self) -> usize {
        self.cols * self.tile_w
    }

    pub fn height(&self) -> usize {
        self.rows * self.tile_h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_gray(path, self.width(), self.height(), &self.pixels)
    }
}

/// Min–max scales one channel to `0..=255`; a constant channel maps to 0.
pub fn normalise_channel(values: &[f32]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Tiles `[1 × C × H × W]` (or `[1 × F]`, as 1×1 tiles) into a
/// `ceil(sqrt C)`-column grid.
pub fn tile_activation(t: &Tensor) -> Result<ActivationGrid> {
    let (c, h, w) = match t.shape() {
        &[1, c, h, w] => (c, h, w),
        &[1, f] => (f, 1, 1),
        s => {
            return Err(Error::InvalidArgument(format!("cannot tile activation of shape {s:?}")));
        }
    };
    let cols = (c as f64).sqrt().ceil() as usize;
    let rows = c.div_ceil(cols.max(1));
    let mut grid = ActivationGrid {
        rows,
        cols,
        tile_h: h,
        tile_w: w,
        pixels: vec![0; rows * cols * h * w],
    };
    let width = grid.width();
    for ch in 0..c {
        let tile = normalise_channel(&t.data()[ch * h * w..(ch + 1) * h * w]);
        let (ty, tx) = (ch / cols, ch % cols);
        for y in 0..h {
            let dst = (ty * h + y) * width + tx * w;
            grid.pixels[dst..dst + w].copy_from_slice(&tile[y * w..(y + 1) * w]);
        }
    }
    Ok(grid)
}

/// Input tensor for `net` as the checkpoint's training run would have
/// prepared it.
pub fn prepare_input(net: &NetworkGraph, ckpt: &Checkpoint, image: &RgbImage) -> Result<Tensor> {
    let size = net.input_shape[1];
    let variant: Variant = ckpt.meta.variant.as_deref().unwrap_or("Color").parse()?;
    let resize = if net.arch.native_input().is_some() { FULL_RESIZE } else { size };
    let img = prepare_rgb(image, variant, &PrepareOptions::with_size(resize))?;
    let (y0, x0) = ((resize - size) / 2, (resize - size) / 2);
    let cropped = RgbImage::from_fn(size, size, |x, y| img.get(x + x0, y + y0));
    let mut t = cropped.to_tensor();
    normalise_input(&mut t, ckpt.meta.channel_means.unwrap_or([0.0; 3]));
    t.reshape(vec![1, 3, size, size])
}

/// Forward to `layer` and write its tiled activations to `out_path`.
pub fn dump_activations(ckpt: &Checkpoint, image: &RgbImage, layer: &str, out_path: &Path) -> Result<ActivationGrid> {
    let net = ckpt.to_network()?;
    if net.layer(layer).is_none() {
        return Err(Error::UnknownLayer(layer.to_string()));
    }
    let x = prepare_input(&net, ckpt, image)?;
    let pass = forward(
        &net,
        &net.params,
        &x,
        None,
        Mode::Eval,
        &mut ChaCha8Rng::seed_from_u64(0),
        Some(layer),
    )?;
    let act = pass
        .output(layer)
        .ok_or_else(|| Error::InvalidArgument(format!("`{layer}` is not evaluated in eval mode")))?;
    let grid = tile_activation(act)?;
    grid.save(out_path)?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build, CheckpointMeta, InitPolicy};
    use crate::Architecture;

    fn zero_bias_ckpt() -> Checkpoint {
        let mut net = build(Architecture::AlexNetMini, 38, 64, &InitPolicy::default()).unwrap();
        for (k, v) in net.params.iter_mut() {
            if k.ends_with("bias") {
                *v = Tensor::zeros(v.shape().to_vec());
            }
        }
        Checkpoint::from_network(&net, CheckpointMeta::default())
    }

    #[test]
    fn conv1_is_four_by_four() {
        let dir = tempfile::tempdir().unwrap();
        let ck = zero_bias_ckpt();
        let img = RgbImage::from_fn(64, 64, |x, y| [x as f32 / 63.0, y as f32 / 63.0, 0.5]);
        let out = dir.path().join("a.png");
        let g = dump_activations(&ck, &img, "conv1", &out).unwrap();
        assert_eq!((g.rows, g.cols, g.tile_h, g.tile_w), (4, 4, 32, 32));
        let (w, h, px) = crate::imaging::load_gray(&out).unwrap();
        assert_eq!((w, h), (128, 128));
        assert_eq!(px, g.pixels);

        // tile 5 recomputed on its own
        let net = ck.to_network().unwrap();
        let x = prepare_input(&net, &ck, &img).unwrap();
        let pass = forward(
            &net,
            &net.params,
            &x,
            None,
            Mode::Eval,
            &mut ChaCha8Rng::seed_from_u64(0),
            Some("conv1"),
        )
        .unwrap();
        let act = pass.output("conv1").unwrap();
        let plane = &act.data()[5 * 1024..6 * 1024];
        let (lo, hi) = plane.iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        let (ty, tx) = (1, 1);
        for y in 0..32 {
            for x in 0..32 {
                let want = ((plane[y * 32 + x] - lo) / (hi - lo) * 255.0).round() as u8;
                assert_eq!(g.pixels[(ty * 32 + y) * 128 + tx * 32 + x], want);
            }
        }
    }

    #[test]
    fn zero_input_gives_uniform_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let ck = zero_bias_ckpt();
        let g = dump_activations(&ck, &RgbImage::new(64, 64, [0.0; 3]), "conv1", &dir.path().join("z.png")).unwrap();
        assert!(g.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn unknown_layer() {
        let dir = tempfile::tempdir().unwrap();
        let r = dump_activations(
            &zero_bias_ckpt(),
            &RgbImage::new(64, 64, [0.0; 3]),
            "conv9",
            &dir.path().join("z.png"),
        );
        assert!(matches!(r, Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn partial_last_row() {
        let t = Tensor::from_fn(vec![1, 5, 1, 2], |i| (i % 2) as f32);
        let g = tile_activation(&t).unwrap();
        assert_eq!((g.rows, g.cols), (2, 3));
        assert_eq!(g.pixels, vec![0, 255, 0, 255, 0, 255, 0, 255, 0, 255, 0, 0]);
    }
}
