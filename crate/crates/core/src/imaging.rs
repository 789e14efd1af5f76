//! Float RGB images, PNG I/O and bilinear resampling.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage as Rgb8};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for p in &self.pixels {
            for c in 0..3 {
                acc[c] += p[c] as f64;
            }
        }
        let n = self.pixels.len().max(1) as f64;
        acc.map(|v| v / n)
    }

    /// Luma `0.299R + 0.587G + 0.114B` replicated to all three channels.
    pub fn to_grayscale(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|&[r, g, b]| {
                    let y = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32;
                    [y, y, y]
                })
                .collect(),
        }
    }

    /// Bilinear resampling with pixel-centre alignment and edge clamping.
    pub fn resize(&self, width: usize, height: usize) -> RgbImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
            let scale = src as f64 / dst as f64;
            (0..dst)
                .map(|i| {
                    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                    let i0 = s.floor() as usize;
                    let i1 = (i0 + 1).min(src - 1);
                    (i0, i1, (s - i0 as f64) as f32)
                })
                .collect()
        };
        let xs = axis(width, self.width);
        let ys = axis(height, self.height);
        let mut pixels = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
                let mut p = [0f32; 3];
                for k in 0..3 {
                    let top = a[k] + (b[k] - a[k]) * fx;
                    let bot = c[k] + (d[k] - c[k]) * fx;
                    p[k] = top + (bot - top) * fy;
                }
                pixels.push(p);
            }
        }
        RgbImage { width, height, pixels }
    }

    /// `[3 × H × W]` planar tensor.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut data = vec![0f32; 3 * hw];
        for (i, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c];
            }
        }
        Tensor::new([3, self.height, self.width], data).expect("sized")
    }

    pub fn from_rgb8(img: &Rgb8) -> Self {
        Self {
            width: img.width() as usize,
            height: img.height() as usize,
            pixels: img.pixels().map(|p| p.0.map(|v| v as f32 / 255.0)).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Rgb8 {
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb8::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.get(x as usize, y as usize);
            Rgb([q(p[0]), q(p[1]), q(p[2])])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = ImageReader::open(path)?
            .with_guessed_format()?
            .decode()
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Saves an 8-bit grayscale image given row-major values.
pub fn save_gray(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| Luma([values[y as usize * width + x as usize]]));
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    Ok((img.width() as usize, img.height() as usize, img.into_raw()))
}
