//! Leaf/background segmentation from HSB and CIELAB thresholds, with
//! gray-world colour-cast correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;

/// Hexcone HSB. Hue in degrees `[0, 360)`, reported as 0 when saturation is 0.
pub fn rgb_to_hsb([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    if d <= 0.0 {
        return [0.0, s, max];
    }
    let h = if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    [if h >= 360.0 { h - 360.0 } else { h }, s, max]
}

pub fn hsb_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// D65 reference white.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];
const DELTA: f64 = 6.0 / 29.0;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// sRGB in `[0, 1]` to CIELAB under D65.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let xyz = mul(&RGB_TO_XYZ, rgb.map(srgb_to_linear));
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / WHITE[i]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn lab_to_rgb([l, a, b]: [f64; 3]) -> [f64; 3] {
    let fy = (l + 16.0) / 116.0;
    let f = [fy + a / 500.0, fy, fy - b / 200.0];
    let xyz = [0, 1, 2].map(|i| WHITE[i] * lab_f_inv(f[i]));
    mul(&XYZ_TO_RGB, xyz).map(linear_to_srgb)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CastCorrection {
    pub image: RgbImage,
    /// Per-channel multipliers applied (all 1 when degenerate).
    pub scales: [f64; 3],
    /// Set when a channel mean was zero and the image was left unchanged.
    pub degenerate: bool,
}

/// Gray-world correction: each channel scaled by `mean(means) / mean_c`,
/// then clamped to `[0, 1]`.
pub fn fix_color_cast(image: &RgbImage) -> CastCorrection {
    let means = image.channel_means();
    if means.iter().any(|&m| m <= 0.0) {
        log::warn!("colour-cast correction skipped: a channel mean is zero");
        return CastCorrection {
            image: image.clone(),
            scales: [1.0; 3],
            degenerate: true,
        };
    }
    let target = means.iter().sum::<f64>() / 3.0;
    let scales = means.map(|m| target / m);
    let pixels = image
        .pixels
        .iter()
        .map(|p| [0, 1, 2].map(|c| ((p[c] as f64 * scales[c]) as f32).clamp(0.0, 1.0)))
        .collect();
    CastCorrection {
        image: RgbImage {
            width: image.width,
            height: image.height,
            pixels,
        },
        scales,
        degenerate: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// HSB saturation must exceed this.
    pub sat_min: f64,
    pub bright_lo: f64,
    pub bright_hi: f64,
    /// Lab `a` below this counts as leaf regardless of saturation.
    pub lab_a_max: f64,
    /// Disk radius for opening and closing; 0 disables both.
    pub radius: usize,
    pub largest_component: bool,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            sat_min: 0.15,
            bright_lo: 0.1,
            bright_hi: 0.98,
            lab_a_max: -5.0,
            radius: 2,
            largest_component: true,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.sat_min)
            && (0.0..=1.0).contains(&self.bright_lo)
            && (0.0..=1.0).contains(&self.bright_hi)
            && self.bright_lo <= self.bright_hi
            && (-128.0..=128.0).contains(&self.lab_a_max);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("segmentation thresholds out of range: {self:?}")))
        }
    }
}

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self {
            width,
            height,
            bits: bytes.iter().map(|&v| v >= 128).collect(),
        }
    }

    fn disk(r: usize) -> Vec<(isize, isize)> {
        let r = r as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    out.push((dx, dy));
                }
            }
        }
        out
    }

    /// `erode = true` requires every in-bounds neighbour set; otherwise any.
    fn morph(&self, r: usize, erode: bool) -> Mask {
        let offs = Self::disk(r);
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = Mask::new(self.width, self.height, false);
        for y in 0..h {
            for x in 0..w {
                let mut inb = offs.iter().filter_map(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    (nx >= 0 && ny >= 0 && nx < w && ny < h).then(|| self.bits[(ny * w + nx) as usize])
                });
                out.bits[(y * w + x) as usize] = if erode { inb.all(|b| b) } else { inb.any(|b| b) };
            }
        }
        out
    }

    pub fn open(&self, r: usize) -> Mask {
        self.morph(r, true).morph(r, false)
    }

    pub fn close(&self, r: usize) -> Mask {
        self.morph(r, false).morph(r, true)
    }

    /// Largest 4-connected foreground component; ties go to the component
    /// found first in raster order.
    pub fn largest_component(&self) -> Mask {
        let (w, h) = (self.width, self.height);
        let mut label = vec![0u32; w * h];
        let mut best = (0usize, 0u32);
        let mut next = 0u32;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.bits[start] || label[start] != 0 {
                continue;
            }
            next += 1;
            label[start] = next;
            stack.push(start);
            let mut size = 0;
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if self.bits[j] && label[j] == 0 {
                        label[j] = next;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if size > best.0 {
                best = (size, next);
            }
        }
        Mask {
            width: w,
            height: h,
            bits: label.iter().map(|&l| best.0 > 0 && l == best.1).collect(),
        }
    }
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ShapeMismatch {
            op: "iou",
            left: vec![a.height, a.width],
            right: vec![b.height, b.width],
        });
    }
    let inter = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x && **y).count();
    let union = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Threshold rule `(s > s₀ ∧ v ∈ [v_lo, v_hi]) ∨ a < a₀`, then opening,
/// closing and optionally the largest component.
pub fn compute_leaf_mask(image: &RgbImage, params: &SegmentationParams) -> Mask {
    let bits = image
        .pixels
        .iter()
        .map(|p| {
            let rgb = p.map(|v| v as f64);
            let [_, s, v] = rgb_to_hsb(rgb);
            (s > params.sat_min && v >= params.bright_lo && v <= params.bright_hi) || rgb_to_lab(rgb)[1] < params.lab_a_max
        })
        .collect();
    let mut mask = Mask {
        width: image.width,
        height: image.height,
        bits,
    };
    if params.radius > 0 {
        mask = mask.open(params.radius).close(params.radius);
    }
    if params.largest_component {
        mask = mask.largest_component();
    }
    mask
}

/// Background pixels set to black; foreground bitwise untouched.
pub fn apply_mask(image: &RgbImage, mask: &Mask) -> Result<RgbImage> {
    if (image.width, image.height) != (mask.width, mask.height) {
        return Err(Error::ShapeMismatch {
            op: "apply_mask",
            left: vec![image.height, image.width],
            right: vec![mask.height, mask.width],
        });
    }
    Ok(RgbImage {
        width: image.width,
        height: image.height,
        pixels: image
            .pixels
            .iter()
            .zip(&mask.bits)
            .map(|(&p, &m)| if m { p } else { [0.0; 3] })
            .collect(),
    })
}

/// Full segmentation of one image. The mask is computed on the cast-corrected
/// image when `fix_cast` is set, and applied to the uncorrected pixels.
pub fn segment(image: &RgbImage, params: &SegmentationParams, fix_cast: bool) -> Result<(Mask, RgbImage)> {
    let mask = if fix_cast {
        compute_leaf_mask(&fix_color_cast(image).image, params)
    } else {
        compute_leaf_mask(image, params)
    };
    let out = apply_mask(image, &mask)?;
    Ok((mask, out))
}
