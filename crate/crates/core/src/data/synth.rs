//! Synthetic leaf corpus ("minivillage").
//!
//! Crops come in seven pairs that share a leaf outline and differ only in
//! hue at equal luma, so the pair members are indistinguishable once colour
//! is removed. Each disease name maps to one lesion texture drawn in leaf
//! coordinates, so a leaf rendered under several rotations keeps its
//! lesions. Backgrounds are low-saturation neutrals with mild noise.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{write_manifest, SampleRecord};
use super::registry::{ClassRegistry, HEALTHY};
use crate::error::{Error, Result};
use crate::harness::mix_seed;
use crate::imaging::{save_gray, RgbImage};
use crate::network::init::fnv1a;
use crate::segmentation::{hsb_to_rgb, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthLabels {
    /// One class per registry entry.
    Disease,
    /// One class per crop.
    CropOnly,
    /// One class per disease name, drawn on any crop; used for surrogate
    /// pretraining.
    DiseaseOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub seed: u64,
    pub images_per_class: usize,
    pub size: usize,
    pub labels: SynthLabels,
}

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub manifest_path: PathBuf,
    pub mask_dir: PathBuf,
    pub records: Vec<SampleRecord>,
    /// Registry the manifest was written against.
    pub registry: ClassRegistry,
}

impl SynthCorpus {
    /// Ground-truth mask path for a record.
    pub fn mask_path(&self, record: &SampleRecord) -> PathBuf {
        let name = Path::new(&record.image_path).file_name().expect("file name");
        self.mask_dir.join(name)
    }
}

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`.
pub fn gen_minivillage(seed: u64, images_per_class: usize, size: usize, out_dir: &Path) -> Result<SynthCorpus> {
    generate(
        &SynthOptions {
            seed,
            images_per_class,
            size,
            labels: SynthLabels::Disease,
        },
        out_dir,
    )
}

pub fn generate(opts: &SynthOptions, out_dir: &Path) -> Result<SynthCorpus> {
    if opts.size != 32 && opts.size != 64 {
        return Err(Error::UnsupportedInputSize(opts.size));
    }
    let full = ClassRegistry::builtin();
    let registry = match opts.labels {
        SynthLabels::Disease => full.clone(),
        SynthLabels::CropOnly => full.crop_only(),
        SynthLabels::DiseaseOnly => full.disease_only(),
    };
    let image_dir = out_dir.join("images");
    let mask_dir = out_dir.join("masks");
    std::fs::create_dir_all(&image_dir)?;
    std::fs::create_dir_all(&mask_dir)?;

    let mut records = Vec::new();
    for class in 0..registry.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, class as u64));
        // (crop, disease) looks a class draws from
        let sources: Vec<(&str, &str)> = match opts.labels {
            SynthLabels::Disease => {
                let e = full.entry(class).expect("class in registry");
                vec![(&e.crop, &e.disease)]
            }
            SynthLabels::CropOnly => full
                .classes_of_crop(&registry.crops()[class])?
                .into_iter()
                .map(|c| {
                    let e = full.entry(c).expect("class in registry");
                    (e.crop.as_str(), e.disease.as_str())
                })
                .collect(),
            SynthLabels::DiseaseOnly => {
                let d = registry.entry(class).expect("class in registry").disease.as_str();
                full.crops().iter().map(|c| (c.as_str(), d)).collect()
            }
        };
        let mut made = 0;
        let mut leaf_no = 0;
        while made < opts.images_per_class {
            let remaining = opts.images_per_class - made;
            let renders = if leaf_no == 0 { 2 } else { rng.gen_range(1..=3) }.min(remaining);
            let (crop, disease) = sources[rng.gen_range(0..sources.len())];
            let leaf = LeafSpec::sample(crop, disease, &mut rng);
            let group = format!("c{class:02}_l{leaf_no:04}");
            let base_angle = rng.gen_range(0.0..2.0 * PI);
            for r in 0..renders {
                let angle = base_angle + r as f64 * rng.gen_range(0.6..1.4) * PI / 1.5;
                let view = ViewSpec::sample(&mut rng, angle);
                let (img, mask) = render(&leaf, &view, opts.size);
                let name = format!("c{class:02}_{made:04}.png");
                img.save(&image_dir.join(&name))?;
                save_gray(&mask_dir.join(&name), mask.width, mask.height, &mask.to_bytes())?;
                records.push(SampleRecord {
                    image_path: format!("images/{name}"),
                    class_id: class,
                    leaf_group_id: Some(group.clone()),
                    known_crop: None,
                });
                made += 1;
            }
            leaf_no += 1;
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &records, &registry)?;
    Ok(SynthCorpus {
        manifest_path,
        mask_dir,
        records,
        registry,
    })
}

#[derive(Clone, Copy, Debug)]
enum Outline {
    /// Ovate with shallow lobes.
    Lobed,
    /// Palmate, five lobes.
    Palmate,
    /// Round with fine teeth.
    Serrate,
    Lanceolate,
    Elliptic,
    Obovate,
    Blade,
}

impl Outline {
    fn radius(self, phi: f64) -> f64 {
        let ell = |a: f64, b: f64| a * b / ((b * phi.cos()).powi(2) + (a * phi.sin()).powi(2)).sqrt();
        match self {
            Outline::Lobed => ell(1.0, 0.62) * (1.0 + 0.07 * (6.0 * phi).cos()),
            Outline::Palmate => 0.78 * (1.0 + 0.2 * (5.0 * phi).cos()),
            Outline::Serrate => 0.8 * (1.0 + 0.035 * (18.0 * phi).cos()),
            Outline::Lanceolate => ell(1.0, 0.36) * (1.0 + 0.1 * phi.cos()),
            Outline::Elliptic => ell(0.85, 0.55),
            Outline::Obovate => 0.62 * (1.0 + 0.42 * phi.cos()),
            Outline::Blade => ell(1.0, 0.27),
        }
    }
}

/// `(crop, outline, hue°, saturation, luma)`. Pair members share outline,
/// saturation and luma.
const CROP_LOOKS: [(&str, Outline, f64, f64, f64); 14] = [
    ("Tomato", Outline::Lobed, 100.0, 0.6, 0.36),
    ("Potato", Outline::Lobed, 170.0, 0.6, 0.36),
    ("Apple", Outline::Palmate, 80.0, 0.6, 0.42),
    ("Grape", Outline::Palmate, 290.0, 0.6, 0.42),
    ("Cherry", Outline::Serrate, 115.0, 0.55, 0.32),
    ("Squash", Outline::Serrate, 55.0, 0.55, 0.32),
    ("Peach", Outline::Lanceolate, 95.0, 0.65, 0.40),
    ("Bell Pepper", Outline::Lanceolate, 200.0, 0.65, 0.40),
    ("Blueberry", Outline::Elliptic, 130.0, 0.5, 0.38),
    ("Raspberry", Outline::Elliptic, 330.0, 0.5, 0.38),
    ("Soybean", Outline::Obovate, 75.0, 0.6, 0.34),
    ("Orange", Outline::Obovate, 180.0, 0.6, 0.34),
    ("Corn", Outline::Blade, 105.0, 0.55, 0.44),
    ("Strawberry", Outline::Blade, 20.0, 0.55, 0.44),
];

type Rgb = [f64; 3];

fn luma(c: Rgb) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn mix(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Colour of hue `h` and saturation `s` scaled to luma `y`.
fn colour_at_luma(h: f64, s: f64, y: f64) -> Rgb {
    let unit = hsb_to_rgb([h, s, 1.0]);
    let v = (y / luma(unit)).min(1.0);
    unit.map(|c| c * v)
}

#[derive(Clone, Debug)]
struct Spot {
    u: f64,
    v: f64,
    r: f64,
    wobble: f64,
}

#[derive(Clone, Copy, Debug)]
struct SpotStyle {
    count: (usize, usize),
    radius: (f64, f64),
    core: Rgb,
    /// Dark margin `(colour, width as fraction of r)`.
    ring: Option<(Rgb, f64)>,
    /// Halo outside the lesion `(colour, absolute width)`.
    halo: Option<(Rgb, f64)>,
    /// Concentric rings inside the lesion.
    rings: usize,
    /// Stretch along the leaf axis.
    aspect: f64,
    fuzzy: bool,
}

const NO_SPOT: SpotStyle = SpotStyle {
    count: (0, 0),
    radius: (0.0, 0.0),
    core: [0.0; 3],
    ring: None,
    halo: None,
    rings: 0,
    aspect: 1.0,
    fuzzy: false,
};

#[derive(Clone, Copy, Debug)]
enum Style {
    Healthy,
    Spots(SpotStyle),
    /// Noise-thresholded blotches `(colour, frequency, threshold, strength)`.
    Patches(Rgb, f64, f64, f64),
    /// Interveinal stripes.
    Stripes(Rgb, f64),
    /// Chlorotic or scorched margin `(colour, width)`; leaf shrinks by `shrink`.
    Margin(Rgb, f64, f64),
    Mosaic(Rgb),
    /// Fine stippling with an overall tint.
    Stipple(Rgb, Rgb),
}

fn style_for(disease: &str) -> Style {
    let spots = |s: SpotStyle| Style::Spots(s);
    match disease {
        HEALTHY => Style::Healthy,
        "Apple Scab" => spots(SpotStyle {
            count: (5, 8),
            radius: (0.1, 0.15),
            core: [0.26, 0.27, 0.12],
            fuzzy: true,
            ..NO_SPOT
        }),
        "Black Rot" => spots(SpotStyle {
            count: (2, 3),
            radius: (0.17, 0.23),
            core: [0.52, 0.32, 0.15],
            ring: Some(([0.32, 0.1, 0.22], 0.25)),
            ..NO_SPOT
        }),
        "Cedar Apple Rust" => spots(SpotStyle {
            count: (6, 10),
            radius: (0.06, 0.09),
            core: [0.95, 0.55, 0.1],
            ring: Some(([0.7, 0.15, 0.1], 0.35)),
            ..NO_SPOT
        }),
        "Powdery Mildew" => Style::Patches([0.82, 0.86, 0.66], 3.0, 0.5, 0.85),
        "Gray Leaf Spot" => spots(SpotStyle {
            count: (6, 10),
            radius: (0.05, 0.07),
            core: [0.6, 0.55, 0.44],
            aspect: 3.0,
            ..NO_SPOT
        }),
        "Common Rust" => spots(SpotStyle {
            count: (25, 40),
            radius: (0.03, 0.045),
            core: [0.52, 0.18, 0.08],
            ..NO_SPOT
        }),
        "Northern Leaf Blight" => spots(SpotStyle {
            count: (1, 2),
            radius: (0.12, 0.16),
            core: [0.72, 0.62, 0.4],
            ring: Some(([0.36, 0.28, 0.15], 0.15)),
            aspect: 4.0,
            ..NO_SPOT
        }),
        "Black Measles" => Style::Stripes([0.75, 0.45, 0.15], 7.0),
        "Leaf Blight" => Style::Patches([0.36, 0.2, 0.1], 5.0, 0.58, 1.0),
        "Huanglongbing" => Style::Patches([0.86, 0.8, 0.25], 2.5, 0.45, 0.75),
        "Bacterial Spot" => spots(SpotStyle {
            count: (15, 25),
            radius: (0.035, 0.05),
            core: [0.18, 0.15, 0.1],
            halo: Some(([0.8, 0.75, 0.2], 0.03)),
            ..NO_SPOT
        }),
        "Early Blight" => spots(SpotStyle {
            count: (3, 5),
            radius: (0.1, 0.14),
            core: [0.46, 0.3, 0.15],
            rings: 2,
            ring: Some(([0.24, 0.15, 0.08], 0.2)),
            halo: Some(([0.78, 0.72, 0.22], 0.035)),
            ..NO_SPOT
        }),
        "Late Blight" => Style::Patches([0.18, 0.22, 0.12], 2.0, 0.5, 0.95),
        "Leaf Scorch" => spots(SpotStyle {
            count: (20, 35),
            radius: (0.03, 0.045),
            core: [0.46, 0.12, 0.3],
            ..NO_SPOT
        }),
        "Leaf Mold" => Style::Patches([0.72, 0.74, 0.3], 3.5, 0.5, 0.7),
        "Septoria Leaf Spot" => spots(SpotStyle {
            count: (12, 20),
            radius: (0.045, 0.06),
            core: [0.78, 0.74, 0.62],
            ring: Some(([0.3, 0.18, 0.1], 0.35)),
            ..NO_SPOT
        }),
        "Spider Mites" => Style::Stipple([0.88, 0.88, 0.6], [0.56, 0.46, 0.2]),
        "Target Spot" => spots(SpotStyle {
            count: (1, 2),
            radius: (0.22, 0.28),
            core: [0.74, 0.63, 0.45],
            rings: 3,
            ring: Some(([0.45, 0.34, 0.2], 0.12)),
            ..NO_SPOT
        }),
        "Yellow Leaf Curl Virus" => Style::Margin([0.86, 0.83, 0.2], 0.35, 0.82),
        "Mosaic Virus" => Style::Mosaic([0.6, 0.8, 0.28]),
        other => {
            // unknown disease names still get a stable texture
            let h = fnv1a(other.as_bytes());
            spots(SpotStyle {
                count: (4, 8),
                radius: (0.05, 0.1),
                core: hsb_to_rgb([(h % 360) as f64, 0.6, 0.5]),
                ..NO_SPOT
            })
        }
    }
}

/// Everything about a physical leaf that survives re-photographing.
#[derive(Clone, Debug)]
struct LeafSpec {
    outline: Outline,
    base: Rgb,
    style: Style,
    spots: Vec<Spot>,
    noise_seed: u64,
    /// Voronoi sites for the mosaic texture.
    sites: Vec<(f64, f64)>,
    /// Half length as a fraction of the image side.
    scale: f64,
    background: Rgb,
}

impl LeafSpec {
    fn sample(crop: &str, disease: &str, rng: &mut ChaCha8Rng) -> Self {
        let &(_, outline, hue, sat, y) = CROP_LOOKS
            .iter()
            .find(|l| l.0.eq_ignore_ascii_case(crop))
            .unwrap_or(&CROP_LOOKS[(fnv1a(crop.as_bytes()) % 14) as usize]);
        let base = colour_at_luma(
            hue + rng.gen_range(-6.0..6.0),
            (sat + rng.gen_range(-0.05..0.05)).clamp(0.2, 1.0),
            y + rng.gen_range(-0.03..0.03),
        );
        let style = style_for(disease);
        let shrink = if let Style::Margin(_, _, s) = style { s } else { 1.0 };
        let mut spots = Vec::new();
        if let Style::Spots(s) = style {
            let n = rng.gen_range(s.count.0..=s.count.1);
            while spots.len() < n {
                let (u, v): (f64, f64) = (rng.gen_range(-0.9..0.9), rng.gen_range(-0.9..0.9));
                let rho = (u * u + v * v).sqrt();
                if rho <= 0.8 * outline.radius(v.atan2(u)) {
                    spots.push(Spot {
                        u,
                        v,
                        r: rng.gen_range(s.radius.0..=s.radius.1),
                        wobble: rng.gen_range(0.0..2.0 * PI),
                    });
                }
            }
        }
        let sites = (0..12).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let tint_hue = [30.0, 45.0, 220.0, 240.0][rng.gen_range(0..4)];
        let background = hsb_to_rgb([tint_hue, rng.gen_range(0.0..0.07), rng.gen_range(0.38..0.85)]);
        LeafSpec {
            outline,
            base,
            style,
            spots,
            noise_seed: rng.gen(),
            sites,
            scale: rng.gen_range(0.36..0.43) * shrink,
            background,
        }
    }

    /// Leaf colour at leaf coordinates, `edge` = 1 − ρ/R.
    fn colour(&self, u: f64, v: f64, edge: f64) -> Rgb {
        let mut c = self.base;
        if v.abs() < 0.03 && edge > 0.08 {
            c = mix(c, c.map(|x| (x * 1.25 + 0.06).min(1.0)), 0.6);
        }
        match self.style {
            Style::Healthy => c,
            Style::Spots(s) => {
                for sp in &self.spots {
                    let (du, dv) = ((u - sp.u) / s.aspect, v - sp.v);
                    let mut d = (du * du + dv * dv).sqrt();
                    if s.fuzzy {
                        d *= 1.0 + 0.25 * (5.0 * dv.atan2(du) + sp.wobble).sin();
                    }
                    if d < sp.r {
                        let mut col = s.core;
                        if let Some((ring, w)) = s.ring {
                            if d > sp.r * (1.0 - w) {
                                col = ring;
                            }
                            for k in 1..=s.rings {
                                let rk = sp.r * k as f64 / (s.rings + 1) as f64;
                                if (d - rk).abs() < sp.r * 0.08 {
                                    col = ring;
                                }
                            }
                        }
                        return col;
                    }
                    if let Some((halo, w)) = s.halo {
                        if d < sp.r + w {
                            c = mix(c, halo, 0.7);
                        }
                    }
                }
                c
            }
            Style::Patches(col, freq, thr, strength) => {
                let n = fbm(u * freq, v * freq, self.noise_seed);
                let t = smoothstep(thr - 0.04, thr + 0.04, n);
                mix(c, col, t * strength)
            }
            Style::Stripes(col, freq) => {
                let w = (u * 0.7 + v.abs() * 0.7) * freq * PI;
                if v.abs() > 0.08 && w.sin() > 0.35 && edge > 0.05 {
                    mix(c, col, 0.75)
                } else {
                    c
                }
            }
            Style::Margin(col, width, _) => {
                if edge < width {
                    mix(c, col, 0.85 * (1.0 - edge / width).sqrt())
                } else {
                    c
                }
            }
            Style::Mosaic(light) => {
                let (i, _) = self
                    .sites
                    .iter()
                    .enumerate()
                    .map(|(i, &(su, sv))| (i, (su - u).powi(2) + (sv - v).powi(2)))
                    .fold((0, f64::MAX), |b, x| if x.1 < b.1 { x } else { b });
                if i % 2 == 0 {
                    mix(c, light, 0.7)
                } else {
                    c.map(|x| x * 0.75)
                }
            }
            Style::Stipple(dot, tint) => {
                let c = mix(c, tint, 0.35);
                let (cu, cv) = ((u * 22.0).floor() as i64, (v * 22.0).floor() as i64);
                if hash01(cu, cv, self.noise_seed) < 0.3 {
                    dot
                } else {
                    c
                }
            }
        }
    }
}

/// Per-rendering pose and lighting.
#[derive(Clone, Debug)]
struct ViewSpec {
    angle: f64,
    offset: (f64, f64),
    gain: f64,
    noise_seed: u64,
}

impl ViewSpec {
    fn sample(rng: &mut ChaCha8Rng, angle: f64) -> Self {
        Self {
            angle,
            offset: (rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04)),
            gain: rng.gen_range(0.92..1.08),
            noise_seed: rng.gen(),
        }
    }
}

fn hash01(x: i64, y: i64, seed: u64) -> f64 {
    let h = mix_seed(
        seed ^ (x as u64).wrapping_mul(0x9e37_79b9),
        (y as u64).wrapping_add(0x632b_e59b_d9b4_e019),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (smoothstep(0.0, 1.0, x - x0), smoothstep(0.0, 1.0, y - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash01(ix, iy, seed);
    let b = hash01(ix + 1, iy, seed);
    let c = hash01(ix, iy + 1, seed);
    let d = hash01(ix + 1, iy + 1, seed);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

fn fbm(x: f64, y: f64, seed: u64) -> f64 {
    (2.0 * value_noise(x, y, seed) + value_noise(2.0 * x, 2.0 * y, seed ^ 0xabcdef)) / 3.0
}

fn render(leaf: &LeafSpec, view: &ViewSpec, size: usize) -> (RgbImage, Mask) {
    let s = size as f64;
    let (cx, cy) = (s * (0.5 + view.offset.0), s * (0.5 + view.offset.1));
    let half = leaf.scale * s;
    let (sin, cos) = view.angle.sin_cos();
    let mut mask = Mask::new(size, size, false);
    let img = RgbImage::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        // image -> leaf frame
        let u = (dx * cos + dy * sin) / half;
        let v = (-dx * sin + dy * cos) / half;
        let rho = (u * u + v * v).sqrt();
        let r = leaf.outline.radius(v.atan2(u));
        let c = if rho <= r {
            mask.bits[y * size + x] = true;
            leaf.colour(u, v, 1.0 - rho / r)
        } else {
            let n = value_noise(x as f64 / s * 4.0, y as f64 / s * 4.0, view.noise_seed) - 0.5;
            let grain = hash01(x as i64, y as i64, view.noise_seed ^ 0x5555) - 0.5;
            leaf.background.map(|b| b * (1.0 + 0.12 * n) + 0.03 * grain)
        };
        c.map(|v| (v * view.gain).clamp(0.0, 1.0) as f32)
    });
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_manifest;
    use std::collections::{HashMap, HashSet};

    #[test]
    fn ten_per_class_layout() {
        let dir = tempfile::tempdir().unwrap();
        let c = gen_minivillage(7, 10, 32, dir.path()).unwrap();
        assert_eq!(c.records.len(), 380);
        let m = load_manifest(&c.manifest_path, &c.registry).unwrap();
        assert_eq!(m.records, c.records);
        let classes: HashSet<usize> = m.records.iter().map(|r| r.class_id).collect();
        assert_eq!(classes.len(), 38);

        let mut groups: HashMap<&str, (usize, usize)> = HashMap::new();
        for r in &m.records {
            let g = groups.entry(r.leaf_group_id.as_deref().unwrap()).or_insert((r.class_id, 0));
            assert_eq!(g.0, r.class_id);
            g.1 += 1;
        }
        assert!(groups.values().all(|&(_, n)| (1..=3).contains(&n)));
        for class in 0..38 {
            assert!(groups.values().any(|&(c, n)| c == class && n > 1));
        }
        assert!(c.mask_path(&m.records[0]).exists());
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_minivillage(3, 2, 32, a.path()).unwrap();
        gen_minivillage(3, 2, 32, b.path()).unwrap();
        for sub in ["manifest.csv", "images/c05_0001.png", "masks/c37_0000.png"] {
            assert_eq!(
                std::fs::read(a.path().join(sub)).unwrap(),
                std::fs::read(b.path().join(sub)).unwrap(),
                "{sub}"
            );
        }
    }

    #[test]
    fn pair_members_share_luma() {
        for pair in CROP_LOOKS.chunks(2) {
            let a = colour_at_luma(pair[0].2, pair[0].3, pair[0].4);
            let b = colour_at_luma(pair[1].2, pair[1].3, pair[1].4);
            assert!((luma(a) - luma(b)).abs() < 1e-9);
            assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 0.05));
        }
    }

    #[test]
    fn crop_only_labels() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(
            &SynthOptions {
                seed: 1,
                images_per_class: 3,
                size: 32,
                labels: SynthLabels::CropOnly,
            },
            dir.path(),
        )
        .unwrap();
        assert_eq!(c.registry.len(), 14);
        assert_eq!(c.records.len(), 42);
    }

    #[test]
    fn disease_only_labels() {
        let dir = tempfile::tempdir().unwrap();
        let c = generate(
            &SynthOptions {
                seed: 1,
                images_per_class: 2,
                size: 32,
                labels: SynthLabels::DiseaseOnly,
            },
            dir.path(),
        )
        .unwrap();
        let n = ClassRegistry::builtin().disease_names().len() + 1;
        assert_eq!(c.registry.len(), n);
        assert_eq!(c.records.len(), 2 * n);
    }

    #[test]
    fn rejects_other_sizes() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            gen_minivillage(1, 1, 48, dir.path()),
            Err(Error::UnsupportedInputSize(48))
        ));
    }

    #[test]
    fn default_segmentation_recovers_leaves() {
        use crate::imaging::load_gray;
        use crate::segmentation::{iou, segment, SegmentationParams};
        let dir = tempfile::tempdir().unwrap();
        let c = gen_minivillage(11, 3, 64, dir.path()).unwrap();
        let params = SegmentationParams::default();
        let mut per_class = vec![0.0; 38];
        for r in &c.records {
            let img = RgbImage::load(&dir.path().join(&r.image_path)).unwrap();
            let (w, h, bytes) = load_gray(&c.mask_path(r)).unwrap();
            let (mask, _) = segment(&img, &params, false).unwrap();
            per_class[r.class_id] += iou(&mask, &Mask::from_bytes(w, h, &bytes)).unwrap() / 3.0;
        }
        let mean = per_class.iter().sum::<f64>() / 38.0;
        eprintln!("{per_class:.3?}");
        assert!(mean >= 0.9, "mean IoU {mean}");
    }
}
