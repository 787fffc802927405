//! Synthetic scene generation: colored rectangles, disks and stripes on a
//! background, with exact rasterized label masks and Gaussian pixel noise.
//! A scene is a pure function of (seed, index).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::mix_seed;
use crate::tensor::{IntTensor, Tensor};

const SCENE_STREAM: u64 = 0x5CE2E;

/// Scene generator settings. Class 0 is the background; classes 1.. map to
/// shape kinds (rectangle, disk, stripe, then cycling).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub image_size: usize,
    pub classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub noise_level: f64,
    pub palette: Vec<[f64; 3]>,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image_size: 64,
            classes: 4,
            shapes_min: 2,
            shapes_max: 4,
            noise_level: 0.05,
            palette: default_palette(4),
            seed: 42,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 255 {
            return Err(Error::Config("classes must be in [2, 255]".into()));
        }
        if self.palette.len() != self.classes {
            return Err(Error::Config(format!(
                "palette has {} colors for {} classes",
                self.palette.len(),
                self.classes
            )));
        }
        if self.shapes_min == 0 || self.shapes_min > self.shapes_max {
            return Err(Error::Config("invalid shapes-per-image range".into()));
        }
        if self.image_size < 16 {
            return Err(Error::Config("image_size must be at least 16".into()));
        }
        Ok(())
    }
}

/// Distinct, fixed colors: a dark background plus saturated hues.
pub fn default_palette(classes: usize) -> Vec<[f64; 3]> {
    let mut palette = vec![[0.15, 0.17, 0.20]];
    for k in 1..classes {
        let hue = (k - 1) as f64 * 360.0 / (classes - 1) as f64;
        palette.push(hsv_to_rgb(hue, 0.75, 0.85));
    }
    palette
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as usize {
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

/// Rasterizable primitive; later shapes overwrite earlier ones.
#[derive(Clone, Debug)]
pub enum Shape {
    Rect { x0: usize, y0: usize, x1: usize, y1: usize, class: u8 },
    Disk { cx: f64, cy: f64, r: f64, class: u8 },
    Stripe { vertical: bool, lo: usize, hi: usize, class: u8 },
}

/// One generated sample: channels-first RGB image in [0, 1] and the exact
/// label mask.
pub struct Scene {
    pub image: Vec<f64>,
    pub mask: Vec<u8>,
    pub size: usize,
}

/// Paints shapes over the background class and colors the result; noise is
/// drawn from `rng` when `noise_level > 0`.
pub fn rasterize(shapes: &[Shape], spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Scene {
    let s = spec.image_size;
    let mut mask = vec![0u8; s * s];
    for shape in shapes {
        match *shape {
            Shape::Rect { x0, y0, x1, y1, class } => {
                for y in y0..y1.min(s) {
                    for x in x0..x1.min(s) {
                        mask[y * s + x] = class;
                    }
                }
            }
            Shape::Disk { cx, cy, r, class } => {
                let r2 = r * r;
                for y in 0..s {
                    for x in 0..s {
                        let dy = y as f64 + 0.5 - cy;
                        let dx = x as f64 + 0.5 - cx;
                        if dx * dx + dy * dy <= r2 {
                            mask[y * s + x] = class;
                        }
                    }
                }
            }
            Shape::Stripe { vertical, lo, hi, class } => {
                for y in 0..s {
                    for x in 0..s {
                        let coord = if vertical { x } else { y };
                        if coord >= lo && coord < hi.min(s) {
                            mask[y * s + x] = class;
                        }
                    }
                }
            }
        }
    }
    let mut image = vec![0.0; 3 * s * s];
    for (p, &label) in mask.iter().enumerate() {
        let color = spec.palette[label as usize];
        for ch in 0..3 {
            let mut v = color[ch];
            if spec.noise_level > 0.0 {
                let e: f64 = StandardNormal.sample(rng);
                v += e * spec.noise_level;
            }
            image[ch * s * s + p] = v.clamp(0.0, 1.0);
        }
    }
    Scene { image, mask, size: s }
}

fn sample_shapes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    let s = spec.image_size;
    let count = rng.random_range(spec.shapes_min..=spec.shapes_max);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let class = rng.random_range(1..spec.classes) as u8;
        match (class as usize - 1) % 3 {
            0 => {
                let w = rng.random_range(s / 4..=(s * 5) / 8);
                let h = rng.random_range(s / 4..=(s * 5) / 8);
                let x0 = rng.random_range(0..=s - w);
                let y0 = rng.random_range(0..=s - h);
                shapes.push(Shape::Rect { x0, y0, x1: x0 + w, y1: y0 + h, class });
            }
            1 => {
                let r = rng.random_range(s as f64 * 0.15..s as f64 * 0.30);
                let cx = rng.random_range(r..s as f64 - r);
                let cy = rng.random_range(r..s as f64 - r);
                shapes.push(Shape::Disk { cx, cy, r, class });
            }
            _ => {
                let thickness = rng.random_range(s / 8..=s / 4);
                let lo = rng.random_range(0..=s - thickness);
                shapes.push(Shape::Stripe {
                    vertical: rng.random_bool(0.5),
                    lo,
                    hi: lo + thickness,
                    class,
                });
            }
        }
    }
    shapes
}

/// Deterministic scene for a corpus index.
pub fn generate_scene(spec: &SceneSpec, index: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, SCENE_STREAM ^ (index as u64)));
    let shapes = sample_shapes(spec, &mut rng);
    rasterize(&shapes, spec, &mut rng)
}

/// Input images with their label masks, batched channels-first.
pub struct SceneBatch {
    pub images: Tensor,
    pub labels: IntTensor,
    pub classes: usize,
}

/// Assembles the scenes at `indices` into one batch.
pub fn batch_from_indices(spec: &SceneSpec, indices: &[usize]) -> Result<SceneBatch> {
    let s = spec.image_size;
    let b = indices.len();
    let mut images = Vec::with_capacity(b * 3 * s * s);
    let mut masks = Vec::with_capacity(b * s * s);
    for &i in indices {
        let scene = generate_scene(spec, i);
        images.extend_from_slice(&scene.image);
        masks.extend_from_slice(&scene.mask);
    }
    Ok(SceneBatch {
        images: Tensor::from_vec(images, &[b, 3, s, s])?,
        labels: IntTensor::new(masks, &[b, s, s])?,
        classes: spec.classes,
    })
}

/// Fraction of corpus pixels per class over `count` scenes.
pub fn class_frequencies(spec: &SceneSpec, count: usize) -> Vec<f64> {
    let mut counts = vec![0u64; spec.classes];
    for i in 0..count {
        for &label in &generate_scene(spec, i).mask {
            counts[label as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}
