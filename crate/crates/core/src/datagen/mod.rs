//! Synthetic two-modality segmentation scenes.
//!
//! A scene is a label map of disks, rectangles and annuli (an annulus of one
//! class wrapped around a core of class 1) painted over background class 0.
//! Geometry is drawn from the scene seed alone; a [`ModalitySpec`] only
//! changes how labels are turned into intensities. Two modalities generated
//! from the same seed therefore share every mask and differ purely in
//! appearance.

mod augment;
mod io;

pub use augment::{augment, augment_with, AugmentConfig, AugmentParams, CropBox};
pub use io::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SfsError};
use crate::rng;

pub const MAX_CLASSES: usize = 16;
pub const MAX_SIDE: usize = 512;
pub const MIN_SIDE: usize = 8;

const GEOMETRY_STREAM: u64 = 1;
const APPEARANCE_STREAM: u64 = 2;
const MAX_REDRAWS: usize = 256;

/// Layout of the synthetic scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub image_width: usize,
    pub image_height: usize,
    pub num_classes: usize,
    /// Inclusive range of shapes painted per image.
    pub shapes_per_image: (usize, usize),
    /// Base intensity of each class before the modality map. Evenly spaced
    /// on `[0, 1]` when absent.
    pub class_intensities: Option<Vec<f64>>,
    pub rng_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            image_width: 32,
            image_height: 32,
            num_classes: 4,
            shapes_per_image: (3, 4),
            class_intensities: None,
            rng_seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h, k) = (self.image_width, self.image_height, self.num_classes);
        if w < MIN_SIDE || h < MIN_SIDE || w > MAX_SIDE || h > MAX_SIDE {
            return Err(SfsError::Config(format!(
                "image size {w}x{h} outside [{MIN_SIDE}, {MAX_SIDE}]"
            )));
        }
        if !(2..=MAX_CLASSES).contains(&k) {
            return Err(SfsError::Config(format!(
                "num_classes {k} outside [2, {MAX_CLASSES}]"
            )));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo == 0 || lo > hi {
            return Err(SfsError::Config(format!(
                "shapes_per_image ({lo}, {hi}) must be a nonempty range starting at 1 or more"
            )));
        }
        if let Some(levels) = &self.class_intensities {
            if levels.len() != k || levels.iter().any(|v| !v.is_finite()) {
                return Err(SfsError::Config(format!(
                    "class_intensities needs {k} finite values"
                )));
            }
        }
        Ok(())
    }

    pub fn base_intensities(&self) -> Vec<f64> {
        match &self.class_intensities {
            Some(levels) => levels.clone(),
            None => {
                let top = (self.num_classes - 1) as f64;
                (0..self.num_classes).map(|k| k as f64 / top).collect()
            }
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.image_width * self.image_height
    }
}

/// Piecewise-linear map applied to class base intensities.
///
/// Knots must have strictly increasing inputs and either non-decreasing or
/// non-increasing outputs. Inputs outside the knot range are extended along
/// the end segments. No knots means identity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntensityMap {
    pub knots: Vec<(f64, f64)>,
}

impl IntensityMap {
    pub fn identity() -> Self {
        Self { knots: Vec::new() }
    }

    pub fn inverting() -> Self {
        Self {
            knots: vec![(0.0, 1.0), (1.0, 0.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.len() == 1 {
            return Err(SfsError::Config("intensity map needs 0 or >= 2 knots".into()));
        }
        if self.knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(SfsError::Config("intensity map knots must be finite".into()));
        }
        if self.knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SfsError::Config(
                "intensity map inputs must be strictly increasing".into(),
            ));
        }
        let rising = self.knots.windows(2).all(|w| w[1].1 >= w[0].1);
        let falling = self.knots.windows(2).all(|w| w[1].1 <= w[0].1);
        if !rising && !falling {
            return Err(SfsError::Config(
                "intensity map must be monotone or inverting".into(),
            ));
        }
        Ok(())
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.knots.is_empty() {
            return v;
        }
        let n = self.knots.len();
        // index of the segment used for interpolation / extrapolation
        let seg = match self.knots.iter().position(|&(x, _)| v < x) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        }
        .min(n - 2);
        let (x0, y0) = self.knots[seg];
        let (x1, y1) = self.knots[seg + 1];
        y0 + (v - x0) * (y1 - y0) / (x1 - x0)
    }
}

/// Appearance of one imaging modality.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalitySpec {
    pub intensity_map: IntensityMap,
    pub noise_std: f64,
    pub blur_radius: usize,
    /// Scale of an additive linear intensity ramp with random direction.
    pub bias_field_amplitude: f64,
}

impl ModalitySpec {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.intensity_map.validate()?;
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SfsError::Config("noise_std must be finite and >= 0".into()));
        }
        if !(self.bias_field_amplitude >= 0.0 && self.bias_field_amplitude.is_finite()) {
            return Err(SfsError::Config(
                "bias_field_amplitude must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// A single-channel image with its label mask, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub mask: Vec<u8>,
}

impl LabeledImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, mask: Vec<u8>) -> Result<Self> {
        let n = width * height;
        if pixels.len() != n || mask.len() != n {
            return Err(SfsError::Dimension(format!(
                "{width}x{height} image needs {n} pixels and labels, got {} and {}",
                pixels.len(),
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            mask,
        })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.mask.iter().find(|&&l| l as usize >= num_classes) {
            Some(&label) => Err(SfsError::LabelOutOfRange { label, num_classes }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Annulus { cx: f64, cy: f64, inner: f64, outer: f64 },
}

impl Shape {
    fn paint(&self, class: u8, width: usize, height: usize, mask: &mut [u8]) {
        for y in 0..height {
            for x in 0..width {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let idx = y * width + x;
                match *self {
                    Shape::Disk { cx, cy, r } => {
                        if (px - cx).powi(2) + (py - cy).powi(2) <= r * r {
                            mask[idx] = class;
                        }
                    }
                    Shape::Rect { x0, y0, x1, y1 } => {
                        if px >= x0 && px <= x1 && py >= y0 && py <= y1 {
                            mask[idx] = class;
                        }
                    }
                    Shape::Annulus {
                        cx,
                        cy,
                        inner,
                        outer,
                    } => {
                        let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                        if d2 <= inner * inner {
                            mask[idx] = 1;
                        } else if d2 <= outer * outer {
                            mask[idx] = class;
                        }
                    }
                }
            }
        }
    }
}

fn draw_shape<R: Rng>(class: usize, spec: &SceneSpec, rng: &mut R) -> Shape {
    let (w, h) = (spec.image_width as f64, spec.image_height as f64);
    let scale = w.min(h) / 32.0;
    let center = |extent: f64, rng: &mut R| {
        let cx = rng.random_range(extent.min(w / 2.0)..=(w - extent).max(w / 2.0));
        let cy = rng.random_range(extent.min(h / 2.0)..=(h - extent).max(h / 2.0));
        (cx, cy)
    };
    match (class - 1) % 3 {
        0 => {
            let r = rng.random_range(3.0..=6.0) * scale;
            let (cx, cy) = center(r + 1.0, rng);
            Shape::Disk { cx, cy, r }
        }
        1 => {
            let hw = rng.random_range(3.0..=7.0) * scale;
            let hh = rng.random_range(3.0..=7.0) * scale;
            let (cx, cy) = center(hw.max(hh) + 1.0, rng);
            Shape::Rect {
                x0: cx - hw,
                y0: cy - hh,
                x1: cx + hw,
                y1: cy + hh,
            }
        }
        _ => {
            let outer = rng.random_range(5.5..=8.0) * scale;
            let inner = outer - rng.random_range(2.0..=3.0) * scale;
            let (cx, cy) = center(outer + 1.0, rng);
            Shape::Annulus {
                cx,
                cy,
                inner,
                outer,
            }
        }
    }
}

/// Draw the label maps of `count` scenes. Depends only on the scene spec.
pub fn generate_masks(spec: &SceneSpec, count: usize) -> Result<Vec<Vec<u8>>> {
    spec.validate()?;
    if count == 0 {
        return Err(SfsError::InvalidInput("count must be >= 1".into()));
    }
    let mut rng = rng::derived(spec.rng_seed, GEOMETRY_STREAM);
    let foreground = spec.num_classes - 1;
    let (w, h) = (spec.image_width, spec.image_height);
    let mut next_class = 0usize;
    let mut masks = Vec::with_capacity(count);
    for _ in 0..count {
        let n_shapes = rng.random_range(spec.shapes_per_image.0..=spec.shapes_per_image.1);
        let classes: Vec<usize> = (0..n_shapes)
            .map(|j| 1 + (next_class + j) % foreground)
            .collect();
        next_class = (next_class + n_shapes) % foreground;

        let mut drawn = None;
        for _ in 0..MAX_REDRAWS {
            let mut mask = vec![0u8; w * h];
            for &class in &classes {
                draw_shape(class, spec, &mut rng).paint(class as u8, w, h, &mut mask);
            }
            let visible = classes.iter().all(|&c| mask.contains(&(c as u8)));
            drawn = Some(mask);
            if visible {
                break;
            }
        }
        masks.push(drawn.expect("at least one draw"));
    }

    let mut seen = vec![false; spec.num_classes];
    masks.iter().flatten().for_each(|&l| seen[l as usize] = true);
    let missing: Vec<usize> = (1..spec.num_classes).filter(|&k| !seen[k]).collect();
    if !missing.is_empty() {
        return Err(SfsError::InvalidInput(format!(
            "{count} scenes cannot show every class; missing {missing:?}"
        )));
    }
    Ok(masks)
}

/// Render a label map under a modality. `rng` drives the bias field and
/// the noise only.
pub fn render<R: Rng>(
    mask: &[u8],
    spec: &SceneSpec,
    modality: &ModalitySpec,
    rng: &mut R,
) -> Vec<f64> {
    let (w, h) = (spec.image_width, spec.image_height);
    let levels: Vec<f64> = spec
        .base_intensities()
        .into_iter()
        .map(|b| modality.intensity_map.apply(b))
        .collect();
    let mut pixels: Vec<f64> = mask.iter().map(|&l| levels[l as usize]).collect();

    if modality.blur_radius > 0 {
        pixels = box_blur(&pixels, w, h, modality.blur_radius);
    }

    // bias and noise draws happen unconditionally so the stream position
    // does not depend on which corruptions are switched on
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    for y in 0..h {
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64 - 0.5;
            let v = (y as f64 + 0.5) / h as f64 - 0.5;
            let bias = 2.0 * modality.bias_field_amplitude * (gx * u + gy * v);
            let z: f64 = StandardNormal.sample(rng);
            let p = &mut pixels[y * w + x];
            if modality.bias_field_amplitude > 0.0 {
                *p += bias;
            }
            if modality.noise_std > 0.0 {
                *p += modality.noise_std * z;
            }
        }
    }
    pixels
}

fn box_blur(src: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r)
                .map(|d| src[y * w + clamp(x as isize + d, w)])
                .sum();
            tmp[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let s: f64 = (-r..=r)
                .map(|d| tmp[clamp(y as isize + d, h) * w + x])
                .sum();
            out[y * w + x] = s / (2 * r + 1) as f64;
        }
    }
    out
}

/// Generate `count` labeled scenes under `modality`.
///
/// Deterministic in `(spec.rng_seed, modality, count)`. Masks are identical
/// for every modality that shares the seed.
pub fn generate_dataset(
    spec: &SceneSpec,
    modality: &ModalitySpec,
    count: usize,
) -> Result<Vec<LabeledImage>> {
    modality.validate()?;
    let masks = generate_masks(spec, count)?;
    let mut rng = rng::derived(spec.rng_seed, APPEARANCE_STREAM);
    masks
        .into_iter()
        .map(|mask| {
            let pixels = render(&mask, spec, modality, &mut rng);
            LabeledImage::new(spec.image_width, spec.image_height, pixels, mask)
        })
        .collect()
}

/// Per-image standardization to zero mean and unit variance, followed by
/// clipping to three standard deviations.
pub fn preprocess(images: &[LabeledImage]) -> Result<Vec<LabeledImage>> {
    if images.is_empty() {
        return Err(SfsError::InvalidInput("no images to preprocess".into()));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let n = img.pixels.len() as f64;
            let mean = img.pixels.iter().sum::<f64>() / n;
            let var = img.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
            if !(var > 1e-24) || !var.is_finite() {
                return Err(SfsError::ZeroVariance(i));
            }
            let sd = var.sqrt();
            let pixels = img
                .pixels
                .iter()
                .map(|p| ((p - mean) / sd).clamp(-3.0, 3.0))
                .collect();
            Ok(LabeledImage {
                pixels,
                ..img.clone()
            })
        })
        .collect()
}
