use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledImage;

/// Probabilities and ranges for random augmentation. Each augmentation is
/// drawn independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub rotate_prob: f64,
    pub max_rotation_deg: f64,
    pub negate_prob: f64,
    pub noise_prob: f64,
    pub noise_std: f64,
    pub crop_prob: f64,
    /// Smallest kept fraction of the image area when cropping.
    pub min_crop_area: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate_prob: 0.5,
            max_rotation_deg: 20.0,
            negate_prob: 0.5,
            noise_prob: 0.5,
            noise_std: 0.1,
            crop_prob: 0.5,
            min_crop_area: 0.75,
        }
    }
}

/// Crop window in pixel units, `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub angle_deg: f64,
    pub negate: bool,
    pub noise_std: f64,
    pub crop: Option<CropBox>,
}

impl AugmentParams {
    pub fn draw<R: Rng>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let max_angle = cfg.max_rotation_deg.clamp(0.0, 180.0);
        let mut p = AugmentParams::default();
        if rng.random_bool(cfg.rotate_prob.clamp(0.0, 1.0)) {
            p.angle_deg = rng.random_range(-max_angle..=max_angle);
        }
        p.negate = rng.random_bool(cfg.negate_prob.clamp(0.0, 1.0));
        if rng.random_bool(cfg.noise_prob.clamp(0.0, 1.0)) {
            p.noise_std = cfg.noise_std.max(0.0);
        }
        if rng.random_bool(cfg.crop_prob.clamp(0.0, 1.0)) {
            let side_min = cfg.min_crop_area.clamp(0.05, 1.0).sqrt();
            let sx = rng.random_range(side_min..=1.0);
            let sy = rng.random_range(side_min..=1.0);
            let (w, h) = (sx * width as f64, sy * height as f64);
            p.crop = Some(CropBox {
                x0: rng.random_range(0.0..=(width as f64 - w)),
                y0: rng.random_range(0.0..=(height as f64 - h)),
                w,
                h,
            });
        }
        p
    }
}

/// Random rotation, negation, additive noise and crop-and-resize.
pub fn augment<R: Rng>(image: &LabeledImage, cfg: &AugmentConfig, rng: &mut R) -> LabeledImage {
    let params = AugmentParams::draw(cfg, image.width, image.height, rng);
    augment_with(image, &params, rng)
}

/// Apply a fixed set of augmentation parameters. `rng` is used for noise.
///
/// Geometric operators resample pixels bilinearly and the mask by nearest
/// neighbor, with border replication outside the image.
pub fn augment_with<R: Rng>(
    image: &LabeledImage,
    params: &AugmentParams,
    rng: &mut R,
) -> LabeledImage {
    let mut out = image.clone();
    if params.angle_deg != 0.0 {
        out = rotate(&out, params.angle_deg);
    }
    if let Some(crop) = params.crop {
        out = crop_resize(&out, crop);
    }
    if params.negate {
        out.pixels.iter_mut().for_each(|p| *p = -*p);
    }
    if params.noise_std > 0.0 {
        for p in out.pixels.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *p += params.noise_std * z;
        }
    }
    out
}

/// Resample `image` at the source coordinates returned by `map` for each
/// destination pixel center.
fn resample(image: &LabeledImage, map: impl Fn(f64, f64) -> (f64, f64)) -> LabeledImage {
    let (w, h) = (image.width, image.height);
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            pixels.push(bilinear(image, sx, sy));
            let nx = (sx.round() as isize).clamp(0, w as isize - 1) as usize;
            let ny = (sy.round() as isize).clamp(0, h as isize - 1) as usize;
            mask.push(image.mask[ny * w + nx]);
        }
    }
    LabeledImage {
        width: w,
        height: h,
        pixels,
        mask,
    }
}

fn bilinear(image: &LabeledImage, sx: f64, sy: f64) -> f64 {
    let (w, h) = (image.width as isize, image.height as isize);
    let sx = sx.clamp(0.0, (w - 1) as f64);
    let sy = sy.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (sx.floor() as isize, sy.floor() as isize);
    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
    let at = |x: isize, y: isize| {
        let x = x.clamp(0, w - 1) as usize;
        let y = y.clamp(0, h - 1) as usize;
        image.pixels[y * image.width + x]
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    if fy == 0.0 {
        top
    } else {
        top * (1.0 - fy) + bottom * fy
    }
}

fn rotate(image: &LabeledImage, angle_deg: f64) -> LabeledImage {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (image.width as f64 - 1.0) / 2.0;
    let cy = (image.height as f64 - 1.0) / 2.0;
    // inverse rotation: destination -> source
    resample(image, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + c * dx + s * dy, cy - s * dx + c * dy)
    })
}

fn crop_resize(image: &LabeledImage, crop: CropBox) -> LabeledImage {
    let sx = crop.w / image.width as f64;
    let sy = crop.h / image.height as f64;
    resample(image, |x, y| {
        (
            crop.x0 + (x + 0.5) * sx - 0.5,
            crop.y0 + (y + 0.5) * sy - 0.5,
        )
    })
}
