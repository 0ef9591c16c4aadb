//! Segmentation network `classifier ∘ decoder ∘ encoder` with hand-written
//! reverse-mode gradients.
//!
//! * encoder: two 3x3 convolutions, 1 → `enc_channels` → `enc_channels`, ReLU
//! * decoder: one 3x3 convolution, `enc_channels` → `latent_dim`, ReLU
//! * classifier: per-pixel affine map `latent_dim` → `num_classes`, softmax
//!
//! All convolutions keep full resolution and pad circularly, so translating
//! an input with wraparound translates every feature map the same way.
//! The decoder output is the embedding space the internal distribution is
//! fitted in.

mod adam;
mod checkpoint;
mod conv;

pub use adam::{sgd_step, Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, LayerEntry};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledImage;
use crate::error::{Result, SfsError};
use crate::rng;

pub const LOG_CLAMP: f64 = 1e-12;

pub const ENC1_W: usize = 0;
pub const ENC1_B: usize = 1;
pub const ENC2_W: usize = 2;
pub const ENC2_B: usize = 3;
pub const DEC_W: usize = 4;
pub const DEC_B: usize = 5;
pub const CLS_W: usize = 6;
pub const CLS_B: usize = 7;
pub const NUM_TENSORS: usize = 8;

pub const TENSOR_NAMES: [&str; NUM_TENSORS] = [
    "encoder.conv1.weight",
    "encoder.conv1.bias",
    "encoder.conv2.weight",
    "encoder.conv2.bias",
    "decoder.conv.weight",
    "decoder.conv.bias",
    "classifier.weight",
    "classifier.bias",
];

/// Tensors touched by the classifier head.
pub const CLASSIFIER_TENSORS: [usize; 2] = [CLS_W, CLS_B];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetShape {
    pub width: usize,
    pub height: usize,
    pub enc_channels: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

impl NetShape {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn tensor_shapes(&self) -> [Vec<usize>; NUM_TENSORS] {
        let (e, f, k) = (self.enc_channels, self.latent_dim, self.num_classes);
        [
            vec![e, 1, 3, 3],
            vec![e],
            vec![e, e, 3, 3],
            vec![e],
            vec![f, e, 3, 3],
            vec![f],
            vec![k, f],
            vec![k],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(SfsError::Config("network input must be nonempty".into()));
        }
        if self.enc_channels == 0 || self.latent_dim == 0 || self.num_classes < 2 {
            return Err(SfsError::Config(format!(
                "bad network widths: enc {} latent {} classes {}",
                self.enc_channels, self.latent_dim, self.num_classes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegNetwork {
    shape: NetShape,
    params: Vec<Vec<f64>>,
}

/// One gradient array per parameter tensor, same layout as [`SegNetwork`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros(shape: &NetShape) -> Self {
        Self {
            tensors: shape
                .tensor_shapes()
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors
            .iter_mut()
            .flatten()
            .for_each(|v| *v *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-pixel embeddings, pixel-major: `values[(y * width + x) * dim + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LatentField {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Stack fields of equal width and dim vertically.
    pub fn stack(fields: &[LatentField]) -> Result<LatentField> {
        let first = fields
            .first()
            .ok_or_else(|| SfsError::InvalidInput("no latent fields to stack".into()))?;
        if fields
            .iter()
            .any(|f| f.width != first.width || f.dim != first.dim)
        {
            return Err(SfsError::Dimension("latent fields differ in width or dim".into()));
        }
        Ok(LatentField {
            width: first.width,
            height: fields.iter().map(|f| f.height).sum(),
            dim: first.dim,
            values: fields.iter().flat_map(|f| f.values.iter().copied()).collect(),
        })
    }
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    shape: NetShape,
    input_padded: Vec<f64>,
    act1: Vec<f64>,
    act2: Vec<f64>,
    /// channel-major decoder output after ReLU
    latent_cm: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardPass {
    pub fn shape(&self) -> NetShape {
        self.shape
    }

    /// Pixel-major class probabilities, `probs[pixel * K + k]`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn latent(&self) -> LatentField {
        let (n, f) = (self.shape.pixels(), self.shape.latent_dim);
        let mut values = vec![0.0; n * f];
        for c in 0..f {
            for p in 0..n {
                values[p * f + c] = self.latent_cm[c * n + p];
            }
        }
        LatentField {
            width: self.shape.width,
            height: self.shape.height,
            dim: f,
            values,
        }
    }

    /// Arg-max label per pixel, lowest class index on ties.
    pub fn predictions(&self) -> Vec<u8> {
        argmax_rows(&self.probs, self.shape.num_classes)
    }

    /// Largest class probability per pixel.
    pub fn confidence(&self) -> Vec<f64> {
        self.probs
            .chunks_exact(self.shape.num_classes)
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

pub(crate) fn argmax_rows(probs: &[f64], k: usize) -> Vec<u8> {
    probs
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best as u8
        })
        .collect()
}

/// Cross-entropy term of an upstream loss.
#[derive(Debug, Clone, Copy)]
pub struct CeTerm<'a> {
    pub mask: &'a [u8],
    pub class_weights: Option<&'a [f64]>,
    /// Multiplier applied to the mean cross-entropy.
    pub scale: f64,
}

/// Loss whose gradient [`backward`] propagates: an optional cross-entropy
/// on the output probabilities plus an optional gradient injected directly
/// at the latent field (pixel-major, same layout as [`LatentField::values`]).
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream<'a> {
    pub ce: Option<CeTerm<'a>>,
    pub latent_grad: Option<&'a [f64]>,
}

impl SegNetwork {
    /// He-normal convolutions, Glorot-normal classifier, zero biases.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng::seeded(seed);
        let shapes = shape.tensor_shapes();
        let mut params: Vec<Vec<f64>> = shapes
            .iter()
            .map(|s| vec![0.0; s.iter().product()])
            .collect();
        let fill = |t: &mut Vec<f64>, std: f64, rng: &mut rng::SfsRng| {
            let normal = Normal::new(0.0, std).expect("positive std");
            t.iter_mut().for_each(|v| *v = normal.sample(rng));
        };
        let e = shape.enc_channels as f64;
        fill(&mut params[ENC1_W], (2.0 / 9.0f64).sqrt(), &mut rng);
        fill(&mut params[ENC2_W], (2.0 / (9.0 * e)).sqrt(), &mut rng);
        fill(&mut params[DEC_W], (2.0 / (9.0 * e)).sqrt(), &mut rng);
        let glorot = (2.0 / (shape.latent_dim + shape.num_classes) as f64).sqrt();
        fill(&mut params[CLS_W], glorot, &mut rng);
        Ok(Self { shape, params })
    }

    pub fn from_tensors(shape: NetShape, params: Vec<Vec<f64>>) -> Result<Self> {
        shape.validate()?;
        let shapes = shape.tensor_shapes();
        if params.len() != NUM_TENSORS
            || params
                .iter()
                .zip(&shapes)
                .any(|(p, s)| p.len() != s.iter().product::<usize>())
        {
            return Err(SfsError::Dimension(
                "parameter tensors do not match network shape".into(),
            ));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn zero_classifier(&mut self) {
        for t in CLASSIFIER_TENSORS {
            self.params[t].iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Class logits for a batch of latent vectors (row-major `n x F`).
    pub fn classify_logits(&self, points: &[f64]) -> Vec<f64> {
        let (f, k) = (self.shape.latent_dim, self.shape.num_classes);
        let (w, b) = (&self.params[CLS_W], &self.params[CLS_B]);
        let mut logits = Vec::with_capacity(points.len() / f * k);
        for z in points.chunks_exact(f) {
            for c in 0..k {
                let row = &w[c * f..(c + 1) * f];
                logits.push(b[c] + row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        logits
    }

    /// Softmax class probabilities for latent vectors (row-major `n x F`).
    pub fn classify(&self, points: &[f64]) -> Vec<f64> {
        let mut logits = self.classify_logits(points);
        softmax_rows(&mut logits, self.shape.num_classes);
        logits
    }

    pub fn predict(&self, image: &LabeledImage) -> Result<Vec<u8>> {
        Ok(forward(self, image)?.predictions())
    }
}

fn softmax_rows(values: &mut [f64], k: usize) {
    for row in values.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Run the network on one image.
pub fn forward(net: &SegNetwork, image: &LabeledImage) -> Result<ForwardPass> {
    let s = net.shape;
    if image.width != s.width || image.height != s.height {
        return Err(SfsError::Dimension(format!(
            "image is {}x{}, network expects {}x{}",
            image.width, image.height, s.width, s.height
        )));
    }
    let (w, h, e, f, k) = (s.width, s.height, s.enc_channels, s.latent_dim, s.num_classes);
    let n = w * h;
    let p = &net.params;

    let input_padded = conv::pad_circular(&image.pixels, 1, w, h);
    let mut act1 = conv::forward(&input_padded, 1, w, h, &p[ENC1_W], &p[ENC1_B], e);
    relu_in_place(&mut act1);
    let mut act2 = conv::forward(&conv::pad_circular(&act1, e, w, h), e, w, h, &p[ENC2_W], &p[ENC2_B], e);
    relu_in_place(&mut act2);
    let mut latent_cm = conv::forward(&conv::pad_circular(&act2, e, w, h), e, w, h, &p[DEC_W], &p[DEC_B], f);
    relu_in_place(&mut latent_cm);

    let mut probs = vec![0.0; n * k];
    let (cw, cb) = (&p[CLS_W], &p[CLS_B]);
    for px in 0..n {
        let row = &mut probs[px * k..(px + 1) * k];
        for c in 0..k {
            let mut acc = cb[c];
            for j in 0..f {
                acc += cw[c * f + j] * latent_cm[j * n + px];
            }
            row[c] = acc;
        }
    }
    softmax_rows(&mut probs, k);

    Ok(ForwardPass {
        shape: s,
        input_padded,
        act1,
        act2,
        latent_cm,
        probs,
    })
}

fn check_mask(mask: &[u8], num_classes: usize) -> Result<()> {
    match mask.iter().find(|&&l| l as usize >= num_classes) {
        Some(&label) => Err(SfsError::LabelOutOfRange { label, num_classes }),
        None => Ok(()),
    }
}

/// Mean over pixels of `-w[y] * ln(max(p[y], 1e-12))`.
///
/// `probs` is pixel-major with `num_classes` entries per pixel.
pub fn ce_loss(
    probs: &[f64],
    mask: &[u8],
    num_classes: usize,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    if probs.len() != mask.len() * num_classes || mask.is_empty() {
        return Err(SfsError::Dimension(format!(
            "{} probabilities for {} labels and {num_classes} classes",
            probs.len(),
            mask.len()
        )));
    }
    if let Some(wts) = class_weights {
        if wts.len() != num_classes {
            return Err(SfsError::Dimension("class weight count differs from K".into()));
        }
    }
    check_mask(mask, num_classes)?;
    let total: f64 = mask
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let y = y as usize;
            let wt = class_weights.map_or(1.0, |w| w[y]);
            -wt * probs[i * num_classes + y].max(LOG_CLAMP).ln()
        })
        .sum();
    Ok(total / mask.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to logits, pixel-major.
fn ce_logit_grad(probs: &[f64], term: &CeTerm<'_>, k: usize) -> Vec<f64> {
    let n = term.mask.len();
    let mut g = vec![0.0; probs.len()];
    for (i, &y) in term.mask.iter().enumerate() {
        let y = y as usize;
        // the log clamp is flat below 1e-12
        if probs[i * k + y] <= LOG_CLAMP {
            continue;
        }
        let coef = term.scale * term.class_weights.map_or(1.0, |w| w[y]) / n as f64;
        for c in 0..k {
            let target = if c == y { 1.0 } else { 0.0 };
            g[i * k + c] = coef * (probs[i * k + c] - target);
        }
    }
    g
}

/// Exact gradients of `upstream` with respect to every parameter.
pub fn backward(net: &SegNetwork, pass: &ForwardPass, upstream: &Upstream<'_>) -> Result<GradientSet> {
    let s = net.shape;
    if pass.shape != s {
        return Err(SfsError::Dimension(
            "forward cache was produced by a differently shaped network".into(),
        ));
    }
    let (w, h, e, f, k) = (s.width, s.height, s.enc_channels, s.latent_dim, s.num_classes);
    let n = w * h;
    let p = &net.params;
    let mut grads = GradientSet::zeros(&s);

    // dL/dlatent, channel-major
    let mut d_latent = vec![0.0; f * n];
    let mut any = false;

    if let Some(term) = &upstream.ce {
        if term.mask.len() != n {
            return Err(SfsError::Dimension("mask size differs from image".into()));
        }
        check_mask(term.mask, k)?;
        if let Some(wts) = term.class_weights {
            if wts.len() != k {
                return Err(SfsError::Dimension("class weight count differs from K".into()));
            }
        }
        if term.scale != 0.0 {
            any = true;
            let g = ce_logit_grad(&pass.probs, term, k);
            let cw = &p[CLS_W];
            let (gw, rest) = grads.tensors.split_at_mut(CLS_B);
            let gw = &mut gw[CLS_W];
            let gb = &mut rest[0];
            for px in 0..n {
                let gr = &g[px * k..(px + 1) * k];
                for c in 0..k {
                    let gc = gr[c];
                    if gc == 0.0 {
                        continue;
                    }
                    gb[c] += gc;
                    for j in 0..f {
                        gw[c * f + j] += gc * pass.latent_cm[j * n + px];
                        d_latent[j * n + px] += gc * cw[c * f + j];
                    }
                }
            }
        }
    }

    if let Some(lg) = upstream.latent_grad {
        if lg.len() != n * f {
            return Err(SfsError::Dimension(format!(
                "latent gradient has {} entries, expected {}",
                lg.len(),
                n * f
            )));
        }
        if lg.iter().any(|v| *v != 0.0) {
            any = true;
            for px in 0..n {
                for j in 0..f {
                    d_latent[j * n + px] += lg[px * f + j];
                }
            }
        }
    }

    if !any {
        return Ok(grads);
    }

    // decoder ReLU
    for (d, a) in d_latent.iter_mut().zip(&pass.latent_cm) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    let pad2 = conv::pad_circular(&pass.act2, e, w, h);
    let (gw, gb, d_act2) = conv::backward(&pad2, e, w, h, &p[DEC_W], f, &d_latent, true);
    grads.tensors[DEC_W] = gw;
    grads.tensors[DEC_B] = gb;

    let mut d_act2 = d_act2.expect("requested");
    for (d, a) in d_act2.iter_mut().zip(&pass.act2) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    let pad1 = conv::pad_circular(&pass.act1, e, w, h);
    let (gw, gb, d_act1) = conv::backward(&pad1, e, w, h, &p[ENC2_W], e, &d_act2, true);
    grads.tensors[ENC2_W] = gw;
    grads.tensors[ENC2_B] = gb;

    let mut d_act1 = d_act1.expect("requested");
    for (d, a) in d_act1.iter_mut().zip(&pass.act1) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
    let (gw, gb, _) = conv::backward(&pass.input_padded, 1, w, h, &p[ENC1_W], e, &d_act1, false);
    grads.tensors[ENC1_W] = gw;
    grads.tensors[ENC1_B] = gb;

    Ok(grads)
}

/// Mean cross-entropy of the classifier head on latent samples and its
/// gradient, which is nonzero only on the classifier tensors.
pub fn classifier_ce(
    net: &SegNetwork,
    points: &[f64],
    labels: &[u8],
    class_weights: Option<&[f64]>,
) -> Result<(f64, GradientSet)> {
    let s = net.shape;
    let (f, k) = (s.latent_dim, s.num_classes);
    if points.len() != labels.len() * f || labels.is_empty() {
        return Err(SfsError::Dimension(format!(
            "{} latent values for {} labels of dim {f}",
            points.len(),
            labels.len()
        )));
    }
    let probs = net.classify(points);
    let loss = ce_loss(&probs, labels, k, class_weights)?;
    let term = CeTerm {
        mask: labels,
        class_weights,
        scale: 1.0,
    };
    let g = ce_logit_grad(&probs, &term, k);
    let mut grads = GradientSet::zeros(&s);
    let (gw, rest) = grads.tensors.split_at_mut(CLS_B);
    let gw = &mut gw[CLS_W];
    let gb = &mut rest[0];
    for (z, gr) in points.chunks_exact(f).zip(g.chunks_exact(k)) {
        for c in 0..k {
            gb[c] += gr[c];
            for j in 0..f {
                gw[c * f + j] += gr[c] * z[j];
            }
        }
    }
    Ok((loss, grads))
}

/// Draw a random parameter coordinate, for finite-difference checks.
pub fn random_coordinate<R: Rng>(net: &SegNetwork, rng: &mut R) -> (usize, usize) {
    let total = net.parameter_count();
    let mut idx = rng.random_range(0..total);
    for (t, tensor) in net.params.iter().enumerate() {
        if idx < tensor.len() {
            return (t, idx);
        }
        idx -= tensor.len();
    }
    unreachable!("index within parameter count")
}
