use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SfsConfig;
use crate::datagen::{augment, LabeledImage};
use crate::error::{Result, SfsError};
use crate::metrics::{dice, score_image, ClassScores};
use crate::network::{backward, ce_loss, forward, sgd_step, Adam, CeTerm, GradientSet, SegNetwork, Upstream};
use crate::rng::{self, SfsRng};

/// One logged source-training step; `val_dice` only on validation steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceLogRow {
    pub step: usize,
    pub ce: f64,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the best validation macro Dice.
    pub net: SegNetwork,
    pub best_step: usize,
    pub best_val_dice: f64,
    pub final_loss: f64,
    pub log: Vec<SourceLogRow>,
}

/// Cycles through a dataset in freshly shuffled epochs.
pub(crate) struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: SfsRng,
}

impl BatchSampler {
    pub(crate) fn new(len: usize, seed: u64) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
            rng: rng::seeded(seed),
        }
    }

    pub(crate) fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// `N / (K n_k)` per class over all labels; absent classes get weight 0.
pub fn inverse_frequency_weights(images: &[LabeledImage], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for img in images {
        for &l in &img.mask {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else {
                total as f64 / (num_classes * c) as f64
            }
        })
        .collect()
}

/// Macro Dice (classes `1..K`) averaged over images; skips the surface
/// distances, so it is cheap enough for frequent validation.
pub fn macro_dice(net: &SegNetwork, images: &[LabeledImage]) -> Result<f64> {
    let k = net.shape().num_classes;
    let scores: Vec<ClassScores> = images
        .par_iter()
        .map(|img| {
            let pred = net.predict(img)?;
            let per_class = (0..k as u8)
                .map(|c| dice(&pred, &img.mask, c))
                .collect::<Result<_>>()?;
            Ok(ClassScores {
                dice: per_class,
                assd: vec![None; k],
                macro_dice: None,
                macro_assd: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClassScores::aggregate(&scores, 1).macro_dice.unwrap_or(0.0))
}

/// Mean cross-entropy of a batch and its gradient, reduced in batch order.
pub fn batch_gradient(
    net: &SegNetwork,
    batch: &[LabeledImage],
    class_weights: Option<&[f64]>,
) -> Result<(f64, GradientSet)> {
    let k = net.shape().num_classes;
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, GradientSet)> = batch
        .par_iter()
        .map(|img| {
            let pass = forward(net, img)?;
            let loss = ce_loss(pass.probs(), &img.mask, k, class_weights)?;
            let up = Upstream {
                ce: Some(CeTerm {
                    mask: &img.mask,
                    class_weights,
                    scale,
                }),
                latent_grad: None,
            };
            Ok((loss, backward(net, &pass, &up)?))
        })
        .collect::<Result<_>>()?;
    let mut total = GradientSet::zeros(&net.shape());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l * scale;
        total.add_assign(g);
    }
    Ok((loss, total))
}

/// Supervised training with Adam on labeled images, keeping the parameters
/// with the best validation macro Dice (checked every `eval_every` steps
/// and after the last step).
pub fn train_source(
    cfg: &SfsConfig,
    train: &[LabeledImage],
    val: &[LabeledImage],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(SfsError::InvalidInput("training and validation sets must be non-empty".into()));
    }
    let shape = cfg.net_shape();
    let k = shape.num_classes;
    for img in train.iter().chain(val) {
        img.check_labels(k)?;
    }
    let seeds = cfg.seeds();
    let mut net = SegNetwork::new(shape, seeds.init)?;
    let mut adam = Adam::new(cfg.source_optimizer);
    let weights = cfg
        .class_weighted_ce
        .then(|| inverse_frequency_weights(train, k));
    let mut sampler = BatchSampler::new(train.len(), seeds.source_batches);
    let mut aug_rng = rng::derived(seeds.source_batches, 1);

    let mut best: Option<(f64, usize, SegNetwork)> = None;
    let mut log = Vec::with_capacity(cfg.source_iters);
    let mut final_loss = f64::NAN;
    for step in 1..=cfg.source_iters {
        let batch: Vec<LabeledImage> = sampler
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| match &cfg.augment {
                Some(a) => augment(&train[i], a, &mut aug_rng),
                None => train[i].clone(),
            })
            .collect();
        let (loss, grads) = batch_gradient(&net, &batch, weights.as_deref())?;
        if !loss.is_finite() {
            return Err(SfsError::Numerical(format!(
                "source training loss became {loss} at step {step}"
            )));
        }
        sgd_step(&mut net, &grads, &mut adam)?;
        final_loss = loss;

        let mut row = SourceLogRow {
            step,
            ce: loss,
            val_dice: None,
        };
        if step % cfg.eval_every == 0 || step == cfg.source_iters {
            let d = macro_dice(&net, val)?;
            row.val_dice = Some(d);
            if best.as_ref().is_none_or(|(b, _, _)| d > *b) {
                best = Some((d, step, net.clone()));
            }
        }
        log.push(row);
    }
    let (best_val_dice, best_step, net) = best.expect("at least one validation");
    Ok(TrainOutcome {
        net,
        best_step,
        best_val_dice,
        final_loss,
        log,
    })
}

/// Full per-class scores of `net` on `images`.
pub fn score_set(net: &SegNetwork, images: &[LabeledImage]) -> Result<Vec<ClassScores>> {
    let s = net.shape();
    images
        .par_iter()
        .map(|img| {
            let pred = net.predict(img)?;
            score_image(&pred, &img.mask, s.width, s.height, s.num_classes, 1)
        })
        .collect()
}
