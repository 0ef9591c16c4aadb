use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ClassProportions, SfsConfig};
use super::train::BatchSampler;
use crate::datagen::LabeledImage;
use crate::error::{Result, SfsError};
use crate::gmm::{sample_counts, InternalDistribution};
use crate::network::{
    backward, classifier_ce, forward, sgd_step, Adam, ForwardPass, GradientSet, LatentField, SegNetwork,
    Upstream,
};
use crate::rng;
use crate::swd::{latent_field_to_points, sample_projections, scatter_gradient, swd};

/// One adaptation step; `total = ce + lambda * swd`, where `ce` is zero
/// when the classifier is frozen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptLogRow {
    pub step: usize,
    pub ce: f64,
    pub swd: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub net: SegNetwork,
    pub log: Vec<AdaptLogRow>,
}

/// Per-class counts of the predicted labels at the chosen pixels.
pub fn pseudo_label_counts(predictions: &[u8], chosen: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_classes];
    for &i in chosen {
        counts[predictions[i] as usize] += 1;
    }
    counts
}

/// Split `total` into integer counts proportional to `weights` (largest
/// remainder, ties to the lower index).
pub fn apportion(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let short = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Align the target embeddings with the internal distribution. Only the
/// source-trained network, the fitted mixture and unlabeled target images
/// are inputs; target masks are never read.
pub fn adapt(
    source_net: &SegNetwork,
    dist: &InternalDistribution,
    target_train: &[LabeledImage],
    cfg: &SfsConfig,
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    let shape = source_net.shape();
    if target_train.is_empty() {
        return Err(SfsError::InvalidInput("target batch is empty".into()));
    }
    if dist.dim != shape.latent_dim || dist.num_classes != shape.num_classes {
        return Err(SfsError::Dimension(format!(
            "mixture over {} classes in {} dims does not fit a network with K={} F={}",
            dist.num_classes, dist.dim, shape.num_classes, shape.latent_dim
        )));
    }
    let n = shape.pixels();
    let f = shape.latent_dim;
    let seeds = cfg.seeds();
    let mut net = source_net.clone();
    let mut adam = Adam::new(cfg.adapt_optimizer);
    let mut sampler = BatchSampler::new(target_train.len(), seeds.adapt);
    let mut step_rng = rng::derived(seeds.adapt, 1);
    let mut log = Vec::with_capacity(cfg.adapt_iters);
    let prior_counts = apportion(&dist.class_priors, cfg.pixels_per_batch);

    for step in 1..=cfg.adapt_iters {
        let batch = sampler.next_batch(cfg.adapt_batch_size);
        let passes: Vec<ForwardPass> = batch
            .par_iter()
            .map(|&i| forward(&net, &target_train[i]))
            .collect::<Result<_>>()?;

        let stacked = LatentField::stack(&passes.iter().map(|p| p.latent()).collect::<Vec<_>>())?;
        let picked = latent_field_to_points(&stacked, None, cfg.pixels_per_batch, &mut step_rng)?;
        // the pseudo-labels of the picked pixels set the class composition
        // of the pseudo-dataset
        let predictions: Vec<u8> = passes.iter().flat_map(|p| p.predictions()).collect();
        let counts = match cfg.class_proportions {
            ClassProportions::PseudoLabels => {
                pseudo_label_counts(&predictions, &picked.indices, shape.num_classes)
            }
            ClassProportions::SourcePriors => prior_counts.clone(),
        };
        let pseudo = sample_counts(dist, &counts, &mut step_rng)?;
        let bank = sample_projections(f, cfg.projections, &mut step_rng)?;

        let mut grads = GradientSet::zeros(&shape);
        let mut ce = 0.0;
        if cfg.finetune_classifier {
            let (loss, g) = classifier_ce(&net, &pseudo.points, &pseudo.labels, None)?;
            ce = loss;
            grads.add_assign(&g);
        }
        let aligned = swd(&picked.points, &pseudo.points, &bank)?;
        let total = ce + cfg.lambda * aligned.distance;
        if !total.is_finite() {
            return Err(SfsError::Numerical(format!(
                "adaptation loss became {total} at step {step}"
            )));
        }
        if cfg.lambda > 0.0 {
            let mut g_points = aligned.grad_a;
            g_points.iter_mut().for_each(|v| *v *= cfg.lambda);
            let field_grad = scatter_gradient(&g_points, &picked.indices, stacked.pixels(), f);
            let parts: Vec<GradientSet> = passes
                .par_iter()
                .enumerate()
                .map(|(b, pass)| {
                    let slice = &field_grad[b * n * f..(b + 1) * n * f];
                    backward(
                        &net,
                        pass,
                        &Upstream {
                            ce: None,
                            latent_grad: Some(slice),
                        },
                    )
                })
                .collect::<Result<_>>()?;
            for g in &parts {
                grads.add_assign(g);
            }
        }
        sgd_step(&mut net, &grads, &mut adam)?;
        log.push(AdaptLogRow {
            step,
            ce,
            swd: aligned.distance,
            total,
        });
    }
    Ok(AdaptOutcome { net, log })
}
