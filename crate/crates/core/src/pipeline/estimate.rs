use rand::seq::index;

use super::config::SfsConfig;
use crate::datagen::LabeledImage;
use crate::error::Result;
use crate::gmm::{fit_em, select_confident, FitOptions, InternalDistribution, SelectedPixelSet};
use crate::network::SegNetwork;
use crate::rng;

/// Cap every class at `max_per_class` points by sampling without
/// replacement; kept points stay in their original order.
pub fn subsample_selection(set: &SelectedPixelSet, max_per_class: usize, seed: u64) -> SelectedPixelSet {
    let dim = set.dim;
    let per_class = set
        .per_class
        .iter()
        .enumerate()
        .map(|(k, pts)| {
            let n = pts.len() / dim;
            if n <= max_per_class {
                return pts.clone();
            }
            let mut r = rng::derived(seed, k as u64);
            let mut keep = index::sample(&mut r, n, max_per_class).into_vec();
            keep.sort_unstable();
            keep.iter()
                .flat_map(|&i| pts[i * dim..(i + 1) * dim].iter().copied())
                .collect()
        })
        .collect();
    SelectedPixelSet {
        dim,
        rho: set.rho,
        per_class,
    }
}

/// Fraction of pixels carrying each label.
pub fn label_frequencies(images: &[LabeledImage], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for img in images {
        for &l in &img.mask {
            counts[l as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum::<usize>().max(1);
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Select confident source pixels and fit the class-conditional mixture.
/// The mixture's class priors are the label frequencies of the whole
/// source set, not of the confident subset. Returns the fit and the
/// per-class selected-pixel counts before subsampling.
pub fn estimate_internal(
    net: &SegNetwork,
    source_train: &[LabeledImage],
    cfg: &SfsConfig,
) -> Result<(InternalDistribution, Vec<usize>)> {
    let seeds = cfg.seeds();
    let selected = select_confident(net, source_train, cfg.rho)?;
    let counts = selected.counts();
    let fitted = subsample_selection(&selected, cfg.em.max_samples_per_class, seeds.em);
    let mut dist = fit_em(
        &fitted,
        &FitOptions {
            components_per_class: cfg.omega,
            reg: cfg.em.reg,
            max_iters: cfg.em.max_iters,
            tol: cfg.em.tol,
            seed: seeds.em,
        },
    )?;
    dist.class_priors = label_frequencies(source_train, dist.num_classes);
    Ok((dist, counts))
}
