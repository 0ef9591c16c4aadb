//! The internal distribution: a class-conditional Gaussian mixture over the
//! network's per-pixel embeddings, fitted on confidently classified source
//! pixels and later sampled in place of the source data.
//!
//! Component `c` (0-based) belongs to class `c / ω`. Weights are stored per
//! class (the `ω` weights of a class sum to one); a vector of class
//! proportions turns them into global mixture weights.

mod em;
mod io;
mod kmeans;

pub use em::{fit_class, log_sum_exp, ClassFit, EmOptions, Gaussian};
pub use io::{load_gmm, save_gmm, GmmComponent, GmmFile};
pub use kmeans::{kmeans_pp_seeds, nearest};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datagen::LabeledImage;
use crate::error::{Result, SfsError};
use crate::network::{forward, SegNetwork};
use crate::rng;

/// Source pixels whose predicted-class confidence exceeds `rho`, grouped by
/// their true label.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPixelSet {
    pub dim: usize,
    pub rho: f64,
    /// Per class, row-major `count x dim` latent vectors.
    pub per_class: Vec<Vec<f64>>,
}

impl SelectedPixelSet {
    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(|v| v.len() / self.dim).collect()
    }

    pub fn total(&self) -> usize {
        self.counts().iter().sum()
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(SfsError::Config(format!("rho {rho} outside [0, 1)")))
    }
}

/// Collect the latent vector of every pixel with `max_k p_k > rho`, filed
/// under the pixel's true label. Classes left empty are not an error here.
pub fn collect_confident(
    net: &SegNetwork,
    images: &[LabeledImage],
    rho: f64,
) -> Result<SelectedPixelSet> {
    check_rho(rho)?;
    let shape = net.shape();
    let (k, f) = (shape.num_classes, shape.latent_dim);
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            img.check_labels(k)?;
            let pass = forward(net, img)?;
            let latent = pass.latent();
            let mut buckets = vec![Vec::new(); k];
            for (i, conf) in pass.confidence().into_iter().enumerate() {
                if conf > rho {
                    buckets[img.mask[i] as usize].extend_from_slice(latent.pixel(i));
                }
            }
            Ok(buckets)
        })
        .collect::<Result<_>>()?;
    let mut per_class = vec![Vec::new(); k];
    for buckets in per_image {
        for (dst, src) in per_class.iter_mut().zip(buckets) {
            dst.extend(src);
        }
    }
    Ok(SelectedPixelSet {
        dim: f,
        rho,
        per_class,
    })
}

/// Like [`collect_confident`], but every class must keep at least one pixel.
pub fn select_confident(
    net: &SegNetwork,
    images: &[LabeledImage],
    rho: f64,
) -> Result<SelectedPixelSet> {
    let set = collect_confident(net, images, rho)?;
    let starved: Vec<usize> = set
        .counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(k, _)| k)
        .collect();
    if !starved.is_empty() {
        return Err(SfsError::StarvedClass {
            classes: starved,
            detail: format!("no source pixel has confidence above {rho}"),
        });
    }
    Ok(set)
}

/// Class-conditional Gaussian mixture with `ω` components per class.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalDistribution {
    pub num_classes: usize,
    pub components_per_class: usize,
    pub dim: usize,
    pub rho: f64,
    pub reg: f64,
    /// Class-conditional weights, `ω` per class, each block summing to one.
    pub weights: Vec<f64>,
    /// Class proportions of the fitting pixels; callers may replace them with
    /// label frequencies from the training masks.
    pub class_priors: Vec<f64>,
    components: Vec<Gaussian>,
    /// Per class, the EM log-likelihood trace (empty when loaded from disk).
    pub fit_traces: Vec<Vec<f64>>,
}

impl InternalDistribution {
    /// Assemble from explicit parameters; covariances are row-major.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_classes: usize,
        components_per_class: usize,
        dim: usize,
        rho: f64,
        reg: f64,
        weights: Vec<f64>,
        class_priors: Vec<f64>,
        means: &[Vec<f64>],
        covariances: &[Vec<f64>],
    ) -> Result<Self> {
        let total = num_classes * components_per_class;
        if num_classes == 0 || components_per_class == 0 || dim == 0 {
            return Err(SfsError::InvalidInput("empty mixture".into()));
        }
        if weights.len() != total || means.len() != total || covariances.len() != total {
            return Err(SfsError::Dimension(format!(
                "mixture with {num_classes} classes x {components_per_class} components needs {total} entries"
            )));
        }
        if class_priors.len() != num_classes {
            return Err(SfsError::Dimension("class prior count differs from K".into()));
        }
        for block in weights.chunks(components_per_class) {
            let s: f64 = block.iter().sum();
            if block.iter().any(|w| *w < 0.0) || (s - 1.0).abs() > 1e-6 {
                return Err(SfsError::InvalidInput(
                    "class-conditional weights must be nonnegative and sum to one".into(),
                ));
            }
        }
        let components = means
            .iter()
            .zip(covariances)
            .enumerate()
            .map(|(c, (m, s))| {
                if m.len() != dim {
                    return Err(SfsError::Dimension(format!("component {c} mean has wrong dim")));
                }
                Gaussian::new(m, s).ok_or_else(|| {
                    SfsError::Numerical(format!("component {c} covariance is not positive definite"))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            num_classes,
            components_per_class,
            dim,
            rho,
            reg,
            weights,
            class_priors,
            components,
            fit_traces: Vec::new(),
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn class_of(&self, component: usize) -> usize {
        component / self.components_per_class
    }

    pub fn component(&self, c: usize) -> &Gaussian {
        &self.components[c]
    }

    pub fn mean(&self, c: usize) -> &[f64] {
        &self.components[c].mean
    }

    /// Row-major covariance of component `c`, rebuilt from its factor.
    pub fn covariance(&self, c: usize) -> Vec<f64> {
        let g = &self.components[c];
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..=a {
                let v: f64 = (0..=b).map(|j| g.chol[a * d + j] * g.chol[b * d + j]).sum();
                out[a * d + b] = v;
                out[b * d + a] = v;
            }
        }
        out
    }

    /// Weighted mean of each class's components.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        (0..self.num_classes)
            .map(|k| {
                let mut m = vec![0.0; self.dim];
                for c in k * self.components_per_class..(k + 1) * self.components_per_class {
                    for (acc, v) in m.iter_mut().zip(self.mean(c)) {
                        *acc += self.weights[c] * v;
                    }
                }
                m
            })
            .collect()
    }

    /// Mean Euclidean distance over all pairs of class means.
    pub fn mean_class_separation(&self) -> f64 {
        let means = self.class_means();
        let mut total = 0.0;
        let mut pairs = 0;
        for a in 0..means.len() {
            for b in a + 1..means.len() {
                total += means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                pairs += 1;
            }
        }
        if pairs == 0 {
            0.0
        } else {
            total / pairs as f64
        }
    }

    /// `ln P_Z(z)` with class proportions taken from the fitted priors.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        self.log_density_with(z, &self.class_priors)
    }

    /// `ln Σ_c π_{class(c)} α_c N(z | μ_c, Σ_c)`.
    pub fn log_density_with(&self, z: &[f64], proportions: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.num_components())
            .map(|c| {
                let w = proportions[self.class_of(c)] * self.weights[c];
                if w > 0.0 {
                    w.ln() + self.components[c].log_pdf(z)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        log_sum_exp(&terms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub components_per_class: usize,
    pub reg: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            components_per_class: 3,
            reg: 1e-4,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Fit `ω` components per class with EM, classes in parallel.
pub fn fit_em(samples: &SelectedPixelSet, opts: &FitOptions) -> Result<InternalDistribution> {
    let omega = opts.components_per_class;
    let dim = samples.dim;
    if omega == 0 {
        return Err(SfsError::Config("components per class must be >= 1".into()));
    }
    let counts = samples.counts();
    let needed = omega * dim;
    let starved: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < needed)
        .map(|(k, _)| k)
        .collect();
    if !starved.is_empty() {
        return Err(SfsError::StarvedClass {
            classes: starved,
            detail: format!("EM needs at least {needed} samples per class, counts {counts:?}"),
        });
    }
    let fits: Vec<ClassFit> = samples
        .per_class
        .par_iter()
        .enumerate()
        .map(|(k, pts)| {
            let mut r = rng::derived(opts.seed, k as u64);
            fit_class(
                pts,
                dim,
                &EmOptions {
                    components: omega,
                    reg: opts.reg,
                    max_iters: opts.max_iters,
                    tol: opts.tol,
                    seed: opts.seed,
                },
                &mut r,
            )
        })
        .collect::<Result<_>>()?;

    let total: usize = counts.iter().sum();
    let priors = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let weights = fits.iter().flat_map(|f| f.weights.iter().copied()).collect();
    let means: Vec<Vec<f64>> = fits.iter().flat_map(|f| f.means.iter().cloned()).collect();
    let covs: Vec<Vec<f64>> = fits
        .iter()
        .flat_map(|f| f.covariances.iter().cloned())
        .collect();
    let mut dist = InternalDistribution::new(
        counts.len(),
        omega,
        dim,
        samples.rho,
        opts.reg,
        weights,
        priors,
        &means,
        &covs,
    )?;
    dist.fit_traces = fits.into_iter().map(|f| f.log_likelihood).collect();
    Ok(dist)
}

/// Labeled latent samples drawn from the internal distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDataset {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub points: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PseudoDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Draw `n` samples: class from `class_proportions`, component from the
/// class's weights, point from that Gaussian.
pub fn sample<R: Rng>(
    dist: &InternalDistribution,
    class_proportions: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<PseudoDataset> {
    if class_proportions.len() != dist.num_classes
        || class_proportions.iter().any(|p| !(*p >= 0.0))
        || (class_proportions.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(SfsError::InvalidInput(format!(
            "class proportions {class_proportions:?} are not a distribution over {} classes",
            dist.num_classes
        )));
    }
    let class_pick = WeightedIndex::new(class_proportions)
        .map_err(|e| SfsError::InvalidInput(format!("class proportions: {e}")))?;
    let omega = dist.components_per_class;
    let comp_picks: Vec<Option<WeightedIndex<f64>>> = dist
        .weights
        .chunks(omega)
        .map(|w| WeightedIndex::new(w).ok())
        .collect();

    let d = dist.dim;
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut eps = vec![0.0; d];
    for _ in 0..n {
        let k = class_pick.sample(rng);
        let within = comp_picks[k].as_ref().map_or(0, |w| w.sample(rng));
        let comp = dist.component(k * omega + within);
        eps.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
        points.extend(comp.transform(&eps));
        labels.push(k as u8);
    }
    Ok(PseudoDataset {
        dim: d,
        points,
        labels,
    })
}

/// Draw exactly `class_counts[k]` samples of each class `k`, classes in
/// index order. Matching the class composition of another point set this
/// way removes the multinomial count noise of [`sample`].
pub fn sample_counts<R: Rng>(
    dist: &InternalDistribution,
    class_counts: &[usize],
    rng: &mut R,
) -> Result<PseudoDataset> {
    if class_counts.len() != dist.num_classes {
        return Err(SfsError::InvalidInput(format!(
            "{} class counts for {} classes",
            class_counts.len(),
            dist.num_classes
        )));
    }
    let omega = dist.components_per_class;
    let d = dist.dim;
    let n: usize = class_counts.iter().sum();
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut eps = vec![0.0; d];
    for (k, &count) in class_counts.iter().enumerate() {
        let pick = WeightedIndex::new(&dist.weights[k * omega..(k + 1) * omega]).ok();
        for _ in 0..count {
            let within = pick.as_ref().map_or(0, |w| w.sample(rng));
            let comp = dist.component(k * omega + within);
            eps.iter_mut().for_each(|e| *e = StandardNormal.sample(rng));
            points.extend(comp.transform(&eps));
            labels.push(k as u8);
        }
    }
    Ok(PseudoDataset {
        dim: d,
        points,
        labels,
    })
}
