//! Sliced Wasserstein distance between equal-size point sets.
//!
//! Each slice projects both sets onto a unit direction, sorts the
//! projections and pairs them in order; the squared differences averaged
//! over points and slices give the squared-SWD estimate. Sorting breaks ties
//! by original index, so the pairing (and the gradient) is deterministic.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Result, SfsError};
use crate::network::LatentField;

/// `count` unit directions in `dim` dimensions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBank {
    pub dim: usize,
    pub directions: Vec<f64>,
}

impl ProjectionBank {
    /// Normalize user-supplied directions.
    pub fn from_directions(dim: usize, directions: Vec<f64>) -> Result<Self> {
        if dim == 0 || directions.is_empty() || directions.len() % dim != 0 {
            return Err(SfsError::Dimension(format!(
                "{} direction values do not split into {dim}-vectors",
                directions.len()
            )));
        }
        let mut directions = directions;
        for d in directions.chunks_exact_mut(dim) {
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(SfsError::InvalidInput("zero or non-finite direction".into()));
            }
            d.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { dim, directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, l: usize) -> &[f64] {
        &self.directions[l * self.dim..(l + 1) * self.dim]
    }
}

/// `count` i.i.d. directions uniform on the unit sphere.
pub fn sample_projections<R: Rng>(dim: usize, count: usize, rng: &mut R) -> Result<ProjectionBank> {
    if dim == 0 || count == 0 {
        return Err(SfsError::InvalidInput(
            "projection bank needs dim >= 1 and at least one direction".into(),
        ));
    }
    let mut directions = Vec::with_capacity(dim * count);
    let mut v = vec![0.0; dim];
    for _ in 0..count {
        loop {
            v.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                directions.extend(v.iter().map(|x| x / norm));
                break;
            }
        }
    }
    Ok(ProjectionBank { dim, directions })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwdResult {
    /// Squared sliced Wasserstein estimate.
    pub distance: f64,
    /// Gradient of `distance` with respect to each point of the first set,
    /// row-major like the input.
    pub grad_a: Vec<f64>,
}

fn sorted_order(proj: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proj.len()).collect();
    order.sort_by(|&i, &j| proj[i].total_cmp(&proj[j]).then(i.cmp(&j)));
    order
}

fn project(points: &[f64], theta: &[f64]) -> Vec<f64> {
    points
        .chunks_exact(theta.len())
        .map(|p| p.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect()
}

/// Squared SWD between `a` and `b` (both row-major `M x dim`) and its
/// gradient with respect to `a`.
pub fn swd(a: &[f64], b: &[f64], bank: &ProjectionBank) -> Result<SwdResult> {
    let dim = bank.dim;
    if a.len() % dim != 0 || b.len() % dim != 0 {
        return Err(SfsError::Dimension(format!(
            "point sets are not made of {dim}-vectors"
        )));
    }
    let m = a.len() / dim;
    if m != b.len() / dim {
        return Err(SfsError::Dimension(format!(
            "point sets differ in size: {m} vs {}",
            b.len() / dim
        )));
    }
    if m == 0 {
        return Err(SfsError::InvalidInput("point sets are empty".into()));
    }
    let l_count = bank.len();

    // per slice: (sum of squared gaps, gap for each point of `a`)
    let slices: Vec<(f64, Vec<f64>)> = (0..l_count)
        .into_par_iter()
        .map(|l| {
            let theta = bank.direction(l);
            let pa = project(a, theta);
            let pb = project(b, theta);
            let oa = sorted_order(&pa);
            let ob = sorted_order(&pb);
            let mut gaps = vec![0.0; m];
            let mut sq = 0.0;
            for (&i, &j) in oa.iter().zip(&ob) {
                let d = pa[i] - pb[j];
                gaps[i] = d;
                sq += d * d;
            }
            (sq, gaps)
        })
        .collect();

    let norm = (l_count * m) as f64;
    let mut distance = 0.0;
    let mut grad_a = vec![0.0; m * dim];
    for (l, (sq, gaps)) in slices.iter().enumerate() {
        distance += sq;
        let theta = bank.direction(l);
        for (g, gap) in grad_a.chunks_exact_mut(dim).zip(gaps) {
            let c = 2.0 * gap / norm;
            for (gv, t) in g.iter_mut().zip(theta) {
                *gv += c * t;
            }
        }
    }
    Ok(SwdResult {
        distance: distance / norm,
        grad_a,
    })
}

/// Pixel embeddings picked from a latent field, with their pixel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub dim: usize,
    /// Row-major `M x dim`.
    pub points: Vec<f64>,
    /// Row-major pixel index of each point, ascending.
    pub indices: Vec<usize>,
}

/// Subsample `m` pixel embeddings without replacement, optionally limited
/// to pixels where `eligible` is true. Chosen pixels come back in row-major
/// order; asking for every eligible pixel returns all of them.
pub fn latent_field_to_points<R: Rng>(
    latent: &LatentField,
    eligible: Option<&[bool]>,
    m: usize,
    rng: &mut R,
) -> Result<PixelSample> {
    let n = latent.pixels();
    if let Some(e) = eligible {
        if e.len() != n {
            return Err(SfsError::Dimension("eligibility mask size differs from field".into()));
        }
    }
    let pool: Vec<usize> = match eligible {
        Some(e) => (0..n).filter(|&i| e[i]).collect(),
        None => (0..n).collect(),
    };
    if m > pool.len() {
        return Err(SfsError::InvalidInput(format!(
            "asked for {m} points from {} pixels",
            pool.len()
        )));
    }
    let mut indices: Vec<usize> = if m == pool.len() {
        pool
    } else {
        index::sample(rng, pool.len(), m)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    };
    indices.sort_unstable();
    let points = indices
        .iter()
        .flat_map(|&i| latent.pixel(i).iter().copied())
        .collect();
    Ok(PixelSample {
        dim: latent.dim,
        points,
        indices,
    })
}

/// Place per-point gradients back at their pixels of a `pixels x dim`
/// field gradient; unselected pixels get zero.
pub fn scatter_gradient(grad_points: &[f64], indices: &[usize], pixels: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels * dim];
    for (g, &i) in grad_points.chunks_exact(dim).zip(indices) {
        for (o, v) in out[i * dim..(i + 1) * dim].iter_mut().zip(g) {
            *o += v;
        }
    }
    out
}
