//! Expectation-maximization for one class's Gaussian mixture.
//!
//! The covariance update adds `reg * I` to the weighted scatter. The
//! regularized matrix is only accepted when it does not lower the expected
//! complete-data log-likelihood relative to the previous covariance
//! (otherwise the previous one is kept), which makes every iteration a
//! generalized EM step and keeps the log-likelihood non-decreasing.

use nalgebra::DMatrix;
use rand::Rng;

use super::kmeans::{kmeans_pp_seeds, nearest};
use crate::error::{Result, SfsError};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    /// Row-major lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub chol: Vec<f64>,
    pub log_det: f64,
}

impl Gaussian {
    pub fn new(mean: &[f64], cov: &[f64]) -> Option<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return None;
        }
        let m = DMatrix::from_row_slice(d, d, cov);
        let l = m.cholesky()?.l();
        let mut chol = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                chol[i * d + j] = l[(i, j)];
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        if !log_det.is_finite() {
            return None;
        }
        Some(Self {
            mean: mean.to_vec(),
            chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Solve `L y = x - μ` and return `|y|²`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut y = [0.0f64; 64];
        let mut heap;
        let y: &mut [f64] = if d <= 64 {
            &mut y[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut total = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            for j in 0..i {
                s -= self.chol[i * d + j] * y[j];
            }
            y[i] = s / self.chol[i * d + i];
            total += y[i] * y[i];
        }
        total
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + self.mahalanobis_sq(x))
    }

    /// `μ + L ε` for a standard-normal vector `eps`.
    pub fn transform(&self, eps: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|i| self.mean[i] + (0..=i).map(|j| self.chol[i * d + j] * eps[j]).sum::<f64>())
            .collect()
    }

    /// `tr(Σ⁻¹ S)` for a symmetric row-major `S`.
    fn trace_inv_times(&self, s: &[f64]) -> f64 {
        let d = self.dim();
        let l = DMatrix::from_row_slice(d, d, &self.chol);
        let sm = DMatrix::from_row_slice(d, d, s);
        // Σ⁻¹ S = L⁻ᵀ L⁻¹ S, trace(L⁻ᵀ L⁻¹ S) = trace(L⁻¹ S L⁻ᵀ)
        let a = l
            .solve_lower_triangular(&sm)
            .expect("nonsingular factor");
        let b = l
            .solve_lower_triangular(&a.transpose())
            .expect("nonsingular factor");
        b.trace()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub components: usize,
    pub reg: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            components: 3,
            reg: 1e-4,
            max_iters: 200,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Result of fitting one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFit {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `dim x dim` covariances.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood after initialization and after every
    /// EM iteration.
    pub log_likelihood: Vec<f64>,
}

struct Moments {
    n_k: f64,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

/// Responsibility-weighted mean and (1/n_k) scatter.
fn weighted_moments(points: &[f64], dim: usize, resp: &[f64], stride: usize, col: usize) -> Moments {
    let n = points.len() / dim;
    let mut n_k = 0.0;
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        let r = resp[i * stride + col];
        n_k += r;
        for (m, x) in mean.iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
            *m += r * x;
        }
    }
    let mut scatter = vec![0.0; dim * dim];
    if n_k <= 0.0 {
        return Moments { n_k, mean, scatter };
    }
    mean.iter_mut().for_each(|m| *m /= n_k);
    let mut diff = vec![0.0; dim];
    for i in 0..n {
        let r = resp[i * stride + col];
        if r == 0.0 {
            continue;
        }
        for (d, (x, m)) in diff.iter_mut().zip(points[i * dim..(i + 1) * dim].iter().zip(&mean)) {
            *d = x - m;
        }
        for a in 0..dim {
            let ra = r * diff[a];
            for b in 0..=a {
                scatter[a * dim + b] += ra * diff[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..=a {
            let v = scatter[a * dim + b] / n_k;
            scatter[a * dim + b] = v;
            scatter[b * dim + a] = v;
        }
    }
    Moments { n_k, mean, scatter }
}

fn regularized(scatter: &[f64], dim: usize, reg: f64) -> Vec<f64> {
    let mut cov = scatter.to_vec();
    for a in 0..dim {
        cov[a * dim + a] += reg;
    }
    cov
}

fn e_step(points: &[f64], dim: usize, weights: &[f64], comps: &[Gaussian], resp: &mut [f64]) -> f64 {
    let k = comps.len();
    let n = points.len() / dim;
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        let x = &points[i * dim..(i + 1) * dim];
        for c in 0..k {
            row[c] = log_w[c] + comps[c].log_pdf(x);
        }
        let lse = log_sum_exp(&row);
        total += lse;
        for c in 0..k {
            resp[i * k + c] = (row[c] - lse).exp();
        }
    }
    total / n as f64
}

/// Fit a `components`-Gaussian mixture to `points` (row-major, `dim` wide).
pub fn fit_class<R: Rng>(points: &[f64], dim: usize, opts: &EmOptions, rng: &mut R) -> Result<ClassFit> {
    let n = points.len() / dim;
    let k = opts.components;
    if k == 0 || n < k || points.len() != n * dim {
        return Err(SfsError::InvalidInput(format!(
            "cannot fit {k} components to {n} points"
        )));
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    // hard assignment to k-means++ seeds
    let seeds = kmeans_pp_seeds(points, dim, k, rng);
    let centers: Vec<Vec<f64>> = seeds.iter().map(|&s| row(s).to_vec()).collect();
    let mut resp = vec![0.0; n * k];
    for i in 0..n {
        resp[i * k + nearest(row(i), &centers)] = 1.0;
    }
    let all = vec![1.0; n];
    let global = weighted_moments(points, dim, &all, 1, 0);

    let mut weights = vec![0.0; k];
    let mut comps = Vec::with_capacity(k);
    for c in 0..k {
        let m = weighted_moments(points, dim, &resp, k, c);
        let (mean, scatter, n_k) = if m.n_k > 0.0 {
            (m.mean, m.scatter, m.n_k)
        } else {
            (centers[c].clone(), global.scatter.clone(), 0.0)
        };
        weights[c] = n_k.max(f64::EPSILON) / n as f64;
        comps.push(
            Gaussian::new(&mean, &regularized(&scatter, dim, opts.reg))
                .ok_or_else(|| SfsError::Numerical("initial covariance not positive definite".into()))?,
        );
    }
    let wsum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wsum);

    let mut trace = Vec::new();
    for iter in 0..=opts.max_iters {
        let ll = e_step(points, dim, &weights, &comps, &mut resp);
        if !ll.is_finite() {
            return Err(SfsError::Numerical(format!(
                "non-finite log-likelihood at EM iteration {iter}"
            )));
        }
        let converged = trace.last().is_some_and(|&prev: &f64| ll - prev < opts.tol);
        trace.push(ll);
        if converged || iter == opts.max_iters {
            break;
        }

        // M-step
        for c in 0..k {
            let m = weighted_moments(points, dim, &resp, k, c);
            if m.n_k <= 1e-12 * n as f64 {
                // an emptied component keeps its parameters
                continue;
            }
            weights[c] = m.n_k / n as f64;
            let old = &comps[c];
            let keep_old = Gaussian {
                mean: m.mean.clone(),
                chol: old.chol.clone(),
                log_det: old.log_det,
            };
            let candidate = Gaussian::new(&m.mean, &regularized(&m.scatter, dim, opts.reg));
            // expected complete-data term, up to constants shared by both
            let q = |g: &Gaussian| -(g.log_det + g.trace_inv_times(&m.scatter));
            comps[c] = match candidate {
                Some(cand) if q(&cand) >= q(&keep_old) => cand,
                _ => keep_old,
            };
        }
        let wsum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= wsum);
    }

    let covariances = comps
        .iter()
        .map(|g| {
            let l = DMatrix::from_row_slice(dim, dim, &g.chol);
            let s = &l * l.transpose();
            let mut out = vec![0.0; dim * dim];
            for a in 0..dim {
                for b in 0..dim {
                    out[a * dim + b] = 0.5 * (s[(a, b)] + s[(b, a)]);
                }
            }
            out
        })
        .collect();
    Ok(ClassFit {
        weights,
        means: comps.iter().map(|g| g.mean.clone()).collect(),
        covariances,
        log_likelihood: trace,
    })
}
