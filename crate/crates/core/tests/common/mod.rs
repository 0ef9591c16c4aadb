//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use sfs::datagen::LabeledImage;
use sfs::gmm::SelectedPixelSet;
use sfs::network::{
    backward, ce_loss, forward, random_coordinate, CeTerm, NetShape, SegNetwork, Upstream,
};
use sfs::rng;
use sfs::swd::{sample_projections, swd, ProjectionBank};

pub const NET_STEP: f64 = 1e-4;
pub const NET_REL_TOL: f64 = 1e-3;
pub const SWD_STEP: f64 = 1e-5;
pub const SWD_REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn normal(r: &mut rng::SfsRng) -> f64 {
    StandardNormal.sample(r)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
    /// `(description, relative error)` for every coordinate over tolerance.
    pub failures: Vec<(String, f64)>,
}

pub fn small_shape() -> NetShape {
    NetShape {
        width: 8,
        height: 8,
        enc_channels: 4,
        latent_dim: 3,
        num_classes: 3,
    }
}

pub fn random_image(shape: &NetShape, seed: u64) -> LabeledImage {
    let mut r = rng::seeded(seed);
    let n = shape.width * shape.height;
    let pixels = (0..n).map(|_| normal(&mut r)).collect();
    let mask = (0..n)
        .map(|_| r.random_range(0..shape.num_classes as u8))
        .collect();
    LabeledImage::new(shape.width, shape.height, pixels, mask).unwrap()
}

/// `0.7 * CE + <G, latent>`, the two upstream paths used in training.
fn composite_loss(net: &SegNetwork, image: &LabeledImage, weights: &[f64], g: &[f64]) -> f64 {
    let pass = forward(net, image).unwrap();
    let k = net.shape().num_classes;
    let ce = ce_loss(pass.probs(), &image.mask, k, Some(weights)).unwrap();
    let lat = pass.latent();
    0.7 * ce + lat.values.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
}

/// Central differences on `per_seed` random parameters of `seeds` random
/// networks, each with perturbed biases and a random latent upstream.
pub fn network_fd(seeds: std::ops::Range<u64>, per_seed: usize) -> FdReport {
    let shape = small_shape();
    let mut report = FdReport::default();
    for seed in seeds {
        let mut net = SegNetwork::new(shape, 100 + seed).unwrap();
        // nonzero biases so every bias gradient is exercised off the origin
        let mut r = rng::seeded(200 + seed);
        for t in net.tensors_mut() {
            t.iter_mut().for_each(|v| *v += 0.05 * normal(&mut r));
        }
        let image = random_image(&shape, 300 + seed);
        let weights = [0.5, 1.0, 2.0];
        let g: Vec<f64> = (0..shape.width * shape.height * shape.latent_dim)
            .map(|_| 0.1 * normal(&mut r))
            .collect();

        let pass = forward(&net, &image).unwrap();
        let analytic = backward(
            &net,
            &pass,
            &Upstream {
                ce: Some(CeTerm {
                    mask: &image.mask,
                    class_weights: Some(&weights),
                    scale: 0.7,
                }),
                latent_grad: Some(&g),
            },
        )
        .unwrap();

        for _ in 0..per_seed {
            let (t, i) = random_coordinate(&net, &mut r);
            let orig = net.tensors()[t][i];
            net.tensors_mut()[t][i] = orig + NET_STEP;
            let up = composite_loss(&net, &image, &weights, &g);
            net.tensors_mut()[t][i] = orig - NET_STEP;
            let down = composite_loss(&net, &image, &weights, &g);
            net.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * NET_STEP);
            let e = rel_err(analytic.tensors[t][i], numeric);
            report.worst = report.worst.max(e);
            if e > NET_REL_TOL {
                let what = format!(
                    "seed {seed} tensor {t} index {i}: analytic {} numeric {numeric}",
                    analytic.tensors[t][i]
                );
                report.failures.push((what, e));
            }
            report.checked += 1;
        }
    }
    report
}

/// The permutation of each slice's sorted projections; the estimate is
/// differentiable only where this is locally constant.
fn slice_orders(a: &[f64], bank: &ProjectionBank) -> Vec<Vec<usize>> {
    (0..bank.len())
        .map(|l| {
            let theta = bank.direction(l);
            let proj: Vec<f64> = a
                .chunks_exact(bank.dim)
                .map(|p| p.iter().zip(theta).map(|(x, t)| x * t).sum())
                .collect();
            let mut order: Vec<usize> = (0..proj.len()).collect();
            order.sort_by(|&i, &j| proj[i].total_cmp(&proj[j]).then(i.cmp(&j)));
            order
        })
        .collect()
}

/// Central differences on `count` coordinates of a 64-point, 8-dimensional
/// instance. Coordinates whose perturbation reorders a slice are skipped.
pub fn swd_fd(count: usize) -> FdReport {
    let (m, f, l) = (64, 8, 32);
    let mut r = rng::seeded(41);
    let a: Vec<f64> = (0..m * f).map(|_| normal(&mut r)).collect();
    let b: Vec<f64> = (0..m * f).map(|_| 0.5 + 2.0 * normal(&mut r)).collect();
    let bank = sample_projections(f, l, &mut r).unwrap();
    let analytic = swd(&a, &b, &bank).unwrap();
    let base_orders = slice_orders(&a, &bank);

    let mut report = FdReport::default();
    while report.checked < count {
        let c = r.random_range(0..m * f);
        let mut plus = a.clone();
        plus[c] += SWD_STEP;
        let mut minus = a.clone();
        minus[c] -= SWD_STEP;
        if slice_orders(&plus, &bank) != base_orders || slice_orders(&minus, &bank) != base_orders {
            report.skipped += 1;
            continue;
        }
        let numeric = (swd(&plus, &b, &bank).unwrap().distance
            - swd(&minus, &b, &bank).unwrap().distance)
            / (2.0 * SWD_STEP);
        let e = rel_err(analytic.grad_a[c], numeric);
        report.worst = report.worst.max(e);
        if e > SWD_REL_TOL {
            let what = format!("coordinate {c}: analytic {} numeric {numeric}", analytic.grad_a[c]);
            report.failures.push((what, e));
        }
        report.checked += 1;
    }
    report
}

/// The fixture for the descent check: a standard-normal cloud pulled towards
/// a shifted, narrower one with Adam. Returns the distance before and after
/// 200 steps.
pub fn swd_descent() -> (f64, f64) {
    use sfs::network::{Adam, AdamConfig};
    let (m, dim) = (32, 4);
    let mut r = rng::seeded(2);
    let mut a = vec![(0..m * dim).map(|_| normal(&mut r)).collect::<Vec<f64>>()];
    let b: Vec<f64> = (0..m * dim).map(|_| 3.0 + 0.5 * normal(&mut r)).collect();
    let bank = sample_projections(dim, 64, &mut r).unwrap();
    let start = swd(&a[0], &b, &bank).unwrap().distance;
    let mut adam = Adam::new(AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    });
    for _ in 0..200 {
        let g = swd(&a[0], &b, &bank).unwrap().grad_a;
        adam.update(&mut a, &[g]).unwrap();
    }
    (start, swd(&a[0], &b, &bank).unwrap().distance)
}

pub const SIDE: usize = 16;

/// Blobs of random rectangles, so masks have real boundaries rather than
/// salt-and-pepper noise.
pub fn random_mask(r: &mut rng::SfsRng, k: u8) -> Vec<u8> {
    let mut m = vec![0u8; SIDE * SIDE];
    for _ in 0..r.random_range(1..6) {
        let (x0, y0) = (r.random_range(0..SIDE), r.random_range(0..SIDE));
        let (w, h) = (r.random_range(1..8), r.random_range(1..8));
        let label = r.random_range(0..k);
        for y in y0..(y0 + h).min(SIDE) {
            for x in x0..(x0 + w).min(SIDE) {
                m[y * SIDE + x] = label;
            }
        }
    }
    m
}

pub fn oracle_dice(p: &[u8], g: &[u8], k: u8) -> Option<f64> {
    let inter = p.iter().zip(g).filter(|(a, b)| **a == k && **b == k).count();
    let total = p.iter().filter(|&&a| a == k).count() + g.iter().filter(|&&b| b == k).count();
    (total > 0).then(|| 2.0 * inter as f64 / total as f64)
}

fn oracle_boundary(m: &[u8], k: u8) -> Vec<(i64, i64)> {
    let at = |x: i64, y: i64| -> Option<u8> {
        (x >= 0 && y >= 0 && x < SIDE as i64 && y < SIDE as i64).then(|| m[y as usize * SIDE + x as usize])
    };
    let mut out = Vec::new();
    for y in 0..SIDE as i64 {
        for x in 0..SIDE as i64 {
            if at(x, y) != Some(k) {
                continue;
            }
            let offsets = [(1, 0), (-1, 0), (0, 1), (0, -1)];
            if offsets.iter().any(|(dx, dy)| at(x + dx, y + dy) != Some(k)) {
                out.push((x, y));
            }
        }
    }
    out
}

pub fn oracle_assd(p: &[u8], g: &[u8], k: u8) -> Option<f64> {
    let (bp, bg) = (oracle_boundary(p, k), oracle_boundary(g, k));
    if bp.is_empty() || bg.is_empty() {
        return None;
    }
    let min_dist = |a: (i64, i64), set: &[(i64, i64)]| {
        let best = set
            .iter()
            .map(|b| (a.0 - b.0).pow(2) + (a.1 - b.1).pow(2))
            .min()
            .unwrap();
        (best as f64).sqrt()
    };
    let total: f64 = bp.iter().map(|&a| min_dist(a, &bg)).sum::<f64>()
        + bg.iter().map(|&b| min_dist(b, &bp)).sum::<f64>();
    Some(total / (bp.len() + bg.len()) as f64)
}

pub fn cluster(center: &[f64], std: f64, n: usize, r: &mut rng::SfsRng) -> Vec<f64> {
    let noise = Normal::new(0.0, std).unwrap();
    (0..n)
        .flat_map(|_| center.iter().map(|c| c + noise.sample(r)).collect::<Vec<_>>())
        .collect()
}

pub fn single_class(points: Vec<f64>, dim: usize) -> SelectedPixelSet {
    SelectedPixelSet {
        dim,
        rho: 0.0,
        per_class: vec![points],
    }
}

/// 1000 points in two tight clusters at (0,0) and (10,10).
pub fn two_cluster_points() -> Vec<f64> {
    let mut r = rng::seeded(12);
    let mut pts = cluster(&[0.0, 0.0], 0.1, 500, &mut r);
    pts.extend(cluster(&[10.0, 10.0], 0.1, 500, &mut r));
    pts
}

/// 400 correlated three-dimensional points.
pub fn correlated_points() -> Vec<f64> {
    let mut r = rng::seeded(5);
    (0..400)
        .flat_map(|_| {
            let (a, b, c) = (normal(&mut r), normal(&mut r), normal(&mut r));
            vec![1.0 + a, -2.0 + 0.5 * a + b, 3.0 * c]
        })
        .collect()
}

/// Biased per-dimension sample mean and covariance (row-major).
pub fn sample_moments(pts: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (pts.len() / dim) as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|j| pts.chunks_exact(dim).map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for a in 0..dim {
        for b in 0..dim {
            cov[a * dim + b] = pts
                .chunks_exact(dim)
                .map(|p| (p[a] - mean[a]) * (p[b] - mean[b]))
                .sum::<f64>()
                / n;
        }
    }
    (mean, cov)
}

pub fn is_monotone(trace: &[f64]) -> bool {
    !trace.is_empty() && trace.windows(2).all(|w| w[1] >= w[0] - 1e-9)
}
