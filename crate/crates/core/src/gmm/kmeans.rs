//! k-means++ seeding.

use rand::Rng;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Pick `k` seed indices from `points` (row-major, `dim` columns) by D²
/// sampling. When every remaining point coincides with a seed, the lowest
/// unused index is taken.
pub fn kmeans_pp_seeds<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len() / dim;
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut seeds = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(seeds[0]))).collect();
    while seeds.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            // guard against landing on a zero-weight tail through rounding
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            (0..n).find(|i| !seeds.contains(i)).unwrap_or(0)
        };
        seeds.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(next)));
        }
    }
    seeds
}

/// Index of the nearest center, lowest index on ties.
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn seeds_are_distinct_on_separated_clusters() {
        let mut pts = Vec::new();
        for c in 0..3 {
            for i in 0..20 {
                pts.push(c as f64 * 100.0 + i as f64 * 0.01);
                pts.push(0.0);
            }
        }
        let seeds = kmeans_pp_seeds(&pts, 2, 3, &mut rng::seeded(4));
        let mut clusters: Vec<usize> = seeds.iter().map(|s| s / 20).collect();
        clusters.sort();
        assert_eq!(clusters, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_points_fall_back_to_lowest_index() {
        let pts = vec![1.0; 10];
        let seeds = kmeans_pp_seeds(&pts, 1, 3, &mut rng::seeded(0));
        assert_eq!(seeds.len(), 3);
        let mut sorted = seeds.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 3);
    }

    #[test]
    fn nearest_ties_pick_lowest() {
        let centers = vec![vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&[0.0], &centers), 0);
    }
}
