//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use rand::Rng as _;

use crate::seed;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centers: Vec<f64>,
    pub dim: usize,
    pub inertia: f64,
    pub assignments: Vec<usize>,
}

impl KMeans {
    pub fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    /// Distance from `x` to its nearest center.
    pub fn nearest_distance(&self, x: &[f64]) -> f64 {
        (0..self.k())
            .map(|k| sq_dist(x, self.center(k)))
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            restarts: 3,
        }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut seed::Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centers[..dim])).collect();
    while centers.len() < k * dim {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        let c = centers[start..].to_vec();
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(row(i), &c));
        }
    }
    centers
}

fn lloyd(points: &[f64], dim: usize, mut centers: Vec<f64>, params: &KMeansParams) -> KMeans {
    let n = points.len() / dim;
    let k = centers.len() / dim;
    let mut assignments = vec![0; n];
    for _ in 0..params.max_iters {
        for (i, a) in assignments.iter_mut().enumerate() {
            let x = &points[i * dim..(i + 1) * dim];
            *a = (0..k)
                .map(|c| (c, sq_dist(x, &centers[c * dim..(c + 1) * dim])))
                .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
                .0;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(&points[i * dim..(i + 1) * dim]) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            // an empty cluster keeps its previous center
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c * dim..(c + 1) * dim]
                .iter()
                .map(|s| s / counts[c] as f64)
                .collect();
            shift = shift.max(sq_dist(&new, &centers[c * dim..(c + 1) * dim]).sqrt());
            centers[c * dim..(c + 1) * dim].copy_from_slice(&new);
        }
        if shift <= params.tol {
            break;
        }
    }
    let inertia = (0..n)
        .map(|i| {
            let x = &points[i * dim..(i + 1) * dim];
            (0..k)
                .map(|c| sq_dist(x, &centers[c * dim..(c + 1) * dim]))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    for (i, a) in assignments.iter_mut().enumerate() {
        let x = &points[i * dim..(i + 1) * dim];
        *a = (0..k)
            .map(|c| (c, sq_dist(x, &centers[c * dim..(c + 1) * dim])))
            .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc })
            .0;
    }
    KMeans {
        centers,
        dim,
        inertia,
        assignments,
    }
}

/// Best of `params.restarts` runs by inertia. Requires `1 <= k <= n`.
pub fn kmeans(points: &[f64], dim: usize, k: usize, seed: u64, params: &KMeansParams) -> KMeans {
    assert!(dim > 0 && k > 0 && k <= points.len() / dim, "kmeans: need 1 <= k <= n");
    (0..params.restarts.max(1))
        .map(|r| {
            let mut rng = seed::rng_at(seed, &[r as u64]);
            lloyd(points, dim, plus_plus(points, dim, k, &mut rng), params)
        })
        .reduce(|best, cur| if cur.inertia < best.inertia { cur } else { best })
        .expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_centroid() {
        let pts = [0.0, 0.0, 2.0, 0.0, 1.0, 3.0];
        let km = kmeans(&pts, 2, 1, 0, &KMeansParams::default());
        assert!((km.center(0)[0] - 1.0).abs() < 1e-12);
        assert!((km.center(0)[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separates_two_blobs() {
        let mut pts = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            pts.extend([e, -e]);
            pts.extend([10.0 + e, 10.0 - e]);
        }
        let km = kmeans(&pts, 2, 2, 3, &KMeansParams::default());
        let mut xs: Vec<f64> = (0..2).map(|k| km.center(k)[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] - 0.045).abs() < 1e-9);
        assert!((xs[1] - 10.045).abs() < 1e-9);
        assert_ne!(km.assignments[0], km.assignments[1]);
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let pts = [1.0; 8];
        let km = kmeans(&pts, 2, 3, 1, &KMeansParams::default());
        assert_eq!(km.inertia, 0.0);
    }
}
