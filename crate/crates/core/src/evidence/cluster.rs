//! PCA reduction followed by Gaussian mixture clustering with the number
//! of components chosen by BIC.
//!
//! Inputs are processed in a canonical (lexicographic) order so the
//! partition does not depend on input order.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub max_components: usize,
    pub regularization: f64,
    pub max_dims: usize,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            max_components: 16,
            regularization: 1e-6,
            max_dims: 8,
            max_iter: 300,
            restarts: 4,
            seed: 0,
        }
    }
}

/// Diagonal-covariance mixture fitted to reduced points.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub components: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
}

impl GmmFit {
    /// Free parameters: means and variances per component plus M−1 weights.
    pub fn parameter_count(&self) -> usize {
        let d = self.means.first().map_or(0, Vec::len);
        self.components * 2 * d + self.components - 1
    }

    /// ln(N)·m − 2·ln L.
    pub fn bic(&self, n: usize) -> f64 {
        (n as f64).ln() * self.parameter_count() as f64 - 2.0 * self.log_likelihood
    }

    fn log_constants(&self) -> Vec<f64> {
        (0..self.components)
            .map(|k| {
                self.weights[k].ln()
                    - 0.5 * self.variances[k].iter().map(|v| (2.0 * std::f64::consts::PI * v).ln()).sum::<f64>()
            })
            .collect()
    }

    fn log_weighted_density_with(&self, constant: f64, k: usize, x: &[f64]) -> f64 {
        let mut s = constant;
        for ((xi, mi), vi) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
            s -= 0.5 * (xi - mi) * (xi - mi) / vi;
        }
        s
    }

    /// Component with the highest weighted density at `x`; ties go to the
    /// lower index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let consts = self.log_constants();
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 0..self.components {
            let d = self.log_weighted_density_with(consts[k], k, x);
            if d > best.0 {
                best = (d, k);
            }
        }
        best.1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Member indices (into the input) per cluster, each ascending; clusters
    /// ordered by their smallest member.
    pub clusters: Vec<Vec<usize>>,
    pub components: usize,
    /// (M, BIC) for every candidate M.
    pub sweep: Vec<(usize, f64)>,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Input indices in canonical order.
fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    idx
}

/// Projects points onto their top `target` principal axes. Axis signs are
/// fixed so the largest-magnitude loading is positive.
pub fn reduce_dimensions(points: &[Vec<f64>], target: usize) -> Vec<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let d = points[0].len();
    let target = target.min(d);
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order[..target]
        .iter()
        .map(|&c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (0..n)
        .map(|i| axes.iter().map(|a| (0..d).map(|j| x[(i, j)] * a[j]).sum()).collect())
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn kmeanspp(points: &[Vec<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < m {
        let d: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut t = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if t < *di {
                    pick = i;
                    break;
                }
                t -= di;
            }
            pick
        };
        centers.push(points[next].clone());
    }
    centers
}

/// Refines the seeds with k-means and sets weights and variances from the
/// resulting hard clusters.
fn lloyd_init(points: &[Vec<f64>], fit: &mut GmmFit, global_var: &[f64], reg: f64) {
    let m = fit.components;
    let d = global_var.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (k, c) in fit.means.iter().enumerate() {
                let dist = sq_dist(p, c);
                if dist < best.0 {
                    best = (dist, k);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        for k in 0..m {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
            if !members.is_empty() {
                fit.means[k] = (0..d).map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    for k in 0..m {
        let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
        fit.weights[k] = (members.len().max(1)) as f64 / (points.len() + m) as f64;
        fit.variances[k] = if members.len() < 2 {
            global_var.to_vec()
        } else {
            (0..d)
                .map(|j| members.iter().map(|p| (p[j] - fit.means[k][j]).powi(2)).sum::<f64>() / members.len() as f64 + reg)
                .collect()
        };
    }
    let total: f64 = fit.weights.iter().sum();
    fit.weights.iter_mut().for_each(|w| *w /= total);
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn em(points: &[Vec<f64>], m: usize, cfg: &ClusterConfig, rng: &mut ChaCha8Rng) -> GmmFit {
    let n = points.len();
    let d = points[0].len();
    let global_mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| points.iter().map(|p| (p[j] - global_mean[j]).powi(2)).sum::<f64>() / n as f64 + cfg.regularization)
        .collect();
    let mut fit = GmmFit {
        components: m,
        weights: vec![1.0 / m as f64; m],
        means: kmeanspp(points, m, rng),
        variances: vec![global_var.clone(); m],
        log_likelihood: f64::NEG_INFINITY,
    };
    lloyd_init(points, &mut fit, &global_var, cfg.regularization);
    let mut resp = vec![vec![0.0; m]; n];
    for _ in 0..cfg.max_iter {
        let mut ll = 0.0;
        let consts = fit.log_constants();
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..m).map(|k| fit.log_weighted_density_with(consts[k], k, p)).collect();
            let z = log_sum_exp(&logs);
            ll += z;
            for k in 0..m {
                resp[i][k] = (logs[k] - z).exp();
            }
        }
        let converged = (ll - fit.log_likelihood).abs() <= 1e-9 * ll.abs().max(1.0);
        fit.log_likelihood = ll;
        if converged {
            break;
        }
        for k in 0..m {
            let nk: f64 = resp.iter().map(|r| r[k]).sum();
            if nk < 1e-12 {
                fit.weights[k] = 1e-12;
                fit.variances[k] = global_var.clone();
                continue;
            }
            fit.weights[k] = nk / n as f64;
            for j in 0..d {
                let mu = resp.iter().zip(points).map(|(r, p)| r[k] * p[j]).sum::<f64>() / nk;
                fit.means[k][j] = mu;
            }
            for j in 0..d {
                let var = resp
                    .iter()
                    .zip(points)
                    .map(|(r, p)| r[k] * (p[j] - fit.means[k][j]).powi(2))
                    .sum::<f64>()
                    / nk;
                fit.variances[k][j] = var + cfg.regularization;
            }
        }
    }
    // Final likelihood under the returned parameters.
    let consts = fit.log_constants();
    fit.log_likelihood = points
        .iter()
        .map(|p| log_sum_exp(&(0..m).map(|k| fit.log_weighted_density_with(consts[k], k, p)).collect::<Vec<_>>()))
        .sum();
    fit
}

/// Best of `cfg.restarts` EM runs for exactly `m` components.
pub fn fit_gmm(points: &[Vec<f64>], m: usize, cfg: &ClusterConfig) -> GmmFit {
    assert!(m >= 1 && m <= points.len(), "need 1 <= m <= n");
    let mut best: Option<GmmFit> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ ((m as u64) << 32) ^ r as u64);
        let fit = em(points, m, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| fit.log_likelihood > b.log_likelihood) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

/// Reduced points in canonical order, plus that order.
pub fn prepare_points(embeddings: &[Vec<f64>], cfg: &ClusterConfig) -> (Vec<Vec<f64>>, Vec<usize>) {
    let order = canonical_order(embeddings);
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| embeddings[i].clone()).collect();
    let dims = cfg.max_dims.min(embeddings.len().saturating_sub(1)).max(1);
    (reduce_dimensions(&sorted, dims), order)
}

/// Clusters embeddings; M ranges over 1..=min(N, max_components) and the
/// fit with the lowest BIC wins (ties to the smaller M).
pub fn embed_and_cluster(embeddings: &[Vec<f64>], cfg: &ClusterConfig) -> Clustering {
    let n = embeddings.len();
    if n <= 1 {
        return Clustering {
            clusters: if n == 1 { vec![vec![0]] } else { Vec::new() },
            components: n,
            sweep: Vec::new(),
        };
    }
    let (reduced, order) = prepare_points(embeddings, cfg);
    let mut sweep = Vec::new();
    let mut best: Option<(f64, GmmFit)> = None;
    for m in 1..=n.min(cfg.max_components) {
        let fit = fit_gmm(&reduced, m, cfg);
        let bic = fit.bic(n);
        sweep.push((m, bic));
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    let (_, fit) = best.expect("non-empty sweep");
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); fit.components];
    for (pos, p) in reduced.iter().enumerate() {
        groups[fit.assign(p)].push(order[pos]);
    }
    let mut clusters: Vec<Vec<usize>> = groups
        .into_iter()
        .filter(|g| !g.is_empty())
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    clusters.sort();
    Clustering {
        clusters,
        components: fit.components,
        sweep,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        centers
            .iter()
            .flat_map(|c| {
                (0..per)
                    .map(|_| c.iter().map(|x| x + noise.sample(&mut rng)).collect::<Vec<_>>())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn single_point_is_one_cluster() {
        let c = embed_and_cluster(&[vec![1.0, 0.0]], &ClusterConfig::default());
        assert_eq!(c.clusters, vec![vec![0]]);
    }

    #[test]
    fn duplicates_form_one_cluster() {
        let pts = vec![vec![0.3, 0.4, 0.5]; 6];
        let c = embed_and_cluster(&pts, &ClusterConfig::default());
        assert_eq!(c.clusters, vec![(0..6).collect::<Vec<_>>()]);
        let bic1 = c.sweep[0].1;
        assert!(c.sweep[1..].iter().all(|(_, b)| *b > bic1));
    }

    #[test]
    fn pca_keeps_dominant_axis() {
        let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 0.01 * (i % 2) as f64, 0.0]).collect();
        let r = reduce_dimensions(&pts, 1);
        let span = r.iter().map(|p| p[0]).fold(f64::MIN, f64::max) - r.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
        assert!((span - 9.0).abs() < 1e-3);
    }

    #[test]
    fn two_blobs_split_cleanly() {
        let mut a = vec![0.0; 16];
        let mut b = vec![0.0; 16];
        a[0] = 1.0;
        b[0] = 1.0;
        b[1] = 0.1;
        let pts = blobs(&[a, b], 20, 0.01, 3);
        let c = embed_and_cluster(&pts, &ClusterConfig::default());
        assert_eq!(c.components, 2);
        assert_eq!(c.clusters, vec![(0..20).collect::<Vec<_>>(), (20..40).collect::<Vec<_>>()]);
    }

    #[test]
    fn permutation_does_not_change_partition() {
        let mut a = vec![0.0; 8];
        let mut b = vec![0.0; 8];
        a[2] = 1.0;
        b[3] = 1.0;
        let pts = blobs(&[a, b], 8, 0.05, 9);
        let base = embed_and_cluster(&pts, &ClusterConfig::default());
        let mut perm: Vec<usize> = (0..pts.len()).collect();
        perm.reverse();
        perm.swap(1, 7);
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let other = embed_and_cluster(&shuffled, &ClusterConfig::default());
        let mapped: Vec<Vec<usize>> = other
            .clusters
            .iter()
            .map(|c| {
                let mut m: Vec<usize> = c.iter().map(|&i| perm[i]).collect();
                m.sort();
                m
            })
            .collect();
        let mut mapped = mapped;
        mapped.sort();
        assert_eq!(mapped, base.clusters);
    }
}
