//! Clustering of embeddings and cluster-quality statistics.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rayon::prelude::*;

use crate::autodiff::COSINE_EPS;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Tensor,
    /// Sum of squared distances to the assigned centroid after each
    /// assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn nearest(z: &Tensor, i: usize, centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(z.row(i), centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Seeded k-means++ initialization followed by Lloyd iterations until the
/// assignment stops changing or `max_iter` is reached. A cluster left empty
/// is reseeded at the point farthest from its centroid.
pub fn kmeans(z: &Tensor, k: usize, seed: u64, max_iter: usize) -> Result<KMeans> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut r = rng::stream(seed, "kmeans");
    let mut chosen = vec![r.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(z.row(i), z.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let x = r.random_range(0.0..total);
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if x < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // remaining points coincide with chosen centers
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[r.random_range(0..free.len())]
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(z.row(i), z.row(next)));
        }
    }
    let mut centroids = z.select_rows(&chosen);
    let mut assignment = vec![usize::MAX; n];
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut reseeded = false;
    loop {
        iterations += 1;
        let step: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(z, i, &centroids))
            .collect();
        let new: Vec<usize> = step.iter().map(|s| s.0).collect();
        objective.push(step.iter().map(|s| s.1).sum());
        let settled = new == assignment && !reseeded;
        assignment = new;
        if settled || iterations >= max_iter.max(1) {
            break;
        }
        let d = z.cols();
        let mut sums = Tensor::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in assignment.iter().enumerate() {
            counts[c] += 1;
            for (s, x) in sums.row_mut(c).iter_mut().zip(z.row(i)) {
                *s += x;
            }
        }
        reseeded = false;
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| step[a].1.total_cmp(&step[b].1).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids.row_mut(c).copy_from_slice(z.row(far));
                reseeded = true;
            } else {
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s / count as f64;
                }
            }
        }
    }
    Ok(KMeans {
        assignment,
        centroids,
        objective,
        iterations,
    })
}

/// Distinct labels relabeled to `0..k` in order of first appearance.
fn compact(assignment: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = assignment
        .iter()
        .map(|a| {
            let next = map.len();
            *map.entry(*a).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Mean silhouette coefficient in `[-1, 1]` with Euclidean distances;
/// points alone in their cluster score 0.
pub fn silhouette(z: &Tensor, assignment: &[usize]) -> Result<f64> {
    let n = z.rows();
    let (labels, k) = compact(assignment);
    if k < 2 {
        return Err(Error::invalid("silhouette needs at least two clusters"));
    }
    let mut sizes = vec![0usize; k];
    for &c in &labels {
        sizes[c] += 1;
    }
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sum = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sum[labels[j]] += sq_dist(z.row(i), z.row(j)).sqrt();
                }
            }
            let a = sum[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sum[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    // sequential sum keeps the result independent of thread scheduling
    Ok(per_point.iter().sum::<f64>() / n as f64)
}

/// `(Tr B / Tr W) (n - k) / (k - 1)`; `+inf` when the within-cluster
/// dispersion vanishes.
pub fn calinski_harabasz(z: &Tensor, assignment: &[usize]) -> Result<f64> {
    let (n, d) = z.shape();
    let (labels, k) = compact(assignment);
    if k < 2 || k >= n {
        return Err(Error::invalid(format!(
            "Calinski-Harabasz needs 2 <= k < n, got k={k}, n={n}"
        )));
    }
    let mut centroids = Tensor::zeros(k, d);
    let mut sizes = vec![0usize; k];
    let mut mean = vec![0.0; d];
    for i in 0..n {
        sizes[labels[i]] += 1;
        for (c, x) in centroids.row_mut(labels[i]).iter_mut().zip(z.row(i)) {
            *c += x;
        }
        for (m, x) in mean.iter_mut().zip(z.row(i)) {
            *m += x;
        }
    }
    for c in 0..k {
        for v in centroids.row_mut(c) {
            *v /= sizes[c] as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let between: f64 = (0..k)
        .map(|c| sizes[c] as f64 * sq_dist(centroids.row(c), &mean))
        .sum();
    let within: f64 = (0..n)
        .map(|i| sq_dist(z.row(i), centroids.row(labels[i])))
        .sum();
    if within == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(between / within * (n - k) as f64 / (k - 1) as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(COSINE_EPS);
    dot / (na * nb)
}

/// Clusterability surrogate. With `s_i` the cosine to the own centroid
/// minus the best cosine to another centroid and `σ_s` the population
/// standard deviation of `s`, returns `mean_i -(0.75 + 0.05 tanh(s_i / σ_s))`,
/// which lies in `[-0.80, -0.70]`.
pub fn self_cluster(z: &Tensor, assignment: &[usize]) -> Result<f64> {
    let (n, d) = z.shape();
    let (labels, k) = compact(assignment);
    if k < 2 {
        return Err(Error::invalid("selfCluster needs at least two clusters"));
    }
    let mut centroids = Tensor::zeros(k, d);
    let mut sizes = vec![0usize; k];
    for i in 0..n {
        sizes[labels[i]] += 1;
        for (c, x) in centroids.row_mut(labels[i]).iter_mut().zip(z.row(i)) {
            *c += x;
        }
    }
    for c in 0..k {
        for v in centroids.row_mut(c) {
            *v /= sizes[c] as f64;
        }
    }
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let own = cosine(z.row(i), centroids.row(labels[i]));
            let other = (0..k)
                .filter(|&c| c != labels[i])
                .map(|c| cosine(z.row(i), centroids.row(c)))
                .fold(f64::NEG_INFINITY, f64::max);
            own - other
        })
        .collect();
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64)
        .sqrt()
        .max(1e-12);
    Ok(s.iter()
        .map(|x| -(0.75 + 0.05 * (x / sd).tanh()))
        .sum::<f64>()
        / n as f64)
}

/// Effective rank `exp(-Σ p_i ln p_i)` with `p_i = σ_i / Σ σ_j` over the
/// singular values of `z`, taken as square roots of the eigenvalues of
/// `zᵀz`. Eigenvalues below `1e-12` times the largest count as zero.
///
/// Evaluated as `2^(-Σ p_i log2 p_i)`, which is exact when the spectrum is
/// flat over a power-of-two count.
pub fn rankme(z: &Tensor) -> Result<f64> {
    let d = z.cols();
    let gram = z.transpose().matmul(z)?;
    let m = DMatrix::from_row_slice(d, d, gram.data());
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::invalid("rankme of a zero matrix"));
    }
    let sigma: Vec<f64> = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l > 1e-12 * top)
        .map(|l| l.sqrt())
        .collect();
    let total: f64 = sigma.iter().sum();
    let bits: f64 = sigma.iter().map(|s| s / total).map(|p| -p * p.log2()).sum();
    Ok(bits.exp2())
}
