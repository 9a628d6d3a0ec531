use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{CsrMatrix, Tensor};

/// Eigenvalues below this are treated as zero.
const ZERO_EIG: f64 = 1e-9;
/// Largest graph handled by the dense eigensolver.
const DENSE_LIMIT: usize = 600;

/// `D̂^-1/2 (A + I) D̂^-1/2` with self-looped degrees `d̂ = deg + 1`.
pub fn normalized_adjacency(g: &Graph) -> CsrMatrix {
    let dhat: Vec<f64> = (0..g.n()).map(|i| (g.degree(i) + 1) as f64).collect();
    let mut trip = Vec::with_capacity(g.n() + 2 * g.num_edges());
    for i in 0..g.n() {
        trip.push((i, i, 1.0 / dhat[i]));
        for &j in g.neighbors(i) {
            trip.push((i, j, 1.0 / (dhat[i] * dhat[j]).sqrt()));
        }
    }
    CsrMatrix::from_triplets(g.n(), g.n(), trip)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        PageRankOptions {
            damping: 0.85,
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageRank {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on the undirected graph; dangling nodes spread their
/// mass uniformly. Stops once the L1 distance to the fixed point, bounded
/// by `d/(1-d)` times the last L1 step, falls below `tol`.
pub fn pagerank(g: &Graph, opts: PageRankOptions) -> Result<PageRank> {
    let d = opts.damping;
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::invalid(format!(
            "damping must lie in (0, 1), got {d}"
        )));
    }
    if opts.tol <= 0.0 {
        return Err(Error::invalid("tol must be positive"));
    }
    let n = g.n();
    if n == 0 {
        return Ok(PageRank {
            scores: Vec::new(),
            iterations: 0,
            converged: true,
        });
    }
    let nf = n as f64;
    let mut pi = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let bound = d / (1.0 - d);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&i| g.degree(i) == 0).map(|i| pi[i]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        for (i, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = g
                .neighbors(i)
                .iter()
                .map(|&j| pi[j] / g.degree(j) as f64)
                .sum();
            *slot = base + d * inflow;
        }
        let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if bound * delta < opts.tol {
            converged = true;
            break;
        }
    }
    let s: f64 = pi.iter().sum();
    for p in &mut pi {
        *p /= s;
    }
    Ok(PageRank {
        scores: pi,
        iterations,
        converged,
    })
}

/// Symmetric normalized Laplacian `I - D^-1/2 A D^-1/2` as a dense matrix;
/// isolated nodes contribute an identity row.
pub(crate) fn normalized_laplacian_dense(g: &Graph) -> DMatrix<f64> {
    let n = g.n();
    let inv = inv_sqrt_degrees(g);
    let mut l = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for &j in g.neighbors(i) {
            l[(i, j)] -= inv[i] * inv[j];
        }
    }
    l
}

fn inv_sqrt_degrees(g: &Graph) -> Vec<f64> {
    (0..g.n())
        .map(|i| match g.degree(i) {
            0 => 0.0,
            d => 1.0 / (d as f64).sqrt(),
        })
        .collect()
}

/// Eigenvectors of the normalized Laplacian for the `k` smallest nonzero
/// eigenvalues, as columns of an `n x k` matrix. Columns are unit-norm with
/// their largest-magnitude entry positive. Missing columns (fewer than `k`
/// nonzero eigenvalues) are zero.
pub fn laplacian_positional_encodings(g: &Graph, k: usize) -> Result<Tensor> {
    let n = g.n();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let vecs = if n <= DENSE_LIMIT {
        dense_smallest_nonzero(g, k)
    } else {
        lanczos_smallest_nonzero(g, k)
    };
    let mut out = Tensor::zeros(n, k);
    for (c, v) in vecs.iter().enumerate() {
        let norm = v.norm();
        let (mut imax, mut vmax) = (0, 0.0f64);
        for (i, x) in v.iter().enumerate() {
            if x.abs() > vmax.abs() + 1e-12 {
                imax = i;
                vmax = *x;
            }
        }
        let sign = if v[imax] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out.set(i, c, sign * v[i] / norm);
        }
    }
    Ok(out)
}

fn dense_smallest_nonzero(g: &Graph, k: usize) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(normalized_laplacian_dense(g));
    let mut order: Vec<usize> = (0..g.n()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > ZERO_EIG)
        .take(k)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect()
}

/// Lanczos with full reorthogonalization on `I + D^-1/2 A D^-1/2`, whose
/// largest eigenvalues are `2 - λ` for the smallest Laplacian eigenvalues.
/// The Laplacian null space (`D^1/2 1` per component) is projected out.
fn lanczos_smallest_nonzero(g: &Graph, k: usize) -> Vec<DVector<f64>> {
    let n = g.n();
    let inv = inv_sqrt_degrees(g);
    let comp = g.components();
    let n_comp = comp.iter().max().map_or(0, |m| m + 1);
    let mut null: Vec<DVector<f64>> = Vec::new();
    for c in 0..n_comp {
        let v = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                if comp[i] == c {
                    (g.degree(i) as f64).sqrt()
                } else {
                    0.0
                }
            }),
        );
        let nv = v.norm();
        if nv > 0.0 {
            null.push(v / nv);
        }
    }
    let apply = |x: &DVector<f64>| -> DVector<f64> {
        let mut y = x.clone();
        for i in 0..n {
            let mut s = 0.0;
            for &j in g.neighbors(i) {
                s += inv[i] * inv[j] * x[j];
            }
            y[i] += s;
        }
        y
    };
    let dim = n - null.len();
    let m = dim.min((20 * k).max(300));
    let mut rng = rng::stream(0, "lanczos");
    let mut q = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..1.0)));
    let project = |v: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    };
    project(&mut q, &null);
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for j in 0..m {
        let mut w = apply(&basis[j]);
        let a = basis[j].dot(&w);
        alpha.push(a);
        // two passes of Gram-Schmidt keep the basis orthogonal in floating point
        for _ in 0..2 {
            project(&mut w, &null);
            project(&mut w, &basis);
        }
        let b = w.norm();
        if j + 1 == m || b < 1e-12 {
            break;
        }
        beta.push(b);
        basis.push(w / b);
    }
    let steps = alpha.len();
    let mut t = DMatrix::<f64>::zeros(steps, steps);
    for i in 0..steps {
        t[(i, i)] = alpha[i];
        if i + 1 < steps {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..steps).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order
        .into_iter()
        .filter(|&i| 2.0 - eig.eigenvalues[i] > ZERO_EIG)
        .take(k)
        .map(|i| {
            let s = eig.eigenvectors.column(i);
            let mut v = DVector::zeros(n);
            for (c, b) in basis.iter().take(steps).enumerate() {
                v.axpy(s[c], b, 1.0);
            }
            v
        })
        .collect()
}

/// Pointwise mutual information over the support of `Â = A + I`:
/// `log(p(i,j) / (p(i) p(j)))` with `p(i,j) = Â_ij / ΣÂ` and
/// `p(i) = rowsum(Â)_i / ΣÂ`. Off-support entries are 0. With
/// `clip_negative`, negative values become 0 and are dropped.
pub fn pmi_matrix(g: &Graph, clip_negative: bool) -> CsrMatrix {
    let n = g.n();
    let total = (2 * g.num_edges() + n) as f64;
    let row: Vec<f64> = (0..n).map(|i| (g.degree(i) + 1) as f64).collect();
    let pmi = |i: usize, j: usize| {
        let v = (total / (row[i] * row[j])).ln();
        if clip_negative {
            v.max(0.0)
        } else {
            v
        }
    };
    let mut trip = Vec::new();
    for i in 0..n {
        let mut push = |j: usize| {
            let v = pmi(i, j);
            if v != 0.0 {
                trip.push((i, j, v));
            }
        };
        push(i);
        for &j in g.neighbors(i) {
            push(j);
        }
    }
    CsrMatrix::from_triplets(n, n, trip)
}
