//! Shallow comparison methods: Lloyd's k-means and three-stage spectral
//! clustering with a Gaussian kernel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, DenseMatrix};

pub const DEFAULT_K_NEIGHBOR: usize = 7;
const MAX_LLOYD_ITERS: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centers: DenseMatrix,
    pub inertia: f64,
}

/// Outcome of a single Lloyd run from fixed initial centers.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centers: DenseMatrix,
    /// Inertia after every assignment step.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.row_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding.
pub fn kmeans_plus_plus<R: Rng + ?Sized>(x: &DenseMatrix, k: usize, rng: &mut R) -> DenseMatrix {
    let n = x.rows();
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = x.row_iter().map(|r| sq_dist(r, x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        chosen.push(next);
        for (i, r) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, x.row(next)));
        }
    }
    x.select_rows(&chosen)
}

/// Lloyd iterations until no assignment changes (or 100 iterations). An
/// emptied cluster is re-seeded at the point farthest from its center.
pub fn lloyd(x: &DenseMatrix, initial_centers: &DenseMatrix) -> LloydRun {
    let (n, d) = x.shape();
    let k = initial_centers.rows();
    let mut centers = initial_centers.clone();
    let mut labels = vec![usize::MAX; n];
    let mut inertia_trace = Vec::new();

    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut dists = vec![0.0; n];
        for (i, r) in x.row_iter().enumerate() {
            let (c, dist) = nearest(r, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
            dists[i] = dist;
        }
        // empty clusters take the currently worst-served point
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(far) = far {
                    counts[labels[far]] -= 1;
                    labels[far] = c;
                    counts[c] = 1;
                    dists[far] = 0.0;
                    centers.row_mut(c).copy_from_slice(x.row(far));
                    changed = true;
                }
            }
        }
        inertia_trace.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = DenseMatrix::zeros(k, d);
        for (i, r) in x.row_iter().enumerate() {
            for (s, v) in sums.row_mut(labels[i]).iter_mut().zip(r) {
                *s += v;
            }
        }
        for c in 0..k {
            let cnt = counts[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / cnt;
            }
        }
    }
    LloydRun {
        labels,
        centers,
        inertia_trace,
    }
}

/// Best of `restarts` k-means++-seeded Lloyd runs by final inertia.
pub fn kmeans_lloyd(x: &DenseMatrix, k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = x.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} with {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let init = kmeans_plus_plus(x, k, &mut rng);
        let run = lloyd(x, &init);
        let inertia: f64 = x
            .row_iter()
            .zip(&run.labels)
            .map(|(r, &l)| sq_dist(r, run.centers.row(l)))
            .sum();
        if best.as_ref().map_or(true, |b| inertia < b.inertia) {
            best = Some(KMeansResult {
                labels: run.labels,
                centers: run.centers,
                inertia,
            });
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// `S_ij = exp(−‖x_i − x_j‖² / (2σ²))`
    Fixed(f64),
    /// `S_ij = exp(−‖x_i − x_j‖² / (σ_i σ_j))`, `σ_i` the distance to the
    /// `k`-th nearest neighbor.
    SelfTuning(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub bandwidth: Bandwidth,
    pub num_clusters: usize,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub labels: Vec<usize>,
    /// Columns are unit-length right eigenvectors of `W = D⁻¹S`.
    pub embeddings: DenseMatrix,
    pub eigenvalues: Vec<f64>,
}

pub const MAX_SPECTRAL_POINTS: usize = 4096;

pub fn gaussian_affinity(x: &DenseMatrix, bandwidth: Bandwidth) -> Result<DenseMatrix> {
    let n = x.rows();
    let mut d2 = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sq_dist(x.row(i), x.row(j));
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    match bandwidth {
        Bandwidth::Fixed(sigma) => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive, got {sigma}"
                )));
            }
            Ok(d2.map(|v| (-v / (2.0 * sigma * sigma)).exp()))
        }
        Bandwidth::SelfTuning(k) => {
            if k == 0 || k >= n {
                return Err(Error::InvalidArgument(format!(
                    "k_neighbor = {k} with {n} points"
                )));
            }
            let scales: Vec<f64> = (0..n)
                .map(|i| {
                    let mut row: Vec<f64> =
                        (0..n).filter(|&j| j != i).map(|j| d2[(i, j)]).collect();
                    row.select_nth_unstable_by(k - 1, f64::total_cmp);
                    row[k - 1].sqrt().max(1e-12)
                })
                .collect();
            Ok(DenseMatrix::from_fn(n, n, |i, j| {
                (-d2[(i, j)] / (scales[i] * scales[j])).exp()
            }))
        }
    }
}

/// Spectral embedding and k-means from a precomputed symmetric affinity.
pub fn spectral_from_affinity(s: &DenseMatrix, k: usize, seed: u64) -> Result<SpectralResult> {
    let n = s.rows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "{k} clusters for {n} points"
        )));
    }
    let mut degree = Vec::with_capacity(n);
    for i in 0..n {
        let off: f64 = s
            .row(i)
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| v)
            .sum();
        if off <= 0.0 {
            return Err(Error::IsolatedPoint(i));
        }
        degree.push(s.row(i).iter().sum::<f64>());
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let m = DenseMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * s[(i, j)] * inv_sqrt[j]);
    let eig = sym_eig(&m, 1e-14)?;

    let mut embeddings = DenseMatrix::from_fn(n, k, |i, c| inv_sqrt[i] * eig.eigenvectors[(i, c)]);
    for c in 0..k {
        let len = embeddings.col(c).iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n {
            embeddings[(i, c)] /= len;
        }
    }
    let rows = crate::spectral::row_normalize(&embeddings).value;
    let km = kmeans_lloyd(&rows, k, 10, seed)?;
    Ok(SpectralResult {
        labels: km.labels,
        embeddings,
        eigenvalues: eig.eigenvalues[..k].to_vec(),
    })
}

/// Gaussian affinity → row-normalized `W` → top-`K` eigenvectors → k-means.
pub fn classical_spectral(
    x: &DenseMatrix,
    cfg: &SpectralConfig,
    seed: u64,
) -> Result<SpectralResult> {
    if x.rows() > MAX_SPECTRAL_POINTS {
        return Err(Error::InvalidArgument(format!(
            "{} points exceeds the dense limit of {MAX_SPECTRAL_POINTS}",
            x.rows()
        )));
    }
    let s = gaussian_affinity(x, cfg.bandwidth)?;
    spectral_from_affinity(&s, cfg.num_clusters, seed)
}
