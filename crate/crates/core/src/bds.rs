//! Cluster-based balanced data sampling: k-means pseudo-labels over teacher
//! embeddings, inverse-frequency sample weights, and weighted per-epoch
//! sampling without replacement.

use ndarray::{Array1, Array2, ArrayView2};
use rand::distr::Open01;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default inverse-frequency offset in `w(i) = 1 / (freq + offset)`.
pub const DEFAULT_WEIGHT_OFFSET: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct KmeansOptions {
    pub max_iter: usize,
    /// Stop when the largest centroid shift falls below this.
    pub tol: f64,
    /// L2-normalize rows before clustering.
    pub l2_normalize: bool,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            l2_normalize: false,
        }
    }
}

/// k centroids plus the assignment of every training sample.
#[derive(Debug, Clone)]
pub struct ClusterModel {
    pub centroids: Array2<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances from each sample to its assigned centroid.
    pub inertia: f64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Map rows to their nearest centroid by squared Euclidean distance,
    /// ties broken by the lowest centroid index.
    pub fn assign(&self, emb: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if emb.ncols() != self.centroids.ncols() {
            return Err(Error::invalid_argument(format!(
                "embedding dim {} does not match centroid dim {}",
                emb.ncols(),
                self.centroids.ncols()
            )));
        }
        Ok((0..emb.nrows())
            .map(|i| nearest_centroid(&emb.row(i).to_owned(), &self.centroids).0)
            .collect())
    }
}

fn sq_dist(a: &Array1<f64>, b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn nearest_centroid(point: &Array1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = point
            .iter()
            .zip(row.iter())
            .map(|(x, y)| {
                let diff = x - y;
                diff * diff
            })
            .sum::<f64>();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

fn kmeans_pp_init(data: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = data.nrows();
    let d = data.ncols();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));

    let mut dist2 = vec![f64::INFINITY; n];
    for c in 1..k {
        let prev = centroids.row(c - 1).to_owned();
        for (i, row) in data.rows().into_iter().enumerate() {
            let d2 = sq_dist(&prev, row.as_slice().unwrap());
            if d2 < dist2[i] {
                dist2[i] = d2;
            }
        }
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.sample::<f64, _>(Open01) * total;
            let mut chosen = n - 1;
            for (i, &d2) in dist2.iter().enumerate() {
                target -= d2;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // all remaining points coincide with chosen centroids
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
    }
    centroids
}

/// Lloyd's k-means with k-means++ seeding. Also returns the inertia after
/// every assignment step; the sequence is checked to be non-increasing.
pub fn kmeans_with_trace(
    emb: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    options: &KmeansOptions,
) -> Result<(ClusterModel, Vec<f64>)> {
    let n = emb.nrows();
    if k == 0 {
        return Err(Error::invalid_argument("k must be at least 1"));
    }
    if n < k {
        return Err(Error::invalid_argument(format!(
            "cannot form {k} clusters from {n} samples"
        )));
    }
    if emb.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_data("non-finite embedding value"));
    }

    let data = if options.l2_normalize {
        let mut d = emb.to_owned();
        for mut row in d.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        d
    } else {
        emb.to_owned()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&data, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    let mut trace = Vec::new();

    for _iter in 0..options.max_iter.max(1) {
        // assignment step
        let mut new_inertia = 0.0;
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let (c, d2) = nearest_centroid(&row.to_owned(), &centroids);
            assignments[i] = c;
            counts[c] += 1;
            new_inertia += d2;
        }

        // re-seed empty clusters to the point farthest from its centroid
        let mut stolen = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = 0usize;
            let mut far_d = -1.0;
            for (i, row) in data.rows().into_iter().enumerate() {
                if stolen[i] || counts[assignments[i]] <= 1 {
                    continue;
                }
                let d2 = sq_dist(
                    &row.to_owned(),
                    centroids.row(assignments[i]).as_slice().unwrap(),
                );
                if d2 > far_d {
                    far_d = d2;
                    far_i = i;
                }
            }
            if far_d >= 0.0 {
                counts[assignments[far_i]] -= 1;
                new_inertia -= far_d;
                centroids.row_mut(c).assign(&data.row(far_i));
                assignments[far_i] = c;
                counts[c] = 1;
                stolen[far_i] = true;
            }
        }

        assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        trace.push(inertia);

        // update step
        let mut sums = Array2::<f64>::zeros((k, data.ncols()));
        let mut counts = vec![0usize; k];
        for (i, row) in data.rows().into_iter().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            let mut target = sums.row_mut(c);
            target += &row;
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean = sums.row(c).mapv(|v| v / counts[c] as f64);
            let shift = sq_dist(&mean, centroids.row(c).as_slice().unwrap()).sqrt();
            max_shift = max_shift.max(shift);
            centroids.row_mut(c).assign(&mean);
        }
        if max_shift < options.tol {
            break;
        }
    }

    // final assignment against the converged centroids
    let mut final_inertia = 0.0;
    for (i, row) in data.rows().into_iter().enumerate() {
        let (c, d2) = nearest_centroid(&row.to_owned(), &centroids);
        assignments[i] = c;
        final_inertia += d2;
    }
    assert!(final_inertia <= inertia * (1.0 + 1e-12) + 1e-12);
    trace.push(final_inertia);

    Ok((
        ClusterModel {
            centroids,
            assignments,
            inertia: final_inertia,
        },
        trace,
    ))
}

pub fn kmeans(emb: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<ClusterModel> {
    kmeans_with_trace(emb, k, seed, &KmeansOptions::default()).map(|(m, _)| m)
}

/// Per-sample positive sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerWeights {
    weights: Vec<f64>,
}

impl SamplerWeights {
    /// Arbitrary positive weights (for caller-supplied weighting schemes).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, &w)| !(w > 0.0) || !w.is_finite())
        {
            return Err(Error::invalid_data(format!(
                "weight {w} at index {i} is not a positive finite number"
            )));
        }
        Ok(Self { weights })
    }

    /// Uniform weights, used for the random-sampling baseline.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Inverse cluster-frequency weights: `w(i) = 1 / (freq(cluster(i)) + offset)`.
pub fn bds_weights(assignments: &[usize], offset: f64) -> Result<SamplerWeights> {
    if assignments.is_empty() {
        return Err(Error::invalid_argument("no assignments"));
    }
    let k = assignments.iter().max().unwrap() + 1;
    let mut freq = vec![0usize; k];
    for &a in assignments {
        freq[a] += 1;
    }
    let weights = assignments
        .iter()
        .map(|&a| 1.0 / (freq[a] as f64 + offset))
        .collect();
    Ok(SamplerWeights { weights })
}

/// Weighted sampling of `m` distinct indices without replacement using
/// exponential-key order statistics: each index draws `key = -ln(u) / w`
/// and the `m` smallest keys win. Returned in key order, which for `m = N`
/// is a weighted shuffle of all indices.
pub fn sample_epoch(weights: &SamplerWeights, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = weights.len();
    if m > n {
        return Err(Error::invalid_argument(format!(
            "cannot sample {m} of {n} items without replacement"
        )));
    }
    if let Some((i, _)) = weights
        .weights
        .iter()
        .enumerate()
        .find(|(_, &w)| !(w > 0.0) || !w.is_finite())
    {
        return Err(Error::invalid_data(format!("non-positive weight at index {i}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize)> = weights
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.sample(Open01);
            (-u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(keyed.into_iter().take(m).map(|(_, i)| i).collect())
}
