//! Memorization and sample-quality metrics on raw coordinates.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::data::{dist2, norm, SampleSet};
use crate::error::{domain, Result};

/// Default memorization radius as a fraction of the data scale.
pub const DEFAULT_DELTA_FRACTION: f64 = 0.05;
pub const FRECHET_RIDGE: f64 = 1e-6;
pub const MAX_W2_POINTS: usize = 4096;
/// Schema tag for `(metric, threshold, value)` rows.
pub const METRIC_SCHEMA: &str = "metrics/1";

/// One `(metric, threshold, value)` report row; `threshold` is `None` for
/// unthresholded statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub threshold: Option<f64>,
    pub value: f64,
}

impl MetricRow {
    pub fn new(metric: &str, threshold: Option<f64>, value: f64) -> Self {
        Self { metric: metric.to_string(), threshold, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationReport {
    /// Largest cosine similarity to any training point, per generated point.
    pub similarity: Vec<f64>,
    pub similarity_index: Vec<usize>,
    /// Euclidean distance to the nearest training point.
    pub distance: Vec<f64>,
    pub distance_index: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// Fraction of generated points with similarity strictly above each threshold.
    pub fractions: Vec<f64>,
    pub mean_similarity: f64,
    pub p95_similarity: f64,
    pub delta: f64,
    /// Fraction of generated points within `delta` of a training point.
    pub delta_fraction: f64,
}

impl MemorizationReport {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .thresholds
            .iter()
            .zip(&self.fractions)
            .map(|(&t, &f)| MetricRow::new("similarity_fraction", Some(t), f))
            .collect();
        rows.push(MetricRow::new("mean_similarity", None, self.mean_similarity));
        rows.push(MetricRow::new("p95_similarity", None, self.p95_similarity));
        rows.push(MetricRow::new("memorized_fraction", Some(self.delta), self.delta_fraction));
        rows.push(MetricRow::new("mean_nn_distance", None, mean(&self.distance)));
        rows
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Linear-interpolation percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Nearest-neighbor memorization statistics with the default radius
/// `δ = 0.05 · data_scale(train)`.
pub fn nn_similarity(gen: &SampleSet, train: &SampleSet, thresholds: &[f64]) -> Result<MemorizationReport> {
    let delta = DEFAULT_DELTA_FRACTION * train.data_scale();
    nn_similarity_with_delta(gen, train, thresholds, delta)
}

pub fn nn_similarity_with_delta(gen: &SampleSet, train: &SampleSet, thresholds: &[f64], delta: f64) -> Result<MemorizationReport> {
    if gen.is_empty() || train.is_empty() {
        return domain("memorization sets must be non-empty");
    }
    if gen.dim() != train.dim() {
        return domain(format!("dimension mismatch: {} vs {}", gen.dim(), train.dim()));
    }
    let per: Vec<(f64, usize, f64, usize)> = (0..gen.len())
        .into_par_iter()
        .map(|i| {
            let g = gen.row(i);
            let (mut best_s, mut si, mut best_d, mut di) = (f64::NEG_INFINITY, 0, f64::INFINITY, 0);
            for (j, t) in train.rows().enumerate() {
                let s = cosine(g, t);
                if s > best_s {
                    best_s = s;
                    si = j;
                }
                let d = dist2(g, t);
                if d < best_d {
                    best_d = d;
                    di = j;
                }
            }
            (best_s, si, best_d.sqrt(), di)
        })
        .collect();
    let similarity: Vec<f64> = per.iter().map(|p| p.0).collect();
    let distance: Vec<f64> = per.iter().map(|p| p.2).collect();
    let n = gen.len() as f64;
    let fractions = thresholds.iter().map(|&t| similarity.iter().filter(|&&s| s > t).count() as f64 / n).collect();
    let delta_fraction = distance.iter().filter(|&&d| d <= delta).count() as f64 / n;
    Ok(MemorizationReport {
        mean_similarity: mean(&similarity),
        p95_similarity: percentile(&similarity, 0.95),
        similarity_index: per.iter().map(|p| p.1).collect(),
        distance_index: per.iter().map(|p| p.3).collect(),
        similarity,
        distance,
        thresholds: thresholds.to_vec(),
        fractions,
        delta,
        delta_fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetReport {
    pub distance: f64,
    /// True when a singular covariance was ridged by `1e-6 · I`.
    pub regularized: bool,
}

/// Fréchet distance between Gaussians fitted to the two sets.
pub fn gaussian_frechet(a: &SampleSet, b: &SampleSet) -> Result<FrechetReport> {
    let d = a.dim();
    if b.dim() != d {
        return domain("dimension mismatch");
    }
    if a.len() <= d || b.len() <= d {
        return domain("Fréchet distance needs more points than dimensions");
    }
    let (mut ca, mut cb) = (DMatrix::from_row_slice(d, d, &a.covariance()), DMatrix::from_row_slice(d, d, &b.covariance()));
    let regularized = is_singular(&ca) || is_singular(&cb);
    if regularized {
        ca += DMatrix::identity(d, d) * FRECHET_RIDGE;
        cb += DMatrix::identity(d, d) * FRECHET_RIDGE;
    }
    let sa = psd_sqrt(&ca);
    let inner = &sa * &cb * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|e| e.max(0.0).sqrt()).sum();
    let mean_term = dist2(&a.mean(), &b.mean());
    let distance = mean_term + ca.trace() + cb.trace() - 2.0 * cross;
    Ok(FrechetReport { distance: distance.max(0.0), regularized })
}

fn is_singular(c: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(c.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    eig.iter().any(|&e| e <= 1e-12 * max.max(1e-300))
}

fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(c.clone());
    let root = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * root * e.eigenvectors.transpose()
}

/// Minimum-cost perfect assignment on a square cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn optimal_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting path with potentials; 1-based with a sentinel column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Exact 2-Wasserstein distance between two equal-size empirical measures.
pub fn exact_w2(a: &SampleSet, b: &SampleSet) -> Result<f64> {
    if a.len() != b.len() {
        return domain(format!("W2 needs equal sizes, got {} and {}", a.len(), b.len()));
    }
    if a.dim() != b.dim() {
        return domain("dimension mismatch");
    }
    if a.is_empty() || a.len() > MAX_W2_POINTS {
        return domain(format!("W2 supports 1..={MAX_W2_POINTS} points"));
    }
    let n = a.len();
    let cost: Vec<f64> = a.rows().flat_map(|x| b.rows().map(move |y| dist2(x, y))).collect();
    let assignment = optimal_assignment(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepEntry {
    pub sigma_tn: f64,
    pub quality: f64,
    pub memorization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoRow {
    pub entry: SweepEntry,
    pub on_frontier: bool,
}

/// Marks entries not dominated in (quality, memorization), both minimized.
/// Rows are ordered by `sigma_tn`; identical entries never dominate each other.
pub fn pareto_sweep(results: &[SweepEntry]) -> Result<Vec<ParetoRow>> {
    if results.len() < 2 {
        return domain("a sweep needs at least two entries");
    }
    let dominated = |e: &SweepEntry| {
        results.iter().any(|o| {
            o.quality <= e.quality && o.memorization <= e.memorization && (o.quality < e.quality || o.memorization < e.memorization)
        })
    };
    let mut rows: Vec<ParetoRow> = results.iter().map(|&entry| ParetoRow { entry, on_frontier: !dominated(&entry) }).collect();
    rows.sort_by(|x, y| x.entry.sigma_tn.total_cmp(&y.entry.sigma_tn));
    Ok(rows)
}
