//! Point sets with provenance, toy datasets and normalization.

use std::f64::consts::PI;

use rand::Rng as _;

use crate::error::{domain, Result};
use crate::rng::{self, Rng};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Provenance {
    Clean,
    /// Produced by one forward-noising pass at time `t_n` from `seed`.
    Noised { t_n: f64, seed: u64 },
}

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Vec<f64>,
    n: usize,
    d: usize,
    provenance: Provenance,
}

impl SampleSet {
    pub fn new(points: Vec<f64>, d: usize) -> Result<Self> {
        Self::with_provenance(points, d, Provenance::Clean)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return domain("rows have inconsistent dimension");
        }
        Self::new(rows.concat(), d)
    }

    pub fn with_provenance(points: Vec<f64>, d: usize, provenance: Provenance) -> Result<Self> {
        if d == 0 || points.is_empty() || points.len() % d != 0 {
            return domain(format!("sample set needs n >= 1 rows of dimension d >= 1 (got {} values, d={d})", points.len()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return domain("sample set contains non-finite coordinates");
        }
        let n = points.len() / d;
        Ok(Self { points, n, d, provenance })
    }

    /// One noisy copy of every clean point at level `t_n`:
    /// `x_{t_n} = α_{t_n} x_0 + σ_{t_n} ε`, with row `i` drawn from stream `i` of `seed`.
    pub fn noised(&self, sched: &NoiseSchedule, t_n: f64, seed: u64) -> Result<Self> {
        if self.provenance != Provenance::Clean {
            return domain("only clean sets can be noised");
        }
        let sigma = sched.sigma_at(t_n)?;
        let alpha = sched.alpha(t_n);
        let mut points = Vec::with_capacity(self.points.len());
        let mut eps = vec![0.0; self.d];
        for (i, row) in self.rows().enumerate() {
            let mut r = rng::stream(seed, i as u64);
            rng::fill_normal(&mut r, &mut eps);
            points.extend(row.iter().zip(&eps).map(|(x, e)| alpha * x + sigma * e));
        }
        Self::with_provenance(points, self.d, Provenance::Noised { t_n, seed })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + DoubleEndedIterator + '_ {
        self.points.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.points
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.points
    }

    /// Largest Euclidean norm over the points (floored at a tiny positive
    /// value so it can scale tolerances).
    pub fn data_scale(&self) -> f64 {
        self.rows().map(norm).fold(f64::MIN_POSITIVE, f64::max)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Unbiased sample covariance, row-major `d × d`.
    pub fn covariance(&self) -> Vec<f64> {
        let mu = self.mean();
        let d = self.d;
        let mut c = vec![0.0; d * d];
        for row in self.rows() {
            for i in 0..d {
                let di = row[i] - mu[i];
                for j in 0..d {
                    c[i * d + j] += di * (row[j] - mu[j]);
                }
            }
        }
        let denom = (self.n.max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= denom);
        c
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Affine map to zero mean and unit average per-coordinate variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], scale: 1.0 }
    }

    pub fn fit(set: &SampleSet) -> Self {
        let mean = set.mean();
        let mut ss = 0.0;
        for row in set.rows() {
            ss += dist2(row, &mean);
        }
        let var = ss / (set.len() * set.dim()) as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, scale }
    }

    pub fn normalize(&self, set: &SampleSet) -> Result<SampleSet> {
        self.map(set, |x, m| (x - m) / self.scale)
    }

    pub fn denormalize(&self, set: &SampleSet) -> Result<SampleSet> {
        self.map(set, |x, m| x * self.scale + m)
    }

    fn map(&self, set: &SampleSet, f: impl Fn(f64, f64) -> f64) -> Result<SampleSet> {
        if set.dim() != self.mean.len() {
            return domain("normalizer dimension mismatch");
        }
        let pts = set
            .rows()
            .flat_map(|r| r.iter().zip(&self.mean).map(|(&x, &m)| f(x, m)).collect::<Vec<_>>())
            .collect();
        SampleSet::with_provenance(pts, set.dim(), set.provenance())
    }
}

/// Parameters of the planar ring mixture used by the toy experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingMixture {
    pub components: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for RingMixture {
    fn default() -> Self {
        Self { components: 8, radius: 2.0, std: 0.2 }
    }
}

impl RingMixture {
    pub fn means(&self) -> Vec<[f64; 2]> {
        (0..self.components)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / self.components as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    /// `n` i.i.d. draws; component chosen uniformly.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if self.components == 0 || n == 0 {
            return domain("ring mixture needs at least one component and one sample");
        }
        let means = self.means();
        let mut r: Rng = rng::stream(seed, 0);
        let mut pts = Vec::with_capacity(2 * n);
        let mut z = [0.0; 2];
        for _ in 0..n {
            let k = r.random_range(0..self.components);
            rng::fill_normal(&mut r, &mut z);
            pts.push(means[k][0] + self.std * z[0]);
            pts.push(means[k][1] + self.std * z[1]);
        }
        SampleSet::new(pts, 2)
    }
}
