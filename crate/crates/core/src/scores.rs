//! Closed-form scores and the Tweedie conversions between scores and
//! denoisers.
//!
//! For a finite set `S` the optimal score at time `t` is the score of the
//! Gaussian mixture `(1/|S|) Σ N(α_t x_i, σ_t² I)`. The ambient variant uses
//! the mixture induced by bridging a noisy set `S_{t_n}` from `t_n` to `t`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::data::{Provenance, SampleSet};
use crate::error::{domain, Result};
use crate::nn::DenoiserNet;
use crate::schedule::{alpha_of, bridge, NoiseSchedule};

/// An evaluable score `s(x, t)` over `R^d`.
#[derive(Debug, Clone)]
pub enum ScoreField {
    EmpiricalDdpm { data: SampleSet, sched: NoiseSchedule },
    EmpiricalAmbient { data: SampleSet, t_n: f64, sched: NoiseSchedule },
    AnalyticGaussian { mean: Vec<f64>, cov: Vec<f64>, sched: NoiseSchedule },
    Learned { net: Arc<DenoiserNet>, sched: NoiseSchedule },
}

impl ScoreField {
    pub fn empirical_ddpm(data: SampleSet, sched: NoiseSchedule) -> Result<Self> {
        if data.provenance() != Provenance::Clean {
            return domain("empirical DDPM score needs a clean set");
        }
        Ok(Self::EmpiricalDdpm { data, sched })
    }

    pub fn empirical_ambient(data: SampleSet, sched: NoiseSchedule) -> Result<Self> {
        let Provenance::Noised { t_n, .. } = data.provenance() else {
            return domain("ambient score needs a set noised at some t_n");
        };
        Ok(Self::EmpiricalAmbient { data, t_n, sched })
    }

    pub fn analytic_gaussian(mean: Vec<f64>, cov: Vec<f64>, sched: NoiseSchedule) -> Result<Self> {
        check_spd(&mean, &cov)?;
        Ok(Self::AnalyticGaussian { mean, cov, sched })
    }

    pub fn learned(net: DenoiserNet, sched: NoiseSchedule) -> Self {
        Self::Learned { net: Arc::new(net), sched }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::EmpiricalDdpm { data, .. } | Self::EmpiricalAmbient { data, .. } => data.dim(),
            Self::AnalyticGaussian { mean, .. } => mean.len(),
            Self::Learned { net, .. } => net.dim(),
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        match self {
            Self::EmpiricalDdpm { sched, .. }
            | Self::EmpiricalAmbient { sched, .. }
            | Self::AnalyticGaussian { sched, .. }
            | Self::Learned { sched, .. } => sched,
        }
    }

    /// The time whose distribution the field's mixture is anchored at:
    /// `t_n` for ambient fields, `0` otherwise.
    pub fn base_time(&self) -> f64 {
        match self {
            Self::EmpiricalAmbient { t_n, .. } => *t_n,
            _ => 0.0,
        }
    }

    pub fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.score_into(x, t, &mut out)?;
        Ok(out)
    }

    pub fn score_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim() || out.len() != x.len() {
            return domain(format!("point of dimension {} for a field of dimension {}", x.len(), self.dim()));
        }
        match self {
            Self::EmpiricalDdpm { data, sched } => {
                check_sampling_time(sched, t)?;
                let sigma = sched.sigma(t);
                mixture_score(data, alpha_of(sigma), sigma * sigma, x, out);
            }
            Self::EmpiricalAmbient { data, t_n, sched } => {
                let (c1, c2) = ambient_params(sched, t, *t_n)?;
                mixture_score(data, c1, c2 * c2, x, out);
            }
            Self::AnalyticGaussian { mean, cov, sched } => {
                check_sampling_time(sched, t)?;
                gaussian_score(mean, cov, sched.sigma(t), x, out)?;
            }
            Self::Learned { net, sched } => {
                check_sampling_time(sched, t)?;
                let sigma = sched.sigma(t);
                let h = net.forward(x, sigma);
                let alpha = alpha_of(sigma);
                for ((o, hi), xi) in out.iter_mut().zip(&h).zip(x) {
                    *o = (alpha * hi - xi) / (sigma * sigma);
                }
            }
        }
        Ok(())
    }

    /// Scores for every row of `xs` (row-major, `n × d`), in row order.
    pub fn score_batch(&self, xs: &[f64], t: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        if xs.len() % d != 0 {
            return domain("batch length is not a multiple of the field dimension");
        }
        if let Self::Learned { net, sched } = self {
            check_sampling_time(sched, t)?;
            let sigma = sched.sigma(t);
            let alpha = alpha_of(sigma);
            let h = net.forward_batch(xs, &vec![sigma; xs.len() / d]);
            return Ok(h.iter().zip(xs).map(|(hi, xi)| (alpha * hi - xi) / (sigma * sigma)).collect());
        }
        let mut out = vec![0.0; xs.len()];
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.score_into(x, t, o)?;
        }
        Ok(out)
    }
}

/// Optimal score for the empirical distribution of a clean set.
pub fn empirical_ddpm_score(data: &SampleSet, sched: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    if data.provenance() != Provenance::Clean {
        return domain("empirical DDPM score needs a clean set");
    }
    check_dim(data, x)?;
    check_sampling_time(sched, t)?;
    let sigma = sched.sigma(t);
    let mut out = vec![0.0; x.len()];
    mixture_score(data, alpha_of(sigma), sigma * sigma, x, &mut out);
    Ok(out)
}

/// Exact score of the mixture obtained by bridging a noisy set from its
/// noise time `t_n` to `t > t_n`.
pub fn empirical_ambient_score(data: &SampleSet, sched: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let Provenance::Noised { t_n, .. } = data.provenance() else {
        return domain("ambient score needs a set noised at some t_n");
    };
    check_dim(data, x)?;
    let (c1, c2) = ambient_params(sched, t, t_n)?;
    let mut out = vec![0.0; x.len()];
    mixture_score(data, c1, c2 * c2, x, &mut out);
    Ok(out)
}

/// Score of the time-`t` marginal `N(α μ, α² Σ + σ² I)` of Gaussian data.
pub fn analytic_gaussian_score(mean: &[f64], cov: &[f64], sched: &NoiseSchedule, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_spd(mean, cov)?;
    if x.len() != mean.len() {
        return domain("point and mean dimensions differ");
    }
    check_sampling_time(sched, t)?;
    let mut out = vec![0.0; x.len()];
    gaussian_score(mean, cov, sched.sigma(t), x, &mut out)?;
    Ok(out)
}

/// Tweedie: `s = (α h − x) / σ²`.
pub fn denoiser_to_score(sched: &NoiseSchedule, h: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_sampling_time(sched, t)?;
    let sigma = sched.sigma(t);
    let alpha = alpha_of(sigma);
    Ok(h.iter().zip(x).map(|(h, x)| (alpha * h - x) / (sigma * sigma)).collect())
}

/// Inverse of [`denoiser_to_score`]: `h = (x + σ² s) / α`.
pub fn score_to_denoiser(sched: &NoiseSchedule, s: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_sampling_time(sched, t)?;
    let sigma = sched.sigma(t);
    let alpha = alpha_of(sigma);
    Ok(s.iter().zip(x).map(|(s, x)| (x + sigma * sigma * s) / alpha).collect())
}

/// `(a, b)` with `E[x_{t_n} | x_t] = a E[x_0 | x_t] + b x_t`, valid for `t > t_n`.
pub fn ambient_denoiser_coeffs(sched: &NoiseSchedule, t: f64, t_n: f64) -> Result<(f64, f64)> {
    sched.check_time(t)?;
    sched.check_time(t_n)?;
    if t <= t_n {
        return domain(format!("ambient coefficients need t > t_n, got t={t}, t_n={t_n}"));
    }
    Ok(ambient_coeffs(sched.sigma(t), sched.sigma(t_n)))
}

pub(crate) fn ambient_coeffs(sigma_t: f64, sigma_n: f64) -> (f64, f64) {
    let (st2, sn2) = (sigma_t * sigma_t, sigma_n * sigma_n);
    let keep_n = (1.0 - sigma_n) * (1.0 + sigma_n);
    let a = (sigma_t - sigma_n) * (sigma_t + sigma_n) / (st2 * keep_n.sqrt());
    let b = (sn2 / st2) * ((1.0 - sigma_t) * (1.0 + sigma_t) / keep_n).sqrt();
    (a, b)
}

/// v-prediction target for a sample noised at `t_n` and bridged to `t`:
/// `α_t z − σ_t (x_{t_n} − B x_t) / A`, where `A = α_{t_n} σ²_{t|t_n} / σ_t²`,
/// `B = α_t σ²_{t_n} / (σ_t² α_{t_n})` and
/// `σ²_{t|s} = (1 − α_t² σ_s² / (σ_t² α_s²)) σ_t²`.
pub fn v_prediction_target(
    sched: &NoiseSchedule,
    x_tn: &[f64],
    x_t: &[f64],
    z: &[f64],
    t: f64,
    t_n: f64,
) -> Result<Vec<f64>> {
    sched.check_time(t)?;
    sched.check_time(t_n)?;
    if t <= t_n {
        return domain(format!("v target needs t > t_n, got t={t}, t_n={t_n}"));
    }
    if x_tn.len() != x_t.len() || z.len() != x_t.len() {
        return domain("v target inputs have mismatched dimensions");
    }
    let (s_t, s_n) = (sched.sigma(t), sched.sigma(t_n));
    let (a_t, a_n) = (alpha_of(s_t), alpha_of(s_n));
    let cond_var = (1.0 - (a_t * a_t * s_n * s_n) / (s_t * s_t * a_n * a_n)) * s_t * s_t;
    let big_a = a_n * cond_var / (s_t * s_t);
    let big_b = a_t * s_n * s_n / (s_t * s_t * a_n);
    Ok(x_tn
        .iter()
        .zip(x_t)
        .zip(z)
        .map(|((xn, xt), z)| a_t * z - s_t * (xn - big_b * xt) / big_a)
        .collect())
}

/// `x̂_0 = α_t x_t − σ_t v`.
pub fn v_to_denoiser(sched: &NoiseSchedule, v: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    sched.check_time(t)?;
    let s = sched.sigma(t);
    let a = alpha_of(s);
    Ok(v.iter().zip(x_t).map(|(v, x)| a * x - s * v).collect())
}

/// `v = (α_t x_t − x̂_0) / σ_t`, the optimal v for a given denoiser output.
pub fn denoiser_to_v(sched: &NoiseSchedule, h: &[f64], x_t: &[f64], t: f64) -> Result<Vec<f64>> {
    check_sampling_time(sched, t)?;
    let s = sched.sigma(t);
    let a = alpha_of(s);
    Ok(h.iter().zip(x_t).map(|(h, x)| (a * x - h) / s).collect())
}

fn check_sampling_time(sched: &NoiseSchedule, t: f64) -> Result<()> {
    if !(t >= sched.t_min() && t <= sched.t_max()) {
        return domain(format!("time {t} outside [{}, {}]", sched.t_min(), sched.t_max()));
    }
    Ok(())
}

fn check_dim(data: &SampleSet, x: &[f64]) -> Result<()> {
    if x.len() != data.dim() {
        return domain(format!("point of dimension {} for data of dimension {}", x.len(), data.dim()));
    }
    Ok(())
}

fn ambient_params(sched: &NoiseSchedule, t: f64, t_n: f64) -> Result<(f64, f64)> {
    check_sampling_time(sched, t)?;
    if t <= t_n {
        return domain(format!("ambient score needs t > t_n, got t={t}, t_n={t_n}"));
    }
    let (c1, c2) = bridge(sched.sigma(t), sched.sigma(t_n));
    if c2 <= 0.0 {
        return domain(format!("ambient score is singular at t={t} (t_n={t_n})"));
    }
    Ok((c1, c2))
}

/// Score of `(1/n) Σ N(c x_i, v I)` at `x`, computed with max-subtracted
/// log weights. Summation runs in row order.
pub(crate) fn mixture_score(data: &SampleSet, c: f64, v: f64, x: &[f64], out: &mut [f64]) {
    let logw: Vec<f64> = data
        .rows()
        .map(|xi| -xi.iter().zip(x).map(|(a, b)| (c * a - b) * (c * a - b)).sum::<f64>() / (2.0 * v))
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut total = 0.0;
    for (xi, lw) in data.rows().zip(&logw) {
        let w = (lw - max).exp();
        total += w;
        for (o, a) in out.iter_mut().zip(xi) {
            *o += w * a;
        }
    }
    for (o, xk) in out.iter_mut().zip(x) {
        *o = (c * *o / total - xk) / v;
    }
}

/// Log-density of the same mixture, up to nothing: the exact normalized value.
pub fn mixture_log_density(data: &SampleSet, c: f64, v: f64, x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let logw: Vec<f64> = data
        .rows()
        .map(|xi| -xi.iter().zip(x).map(|(a, b)| (c * a - b) * (c * a - b)).sum::<f64>() / (2.0 * v))
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    max + s.ln() - (data.len() as f64).ln() - 0.5 * d * (2.0 * std::f64::consts::PI * v).ln()
}

fn gaussian_score(mean: &[f64], cov: &[f64], sigma: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
    let d = mean.len();
    let a2 = (1.0 - sigma) * (1.0 + sigma);
    let m = DMatrix::from_fn(d, d, |i, j| a2 * cov[i * d + j] + if i == j { sigma * sigma } else { 0.0 });
    let chol = m.cholesky().ok_or_else(|| crate::Error::Domain("marginal covariance is not positive definite".into()))?;
    let a = a2.sqrt();
    let r = DVector::from_fn(d, |i, _| x[i] - a * mean[i]);
    let sol = chol.solve(&r);
    for (o, v) in out.iter_mut().zip(sol.iter()) {
        *o = -v;
    }
    Ok(())
}

pub(crate) fn check_spd(mean: &[f64], cov: &[f64]) -> Result<()> {
    let d = mean.len();
    if d == 0 || cov.len() != d * d {
        return domain("covariance must be d × d for a non-empty mean");
    }
    for i in 0..d {
        for j in 0..i {
            let (a, b) = (cov[i * d + j], cov[j * d + i]);
            if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                return domain("covariance is not symmetric");
            }
        }
    }
    if DMatrix::from_row_slice(d, d, cov).cholesky().is_none() {
        return domain("covariance is not positive definite");
    }
    Ok(())
}
