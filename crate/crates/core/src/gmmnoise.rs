//! Separation and merging of identity-covariance Gaussian components under
//! the forward process, where component means contract by `α_t = √(1−σ_t²)`.

use crate::data::dist2;
use crate::error::{domain, Result};
use crate::rng;

/// Total variation between `N(μ1, I)` and `N(μ2, I)`: `2Φ(‖Δμ‖/2) − 1`,
/// evaluated as `erf(‖Δμ‖ / (2√2))`.
pub fn tv_identity_gaussians(mu1: &[f64], mu2: &[f64]) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return domain("means must have the same dimension");
    }
    Ok(tv_from_distance(dist2(mu1, mu2).sqrt()))
}

pub fn tv_from_distance(dist: f64) -> f64 {
    libm::erf(dist / (2.0 * std::f64::consts::SQRT_2))
}

/// Total variation between the two components after noising to level `σ_t`.
pub fn tv_at_noise(mu1: &[f64], mu2: &[f64], sigma_t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&sigma_t) {
        return domain(format!("sigma_t must lie in [0, 1), got {sigma_t}"));
    }
    if mu1.len() != mu2.len() {
        return domain("means must have the same dimension");
    }
    let alpha = (1.0 - sigma_t * sigma_t).sqrt();
    Ok(tv_from_distance(alpha * dist2(mu1, mu2).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterStatus {
    /// `TV > 2ε`.
    Separated,
    /// `TV ≤ ε`.
    Merged,
    Neither,
}

impl ClusterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Separated => "separated",
            Self::Merged => "merged",
            Self::Neither => "neither",
        }
    }
}

pub fn status_from_tv(tv: f64, epsilon: f64) -> ClusterStatus {
    if tv > 2.0 * epsilon {
        ClusterStatus::Separated
    } else if tv <= epsilon {
        ClusterStatus::Merged
    } else {
        ClusterStatus::Neither
    }
}

pub fn merge_and_separation_status(mu1: &[f64], mu2: &[f64], sigma_t: f64, epsilon: f64) -> Result<ClusterStatus> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return domain(format!("epsilon must lie in (0, 1), got {epsilon}"));
    }
    Ok(status_from_tv(tv_at_noise(mu1, mu2, sigma_t)?, epsilon))
}

fn threshold(ratio: f64) -> Option<f64> {
    let v = 1.0 - ratio * ratio;
    (v >= 0.0).then(|| v.sqrt())
}

/// Smallest `σ_t` from which `TV ≤ ‖Δμ_t‖/√2` guarantees merging:
/// `√(1 − 2(ε/‖Δμ‖)²)`, or 0 when merged already at `σ_t = 0`.
pub fn merge_threshold(epsilon: f64, mean_gap: f64) -> f64 {
    threshold(std::f64::consts::SQRT_2 * epsilon / mean_gap).unwrap_or(0.0)
}

/// Largest `σ_t` up to which `TV ≥ ‖Δμ_t‖/200` guarantees separation:
/// `√(1 − 200²(2ε/‖Δμ‖)²)`, or `None` when no level qualifies.
pub fn separation_threshold(epsilon: f64, mean_gap: f64) -> Option<f64> {
    threshold(200.0 * 2.0 * epsilon / mean_gap)
}

/// The same thresholds written through the original total variation `C`:
/// merged from `√(1 − (ε/C)²)`, separated up to `√(1 − (2ε/C)²)`.
pub fn merge_threshold_tv(epsilon: f64, c: f64) -> f64 {
    threshold(epsilon / c).unwrap_or(0.0)
}

pub fn separation_threshold_tv(epsilon: f64, c: f64) -> Option<f64> {
    threshold(2.0 * epsilon / c)
}

/// Draws `m` noisy copies `α x0 + σ z` (copy `i` from stream `i`) and
/// reports whether every pairwise distance is at most `eps_target`, together
/// with the largest one.
pub fn smoothed_single_rep_check(x0: &[f64], m: usize, sigma_t: f64, eps_target: f64, seed: u64) -> Result<(bool, f64)> {
    if m == 0 {
        return domain("need at least one copy");
    }
    if !(0.0..=1.0).contains(&sigma_t) {
        return domain(format!("sigma_t must lie in [0, 1], got {sigma_t}"));
    }
    let alpha = (1.0 - sigma_t * sigma_t).sqrt();
    let copies: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let z = rng::normal_vec(&mut r, x0.len());
            x0.iter().zip(&z).map(|(x, z)| alpha * x + sigma_t * z).collect()
        })
        .collect();
    let mut max = 0.0f64;
    for i in 0..m {
        for j in i + 1..m {
            max = max.max(dist2(&copies[i], &copies[j]).sqrt());
        }
    }
    Ok((max <= eps_target, max))
}
