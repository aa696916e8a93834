//! Information leaked about a training point by its noisy copies, for a
//! Gaussian prior `x_0 ~ N(0, Σ)` observed through `m` independent draws at
//! noise level `σ_{t_n}`. All quantities are in nats.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::rng;

/// Ridge added to a degenerate prior covariance.
pub const DEGENERATE_RIDGE: f64 = 1e-12;
pub const MIN_MC_DRAWS: usize = 10_000;
const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePointMi {
    /// Information in one noisy observation.
    pub mi_ambient: f64,
    /// Information in `m` independent noisy observations.
    pub mi_ddpm: f64,
    /// True when Σ was singular and ridged.
    pub regularized: bool,
}

/// `½ log det(((1 − σ²)/σ²) Σ + I)` for one observation and `m` times that
/// for `m` observations.
pub fn mi_single_point(sigma_cov: &[f64], d: usize, sigma_tn: f64, m: usize) -> Result<SinglePointMi> {
    if !(sigma_tn > 0.0 && sigma_tn < 1.0) {
        return domain(format!("sigma_tn must lie in (0, 1), got {sigma_tn}"));
    }
    if m == 0 {
        return domain("m must be at least 1");
    }
    if d == 0 || sigma_cov.len() != d * d {
        return domain("covariance must be d × d");
    }
    let mut cov = DMatrix::from_row_slice(d, d, sigma_cov);
    if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
        return domain("covariance must be symmetric");
    }
    let eig = SymmetricEigen::new(cov.clone()).eigenvalues;
    let scale = eig.amax().max(1.0);
    if eig.min() < -1e-12 * scale {
        return domain("covariance must be positive semidefinite");
    }
    let regularized = eig.min() <= 1e-12 * scale;
    if regularized {
        cov += DMatrix::identity(d, d) * DEGENERATE_RIDGE;
    }
    let s2 = sigma_tn * sigma_tn;
    let snr = (1.0 - s2) / s2;
    let mat = cov * snr + DMatrix::identity(d, d);
    let chol = mat.cholesky().expect("SNR-scaled PSD matrix plus identity is SPD");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let mi_ambient = 0.5 * logdet;
    Ok(SinglePointMi { mi_ambient, mi_ddpm: m as f64 * mi_ambient, regularized })
}

/// Upper bound `m·d/2·log(1/σ²)` on what `m` noisy copies of a dataset in
/// `d` unit-variance dimensions reveal.
pub fn mi_dataset_bound(d: usize, sigma_tn: f64, m: usize) -> Result<f64> {
    if !(sigma_tn > 0.0 && sigma_tn <= 1.0) {
        return domain(format!("sigma_tn must lie in (0, 1], got {sigma_tn}"));
    }
    Ok(m as f64 * d as f64 / 2.0 * (1.0 / (sigma_tn * sigma_tn)).ln())
}

/// Estimates `I(x_0; x_{t_n})` for `x_0 ~ N(0, 1)` from simulated pairs via
/// `−½ log(1 − ρ̂²)`. Draws are split into fixed chunks with their own
/// streams and merged in chunk order.
pub fn mi_monte_carlo_gaussian(sigma_tn: f64, draws: usize, seed: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&sigma_tn) {
        return domain(format!("sigma_tn must lie in [0, 1], got {sigma_tn}"));
    }
    if draws < MIN_MC_DRAWS {
        return domain(format!("need at least {MIN_MC_DRAWS} draws"));
    }
    let alpha = (1.0 - sigma_tn * sigma_tn).sqrt();
    let chunks = draws.div_ceil(MC_CHUNK);
    let sums: Vec<[f64; 5]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(draws - c * MC_CHUNK);
            let mut r = rng::stream(seed, c as u64);
            let mut buf = vec![0.0; 2 * len];
            rng::fill_normal(&mut r, &mut buf);
            let mut s = [0.0; 5];
            for pair in buf.chunks_exact(2) {
                let x = pair[0];
                let y = alpha * x + sigma_tn * pair[1];
                s[0] += x;
                s[1] += y;
                s[2] += x * x;
                s[3] += y * y;
                s[4] += x * y;
            }
            s
        })
        .collect();
    let mut t = [0.0; 5];
    for s in &sums {
        for k in 0..5 {
            t[k] += s[k];
        }
    }
    let n = draws as f64;
    let (mx, my) = (t[0] / n, t[1] / n);
    let vx = t[2] / n - mx * mx;
    let vy = t[3] / n - my * my;
    let cxy = t[4] / n - mx * my;
    let rho2 = (cxy * cxy / (vx * vy)).min(1.0 - f64::EPSILON);
    Ok(-0.5 * (1.0 - rho2).ln())
}
