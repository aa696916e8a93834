//! Variance-preserving noise schedules.
//!
//! The forward corruption is `x_t = sqrt(1 - σ_t²) x_0 + σ_t z`. A schedule is
//! a strictly increasing map `t ↦ σ_t` on `[0, 1]` with `σ_0 = 0` and
//! `σ_1 = sigma_max < 1`, so `α_t = sqrt(1 - σ_t²)` never vanishes.

use crate::error::{domain, Result};

pub const T_MAX: f64 = 1.0;
pub const DEFAULT_SIGMA_MAX: f64 = 0.995;
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Exponent of the polynomial time discretization. Steps cluster near the
/// low-noise end where the closed-form scores are sharpest.
pub const GRID_RHO: f64 = 7.0;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// `σ(t) = sigma_max · t`.
    Linear,
    /// Piecewise-linear interpolation through `(t, σ)` knots.
    Tabulated { times: Vec<f64>, sigmas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    sigma_max: f64,
    t_min: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_SIGMA_MAX, DEFAULT_T_MIN).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(sigma_max: f64, t_min: f64) -> Result<Self> {
        if !(sigma_max > 0.0 && sigma_max < 1.0) {
            return domain(format!("sigma_max must lie in (0, 1), got {sigma_max}"));
        }
        check_t_min(t_min)?;
        Ok(Self { kind: ScheduleKind::Linear, sigma_max, t_min })
    }

    /// Knots must start at `(0, 0)`, end at `t = 1`, and be strictly
    /// increasing in both coordinates.
    pub fn tabulated(times: Vec<f64>, sigmas: Vec<f64>, t_min: f64) -> Result<Self> {
        if times.len() != sigmas.len() || times.len() < 2 {
            return domain("tabulated schedule needs at least two (t, sigma) knots of equal count");
        }
        if times[0] != 0.0 || sigmas[0] != 0.0 {
            return domain("tabulated schedule must start at (0, 0)");
        }
        if *times.last().unwrap() != T_MAX {
            return domain("tabulated schedule must end at t = 1");
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || sigmas.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("tabulated schedule knots must be strictly increasing");
        }
        let sigma_max = *sigmas.last().unwrap();
        if !(sigma_max < 1.0) || sigmas.iter().any(|s| !s.is_finite()) {
            return domain(format!("tabulated sigma_max must be < 1, got {sigma_max}"));
        }
        check_t_min(t_min)?;
        Ok(Self { kind: ScheduleKind::Tabulated { times, sigmas }, sigma_max, t_min })
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    pub fn t_max(&self) -> f64 {
        T_MAX
    }

    /// `σ(t)`, rejecting times outside `[0, t_max]`.
    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.sigma(t))
    }

    /// `α(t) = sqrt(1 - σ(t)²)`.
    pub fn alpha_at(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.alpha(t))
    }

    /// `dσ/dt`: exact for the linear rule, central differences otherwise.
    pub fn sigma_derivative(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match &self.kind {
            ScheduleKind::Linear => self.sigma_max,
            ScheduleKind::Tabulated { .. } => {
                let lo = (t - FD_STEP).max(0.0);
                let hi = (t + FD_STEP).min(T_MAX);
                (self.sigma(hi) - self.sigma(lo)) / (hi - lo)
            }
        })
    }

    /// The time at which the schedule reaches noise level `sigma`.
    pub fn time_at_sigma(&self, sigma: f64) -> Result<f64> {
        if !(0.0..=self.sigma_max).contains(&sigma) {
            return domain(format!("noise level {sigma} outside [0, {}]", self.sigma_max));
        }
        Ok(match &self.kind {
            ScheduleKind::Linear => (sigma / self.sigma_max).min(T_MAX),
            ScheduleKind::Tabulated { times, sigmas } => {
                let k = sigmas.partition_point(|&s| s <= sigma).clamp(1, sigmas.len() - 1);
                let (s0, s1) = (sigmas[k - 1], sigmas[k]);
                let (t0, t1) = (times[k - 1], times[k]);
                t0 + (t1 - t0) * (sigma - s0) / (s1 - s0)
            }
        })
    }

    /// Coefficients `(c1, c2)` of the bridge `x_t = c1 x_{t_n} + c2 ε` that
    /// carries a sample at level `t_n` to level `t ≥ t_n`.
    pub fn bridge_coeffs(&self, t: f64, t_n: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        self.check_time(t_n)?;
        if t < t_n {
            return domain(format!("bridge needs t >= t_n, got t={t}, t_n={t_n}"));
        }
        Ok(bridge(self.sigma(t), self.sigma(t_n)))
    }

    /// `steps + 1` strictly decreasing times from `t_max` to `t_min`.
    pub fn time_grid(&self, steps: usize) -> Result<Vec<f64>> {
        self.time_grid_between(T_MAX, self.t_min, steps)
    }

    /// `steps + 1` strictly decreasing times from `hi` to `lo`. The grid is
    /// polynomially spaced (`ρ = 7`) in the noise-to-signal ratio `σ/α`, so
    /// steps shrink towards `lo` and stay small where `α` nearly vanishes.
    pub fn time_grid_between(&self, hi: f64, lo: f64, steps: usize) -> Result<Vec<f64>> {
        if steps == 0 {
            return domain("time grid needs at least one step");
        }
        self.check_time(hi)?;
        self.check_time(lo)?;
        if !(hi > lo) {
            return domain(format!("time grid needs hi > lo, got hi={hi}, lo={lo}"));
        }
        let ratio = |t: f64| {
            let s = self.sigma(t);
            s / alpha_of(s)
        };
        let mut grid = self.ratio_spaced_times(0.0, ratio(hi), ratio(lo), steps)?;
        grid[0] = hi;
        grid[steps] = lo;
        Ok(grid)
    }

    /// Times whose bridge ratio `c2/c1` (relative to a base level
    /// `base_sigma`) is `ρ`-spaced from `hi` to `lo` over `steps` intervals.
    pub(crate) fn ratio_spaced_times(&self, base_sigma: f64, hi: f64, lo: f64, steps: usize) -> Result<Vec<f64>> {
        let (a, b) = (hi.powf(1.0 / GRID_RHO), lo.powf(1.0 / GRID_RHO));
        let base2 = base_sigma * base_sigma;
        let mut grid = Vec::with_capacity(steps + 1);
        for i in 0..=steps {
            let r = (a + (i as f64 / steps as f64) * (b - a)).powf(GRID_RHO);
            let sigma = ((r * r + base2) / (1.0 + r * r)).sqrt().min(self.sigma_max);
            grid.push(self.time_at_sigma(sigma)?);
        }
        Ok(grid)
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=T_MAX).contains(&t) {
            return domain(format!("time {t} outside [0, {T_MAX}]"));
        }
        Ok(())
    }

    /// Unchecked `σ(t)`; callers validate `t` first.
    pub(crate) fn sigma(&self, t: f64) -> f64 {
        match &self.kind {
            ScheduleKind::Linear => self.sigma_max * t,
            ScheduleKind::Tabulated { times, sigmas } => {
                let k = times.partition_point(|&x| x <= t).clamp(1, times.len() - 1);
                let (t0, t1) = (times[k - 1], times[k]);
                let (s0, s1) = (sigmas[k - 1], sigmas[k]);
                s0 + (s1 - s0) * (t - t0) / (t1 - t0)
            }
        }
    }

    pub(crate) fn alpha(&self, t: f64) -> f64 {
        alpha_of(self.sigma(t))
    }
}

fn check_t_min(t_min: f64) -> Result<()> {
    if !(t_min > 0.0 && t_min < T_MAX) {
        return domain(format!("t_min must lie in (0, 1), got {t_min}"));
    }
    Ok(())
}

pub(crate) fn alpha_of(sigma: f64) -> f64 {
    ((1.0 - sigma) * (1.0 + sigma)).sqrt()
}

/// Bridge coefficients from noise levels directly.
pub(crate) fn bridge(sigma_t: f64, sigma_n: f64) -> (f64, f64) {
    let keep = (1.0 - sigma_n) * (1.0 + sigma_n);
    let c1 = ((1.0 - sigma_t) * (1.0 + sigma_t) / keep).sqrt();
    let c2 = (((sigma_t - sigma_n) * (sigma_t + sigma_n)).max(0.0) / keep).sqrt();
    (c1, c2)
}
