//! Subpopulation mixture model with random frequencies.
//!
//! Each of `N` components draws a raw frequency uniformly from a list `π`;
//! the mixing weights are the normalized draws. `π̄` is the marginal law of
//! one normalized weight. Since `D_1 = p / (p + S)` with `S` the sum of the
//! other `N − 1` draws, every expectation over `π̄` is an average over pairs
//! `(p, S)`; the law of `S` is enumerated exactly when `k^N ≤ 10⁶` and
//! sampled otherwise. Beyond enumeration, `τ_ℓ` comes from a Laplace-transform
//! quadrature that needs only the law of one draw.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{domain, Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scores::empirical_ddpm_score;
use crate::data::SampleSet;

/// Largest `k^N` handled by exact enumeration.
pub const EXACT_LIMIT: f64 = 1e6;
/// Draws of `S` when the marginal is sampled.
pub const MARGINAL_DRAWS: usize = 1 << 17;
pub const MARGINAL_SEED: u64 = 0x5eed_0f_5ab0_9a7e;
const DRAW_CHUNK: usize = 4096;
const QUAD_POINTS: usize = 4000;

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPrior {
    pub pi: Vec<f64>,
    pub n_components: usize,
}

impl FrequencyPrior {
    pub fn new(pi: Vec<f64>, n_components: usize) -> Result<Self> {
        if pi.is_empty() {
            return domain("frequency list must be non-empty");
        }
        if pi.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return domain("frequencies must be positive and finite");
        }
        if n_components == 0 {
            return domain("need at least one component");
        }
        Ok(Self { pi, n_components })
    }

    /// `π = {1, 1/2, …, 1/k}`.
    pub fn zipf(k: usize, n_components: usize) -> Result<Self> {
        Self::new((1..=k).map(|j| 1.0 / j as f64).collect(), n_components)
    }

    /// A single frequency; every component then has weight `1/N`.
    pub fn point_mass(n_components: usize) -> Result<Self> {
        Self::new(vec![1.0], n_components)
    }

    pub fn k(&self) -> usize {
        self.pi.len()
    }

    pub fn is_enumerable(&self) -> bool {
        (self.n_components as f64) * (self.k() as f64).ln() <= EXACT_LIMIT.ln() + 1e-9
    }

    /// The marginal `π̄`, enumerated or sampled per [`Self::is_enumerable`].
    pub fn marginal(&self) -> Marginal {
        if self.is_enumerable() {
            self.exact_marginal()
        } else {
            self.sampled_marginal(MARGINAL_DRAWS, MARGINAL_SEED)
        }
    }

    /// Exact law of `S` from the compositions of `N − 1` draws over `k` values.
    pub fn exact_marginal(&self) -> Marginal {
        let k = self.k();
        let m = self.n_components - 1;
        let log_norm = lgamma(m as f64 + 1.0) - m as f64 * (k as f64).ln();
        let mut rest = Vec::new();
        let mut counts = vec![0usize; k];
        compositions(&mut counts, 0, m, &mut |c| {
            let s: f64 = c.iter().zip(&self.pi).map(|(&n, &p)| n as f64 * p).sum();
            let lp = log_norm - c.iter().map(|&n| lgamma(n as f64 + 1.0)).sum::<f64>();
            rest.push((s, lp.exp()));
        });
        Marginal { pi: self.pi.clone(), n_components: self.n_components, rest, exact: true }
    }

    /// Monte Carlo law of `S`; each draw keeps the exact average over `p`.
    pub fn sampled_marginal(&self, draws: usize, seed: u64) -> Marginal {
        let k = self.k();
        let m = self.n_components - 1;
        let chunks = draws.div_ceil(DRAW_CHUNK);
        let w = 1.0 / draws as f64;
        let rest: Vec<(f64, f64)> = (0..chunks)
            .into_par_iter()
            .flat_map_iter(|c| {
                let len = DRAW_CHUNK.min(draws - c * DRAW_CHUNK);
                let mut r = rng::stream(seed, c as u64);
                (0..len)
                    .map(|_| ((0..m).map(|_| self.pi[r.random_range(0..k)]).sum::<f64>(), w))
                    .collect::<Vec<_>>()
            })
            .collect();
        Marginal { pi: self.pi.clone(), n_components: self.n_components, rest, exact: false }
    }
}

fn compositions(counts: &mut [usize], idx: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if idx == counts.len() - 1 {
        counts[idx] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[idx] = c;
        compositions(counts, idx + 1, left - c, f);
    }
}

fn lgamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `π̄` represented by the raw frequencies and a weighted law of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pi: Vec<f64>,
    n_components: usize,
    /// `(S, probability)` pairs.
    rest: Vec<(f64, f64)>,
    pub exact: bool,
}

impl Marginal {
    /// `E[f(α)]` over `α ~ π̄`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        let inv_k = 1.0 / self.pi.len() as f64;
        let mut total = 0.0;
        for &(s, w) in &self.rest {
            let mut inner = 0.0;
            for &p in &self.pi {
                inner += f(p / (p + s));
            }
            total += w * inner * inv_k;
        }
        total
    }

    /// Distinct support points of `π̄` with their probabilities, sorted.
    /// Only meaningful for exact marginals.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        let inv_k = 1.0 / self.pi.len() as f64;
        let mut atoms: Vec<(f64, f64)> =
            self.rest.iter().flat_map(|&(s, w)| self.pi.iter().map(move |&p| (p / (p + s), w * inv_k))).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (a, w) in atoms {
            match merged.last_mut() {
                Some(last) if (a - last.0).abs() <= 1e-14 * a.max(1e-300) => last.1 += w,
                _ => merged.push((a, w)),
            }
        }
        merged
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    /// `N · E[α · 1{α ∈ [a, b]}]`.
    pub fn weight(&self, a: f64, b: f64) -> f64 {
        self.n_components as f64 * self.expect(|x| if x >= a && x <= b { x } else { 0.0 })
    }

    /// `E[α^{ℓ+1}(1−α)^{n−ℓ}] / E[α^ℓ(1−α)^{n−ℓ}]`, evaluated with a
    /// common log-scale shift.
    pub fn tau(&self, ell: usize, n: usize) -> Result<f64> {
        let lw = |x: f64| ell as f64 * x.ln() + if n == ell { 0.0 } else { (n - ell) as f64 * (1.0 - x).ln() };
        let shift = self.expect_max(lw);
        if !shift.is_finite() {
            return Err(Error::DegeneratePrior(format!("E[α^{ell}(1−α)^{}] vanishes", n - ell)));
        }
        let num = self.expect(|x| x * (lw(x) - shift).exp());
        let den = self.expect(|x| (lw(x) - shift).exp());
        if den <= 0.0 {
            return Err(Error::DegeneratePrior(format!("E[α^{ell}(1−α)^{}] vanishes", n - ell)));
        }
        Ok(num / den)
    }

    fn expect_max(&self, f: impl Fn(f64) -> f64) -> f64 {
        let mut m = f64::NEG_INFINITY;
        for &(s, _) in &self.rest {
            for &p in &self.pi {
                m = m.max(f(p / (p + s)));
            }
        }
        m
    }
}

/// Draws one weight vector `D`.
pub fn sample_mixing_weights(prior: &FrequencyPrior, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    let raw: Vec<f64> = (0..prior.n_components).map(|_| prior.pi[r.random_range(0..prior.k())]).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauMethod {
    /// Exact enumeration of the marginal.
    Exact,
    /// Laplace-transform quadrature, cross-checked by Monte Carlo.
    Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauReport {
    pub value: f64,
    pub method: TauMethod,
    /// Monte Carlo estimate over the sampled marginal, when not enumerable.
    pub monte_carlo: Option<f64>,
}

impl TauReport {
    pub fn cross_check_error(&self) -> Option<f64> {
        self.monte_carlo.map(|m| (m - self.value).abs() / self.value.abs())
    }
}

/// `τ_ℓ` for a dataset of size `n`.
pub fn tau(ell: usize, n: usize, prior: &FrequencyPrior) -> Result<TauReport> {
    if ell == 0 || ell > n {
        return domain(format!("need 1 ≤ ℓ ≤ n, got ℓ={ell}, n={n}"));
    }
    let marginal = prior.marginal();
    if marginal.exact {
        return Ok(TauReport { value: marginal.tau(ell, n)?, method: TauMethod::Exact, monte_carlo: None });
    }
    let value = tau_quadrature(ell, n, prior)?;
    Ok(TauReport { value, method: TauMethod::Quadrature, monte_carlo: Some(marginal.tau(ell, n)?) })
}

/// `τ_ℓ` from the Laplace representation
/// `E[p^a S^b / (p+S)^{a+b}] = p^a/Γ(a+b) ∫ u^{a+b−1} e^{−up} E[S^b e^{−uS}] du`,
/// with the tilted moments of `S` assembled from cumulants of one draw.
pub fn tau_quadrature(ell: usize, n: usize, prior: &FrequencyPrior) -> Result<f64> {
    if ell == 0 || ell > n {
        return domain(format!("need 1 ≤ ℓ ≤ n, got ℓ={ell}, n={n}"));
    }
    let top = prior.pi.iter().cloned().fold(0.0, f64::max);
    let pi: Vec<f64> = prior.pi.iter().map(|p| p / top).collect();
    let lo = pi.iter().cloned().fold(f64::INFINITY, f64::min);
    let big_n = prior.n_components as f64;
    let b = n - ell;
    let m_den = n;
    let rest = prior.n_components - 1;
    // The integrand in v = ln u decays like u^{a+b} at 0 and e^{−u·N·min π} at ∞.
    let v_lo = (1e-18f64).ln() / m_den as f64 - big_n.ln();
    let v_hi = ((60.0 + 4.0 * (n as f64 + 1.0) * (big_n + 1.0).ln()) / (big_n * lo)).ln();
    let h = (v_hi - v_lo) / QUAD_POINTS as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=QUAD_POINTS {
        let v = v_lo + i as f64 * h;
        let u = v.exp();
        let wt = if i == 0 || i == QUAD_POINTS { 0.5 } else { 1.0 };
        let (log_phi, moments) = tilted_sum_moments(&pi, rest, u, b);
        let sb = moments[b];
        for &p in &pi {
            // a = ℓ, m = n for the denominator; a = ℓ+1, m = n+1 for the numerator;
            // u^{m−1} du = u^m dv.
            let base = rest as f64 * log_phi - u * p;
            let d = (ell as f64 * p.ln() + m_den as f64 * v + base - lgamma(m_den as f64)).exp();
            let nn = ((ell + 1) as f64 * p.ln() + (m_den + 1) as f64 * v + base - lgamma(m_den as f64 + 1.0)).exp();
            den += wt * d * sb;
            num += wt * nn * sb;
        }
    }
    if !(den > 0.0) {
        return Err(Error::DegeneratePrior("quadrature denominator vanishes".into()));
    }
    Ok(num / den)
}

/// For `S` a sum of `count` uniform picks from `pi`: returns
/// `(ln E[e^{−uY}], [E_u[S^j] for j ≤ order])` where `E_u` is the
/// exponentially tilted law.
fn tilted_sum_moments(pi: &[f64], count: usize, u: f64, order: usize) -> (f64, Vec<f64>) {
    let shift = pi.iter().map(|&y| -u * y).fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = pi.iter().map(|&y| (-u * y - shift).exp()).collect();
    let z: f64 = ws.iter().sum();
    let log_phi = shift + (z / pi.len() as f64).ln();
    let mu: Vec<f64> = (0..=order).map(|j| pi.iter().zip(&ws).map(|(&y, &w)| w * y.powi(j as i32)).sum::<f64>() / z).collect();
    let binom = |n: usize, k: usize| -> f64 { (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64) };
    // Cumulants of one draw, scaled by the number of draws, then back to moments.
    let mut kappa = vec![0.0; order + 1];
    for j in 1..=order {
        let mut s = mu[j];
        for i in 1..j {
            s -= binom(j - 1, i - 1) * kappa[i] * mu[j - i];
        }
        kappa[j] = s;
    }
    let kappa_s: Vec<f64> = kappa.iter().map(|k| k * count as f64).collect();
    let mut out = vec![0.0; order + 1];
    out[0] = 1.0;
    for j in 1..=order {
        out[j] = (1..=j).map(|i| binom(j - 1, i - 1) * kappa_s[i] * out[j - i]).sum();
    }
    (log_phi, out)
}

/// `N · E_{α~π̄}[α · 1{α ∈ [a, b]}]`.
pub fn weight(prior: &FrequencyPrior, a: f64, b: f64) -> Result<f64> {
    if !(0.0 <= a && a <= b && b <= 1.0) {
        return domain(format!("need 0 ≤ a ≤ b ≤ 1, got [{a}, {b}]"));
    }
    Ok(prior.marginal().weight(a, b))
}

/// True iff `weight(π̄, [1/(2n), 1/n]) ≥ c`.
pub fn heavy_tail_predicate(prior: &FrequencyPrior, n: usize, c: f64) -> Result<bool> {
    if !(c > 0.0) || n == 0 {
        return domain("need c > 0 and n ≥ 1");
    }
    let n = n as f64;
    Ok(weight(prior, 1.0 / (2.0 * n), 1.0 / n)? >= c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tau1Bounds {
    pub tau1: f64,
    /// `(1/(5n)) · weight(π̄, [1/(3n), 2/n])`.
    pub lower: f64,
    /// `2θ` for the smallest certified `θ`, when one exists.
    pub upper: Option<f64>,
    pub theta: Option<f64>,
}

impl Tau1Bounds {
    pub fn lower_holds(&self) -> bool {
        self.tau1 >= self.lower
    }

    pub fn upper_holds(&self) -> Option<bool> {
        self.upper.map(|u| self.tau1 <= u)
    }
}

/// Evaluates `τ_1` against both bounds. The upper bound needs
/// `weight(π̄, [θ, t/n]) = 0` for some `θ ≤ 1/(2n)` with
/// `t = ln(1/(θβ))`, `β = weight(π̄, [0, θ])`; this is certified only on an
/// exactly enumerated marginal, by trying `θ` just above each atom.
pub fn tau1_bounds_check(prior: &FrequencyPrior, n: usize) -> Result<Tau1Bounds> {
    if n == 0 {
        return domain("n must be positive");
    }
    let marginal = prior.marginal();
    let tau1 = marginal.tau(1, n)?;
    let nf = n as f64;
    let lower = marginal.weight(1.0 / (3.0 * nf), 2.0 / nf) / (5.0 * nf);
    let mut theta = None;
    if marginal.exact {
        let atoms = marginal.atoms();
        let big_n = marginal.n_components() as f64;
        let mut beta = 0.0;
        for (i, &(a, w)) in atoms.iter().enumerate() {
            beta += big_n * a * w;
            let th = a * (1.0 + 1e-9);
            if th > 1.0 / (2.0 * nf) || atoms.get(i + 1).is_some_and(|next| next.0 <= th) {
                continue;
            }
            let t = (1.0 / (th * beta)).ln();
            let blocked = atoms[i + 1..].iter().any(|&(b, wb)| b <= t / nf && wb > 0.0);
            if !blocked {
                theta = Some(th);
                break;
            }
        }
    }
    Ok(Tau1Bounds { tau1, lower, upper: theta.map(|t| 2.0 * t), theta })
}

/// A mixture of `N` uniform distributions over disjoint finite supports of
/// the real line, a dataset drawn from it, and a per-point loss table.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureInstance {
    pub prior: FrequencyPrior,
    pub supports: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub dataset: Vec<f64>,
    /// `loss[i][j]` is the loss at `supports[i][j]`.
    pub loss: Vec<Vec<f64>>,
}

impl MixtureInstance {
    pub fn new(prior: FrequencyPrior, supports: Vec<Vec<f64>>, weights: Vec<f64>, dataset: Vec<f64>, loss: Vec<Vec<f64>>) -> Result<Self> {
        if supports.len() != prior.n_components || weights.len() != prior.n_components {
            return domain("need one support and one weight per component");
        }
        if supports.iter().any(|s| s.is_empty()) {
            return domain("supports must be non-empty");
        }
        let mut all: Vec<f64> = supports.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        if all.windows(2).any(|w| w[0] == w[1]) {
            return domain("supports must be pairwise disjoint");
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w < 0.0) {
            return domain("weights must be a probability vector");
        }
        if loss.len() != supports.len() || loss.iter().zip(&supports).any(|(l, s)| l.len() != s.len()) {
            return domain("loss table must match the supports");
        }
        if loss.iter().flatten().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return domain("losses must be non-negative and finite");
        }
        let inst = Self { prior, supports, weights, dataset, loss };
        for &z in &inst.dataset {
            inst.locate(z)?;
        }
        Ok(inst)
    }

    /// Draws `D ~ 𝒟_π`, then `n` points from `M_D`; the loss table starts at zero.
    pub fn draw(prior: FrequencyPrior, supports: Vec<Vec<f64>>, n: usize, seed: u64) -> Result<Self> {
        let weights = sample_mixing_weights(&prior, rng::component_seed(seed, "weights"));
        let mut r = rng::stream(rng::component_seed(seed, "dataset"), 0);
        let mut dataset = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = r.random();
            let mut acc = 0.0;
            let mut comp = weights.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = i;
                    break;
                }
            }
            let s = &supports[comp];
            dataset.push(s[r.random_range(0..s.len())]);
        }
        let loss = supports.iter().map(|s| vec![0.0; s.len()]).collect();
        Self::new(prior, supports, weights, dataset, loss)
    }

    pub fn with_loss(mut self, loss: Vec<Vec<f64>>) -> Result<Self> {
        self.loss = loss;
        Self::new(self.prior, self.supports, self.weights, self.dataset, self.loss)
    }

    /// `(component, element)` of a domain point.
    pub fn locate(&self, x: f64) -> Result<(usize, usize)> {
        for (i, s) in self.supports.iter().enumerate() {
            if let Some(j) = s.iter().position(|&y| y == x) {
                return Ok((i, j));
            }
        }
        domain(format!("point {x} lies in no support"))
    }

    /// Number of dataset entries in each component.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.supports.len()];
        for &z in &self.dataset {
            c[self.locate(z).expect("validated").0] += 1;
        }
        c
    }
}

/// Loss table `L(x) = E_z (ε̂(x_t) − z)²` at a fixed time, where `ε̂` is the
/// noise prediction of the empirical denoiser of the dataset and
/// `x_t = α_t x + σ_t z`. The expectation uses `draws` fixed-seed normals.
pub fn noise_prediction_loss_table(inst: &MixtureInstance, sched: &NoiseSchedule, t: f64, draws: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if inst.dataset.is_empty() {
        return domain("noise-prediction loss needs a non-empty dataset");
    }
    let data = SampleSet::new(inst.dataset.clone(), 1)?;
    let sigma = sched.sigma_at(t)?;
    let alpha = sched.alpha_at(t)?;
    let mut r = rng::stream(seed, 0);
    let zs = rng::normal_vec(&mut r, draws);
    inst.supports
        .iter()
        .map(|s| {
            s.iter()
                .map(|&x| {
                    let mut acc = 0.0;
                    for &z in &zs {
                        let xt = alpha * x + sigma * z;
                        let score = empirical_ddpm_score(&data, sched, &[xt], t)?[0];
                        let eps_hat = -sigma * score;
                        acc += (eps_hat - z).powi(2);
                    }
                    Ok(acc / draws as f64)
                })
                .collect()
        })
        .collect()
}

/// Both sides of the conditional error decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    /// `E_{D|Z} Σ_x M_D(x) L(x)` by enumeration over `π^N`.
    pub lhs: f64,
    pub unseen: f64,
    /// `errn_Z(ℓ)` for `ℓ = 1..=n`.
    pub errn: Vec<f64>,
    /// `τ_ℓ` for `ℓ = 1..=n`.
    pub tau: Vec<f64>,
    pub rhs: f64,
    pub gap: f64,
    /// `(component, ℓ, E[D_i | Z])` for every represented component.
    pub posterior_means: Vec<(usize, usize, f64)>,
}

/// Evaluates `err(π, A | Z)` by brute force and compares it with
/// `err_unseen + Σ_ℓ τ_ℓ · errn_Z(ℓ)`.
pub fn error_decomposition_check(inst: &MixtureInstance) -> Result<DecompositionReport> {
    let prior = &inst.prior;
    if !prior.is_enumerable() {
        return domain("instance too large for exhaustive enumeration");
    }
    let big_n = prior.n_components;
    let k = prior.k();
    let n = inst.dataset.len();
    let counts = inst.counts();
    // Posterior over assignments a ∈ [k]^N: prior uniform, likelihood Π_i D_i^{c_i}
    // (the uniform within-component factors cancel).
    let total = k.pow(big_n as u32);
    let (mass, moments) = (0..total)
        .into_par_iter()
        .fold(
            || (0.0, vec![0.0; big_n]),
            |(mut mass, mut mom), code| {
                let mut c = code;
                let raw: Vec<f64> = (0..big_n)
                    .map(|_| {
                        let p = prior.pi[c % k];
                        c /= k;
                        p
                    })
                    .collect();
                let z: f64 = raw.iter().sum();
                let d: Vec<f64> = raw.iter().map(|p| p / z).collect();
                let like: f64 = d.iter().zip(&counts).map(|(di, &ci)| di.powi(ci as i32)).product();
                mass += like;
                for (m, di) in mom.iter_mut().zip(&d) {
                    *m += like * di;
                }
                (mass, mom)
            },
        )
        .reduce(
            || (0.0, vec![0.0; big_n]),
            |(ma, mut va), (mb, vb)| {
                va.iter_mut().zip(&vb).for_each(|(a, b)| *a += b);
                (ma + mb, va)
            },
        );
    let post: Vec<f64> = moments.iter().map(|m| m / mass).collect();

    let marginal = prior.marginal();
    let tau: Vec<f64> = (1..=n).map(|ell| marginal.tau(ell, n)).collect::<Result<_>>()?;
    let mut seen: Vec<Vec<bool>> = inst.supports.iter().map(|s| vec![false; s.len()]).collect();
    for &z in &inst.dataset {
        let (i, j) = inst.locate(z)?;
        seen[i][j] = true;
    }
    let mut lhs = 0.0;
    let mut unseen = 0.0;
    let mut errn = vec![0.0; n];
    for (i, s) in inst.supports.iter().enumerate() {
        let m = 1.0 / s.len() as f64;
        for j in 0..s.len() {
            let l = inst.loss[i][j];
            lhs += post[i] * m * l;
            if seen[i][j] {
                errn[counts[i] - 1] += m * l;
            } else {
                unseen += post[i] * m * l;
            }
        }
    }
    let rhs = unseen + tau.iter().zip(&errn).map(|(t, e)| t * e).sum::<f64>();
    let posterior_means = (0..big_n).filter(|&i| counts[i] > 0).map(|i| (i, counts[i], post[i])).collect();
    Ok(DecompositionReport { lhs, unseen, errn, tau, rhs, gap: (lhs - rhs).abs(), posterior_means })
}
