//! Training objectives and the hybrid clean/noisy training loop.
//!
//! Clean samples are trained with the x0-prediction loss `‖h(x_t, t) − x_0‖²`
//! at times below `t_n`; noisy samples from the once-noised copy `S_{t_n}`
//! are trained above `t_n` with the ambient loss
//! `‖a h(x_t, t) + b x_t − x_{t_n}‖²`, whose minimizer is still `E[x_0 | x_t]`.

use rand::Rng as _;
use rayon::prelude::*;

use crate::data::{Normalizer, SampleSet};
use crate::error::{domain, Error, Result};
use crate::nn::DenoiserNet;
use crate::rng::{self, Rng};
use crate::schedule::{alpha_of, NoiseSchedule};
use crate::scores::ambient_coeffs;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;

/// Items per reduction chunk; chunk gradients are summed in chunk order.
pub const REDUCE_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Clean data only, `t ~ U(0, T)`; `t_n` is ignored.
    Ddpm,
    /// Noisy data only, `t ~ U(t_n, T)`.
    Ambient,
    /// Both sets, split at `t_n`.
    Hybrid,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ddpm => "ddpm",
            Self::Ambient => "ambient",
            Self::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(Self::Ddpm),
            "ambient" => Ok(Self::Ambient),
            "hybrid" => Ok(Self::Hybrid),
            other => domain(format!("unknown loss mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub t_n: f64,
    pub batch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: LossMode,
}

impl TrainConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if !(0.0..=sched.t_max()).contains(&self.t_n) {
            return domain(format!("t_n must lie in [0, {}], got {}", sched.t_max(), self.t_n));
        }
        if self.mode == LossMode::Ambient && self.t_n >= sched.t_max() {
            return domain("ambient training needs t_n < t_max");
        }
        if self.batch == 0 {
            return domain("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return domain("learning rate must be positive");
        }
        Ok(())
    }
}

/// `x_t = α_t x_0 + σ_t ε`; returns `(‖h(x_t, t) − x_0‖², ∇θ)`.
pub fn loss_ddpm(net: &DenoiserNet, sched: &NoiseSchedule, x0: &[f64], t: f64, eps: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(net, x0, eps)?;
    let sigma = sched.sigma_at(t)?;
    let mut grad = vec![0.0; net.params().len()];
    let loss = ddpm_into(net, sigma, x0, eps, 1.0, &mut grad);
    Ok((loss, grad))
}

/// Bridges `x_{t_n}` to `t`, then returns `(‖a h + b x_t − x_{t_n}‖², ∇θ)`.
pub fn loss_ambient(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    x_tn: &[f64],
    t: f64,
    t_n: f64,
    eps: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_dims(net, x_tn, eps)?;
    sched.check_time(t)?;
    sched.check_time(t_n)?;
    if t <= t_n {
        return domain(format!("ambient loss needs t > t_n, got t={t}, t_n={t_n}"));
    }
    let mut grad = vec![0.0; net.params().len()];
    let loss = ambient_into(net, sched.sigma(t), sched.sigma(t_n), x_tn, eps, 1.0, &mut grad);
    Ok((loss, grad))
}

fn check_dims(net: &DenoiserNet, x: &[f64], eps: &[f64]) -> Result<()> {
    if x.len() != net.dim() || eps.len() != net.dim() {
        return domain("sample and noise must match the network dimension");
    }
    Ok(())
}

fn ddpm_into(net: &DenoiserNet, sigma: f64, x0: &[f64], eps: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
    let alpha = alpha_of(sigma);
    let xt: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| alpha * x + sigma * e).collect();
    let mut loss = 0.0;
    net.backward(
        &xt,
        sigma,
        |h| {
            h.iter()
                .zip(x0)
                .map(|(h, x)| {
                    let r = h - x;
                    loss += r * r;
                    2.0 * weight * r
                })
                .collect()
        },
        grad,
    );
    loss
}

fn ambient_into(net: &DenoiserNet, sigma_t: f64, sigma_n: f64, x_tn: &[f64], eps: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
    let (c1, c2) = crate::schedule::bridge(sigma_t, sigma_n);
    let (a, b) = ambient_coeffs(sigma_t, sigma_n);
    let xt: Vec<f64> = x_tn.iter().zip(eps).map(|(x, e)| c1 * x + c2 * e).collect();
    let mut loss = 0.0;
    net.backward(
        &xt,
        sigma_t,
        |h| {
            h.iter()
                .zip(&xt)
                .zip(x_tn)
                .map(|((h, xt), xn)| {
                    let r = a * h + b * xt - xn;
                    loss += r * r;
                    2.0 * weight * a * r
                })
                .collect()
        },
        grad,
    );
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Branch {
    Ddpm,
    Ambient,
    /// Drawn but carries no loss (noisy pick when `t_n = T`).
    Skipped,
}

/// One drawn batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub from_noisy: bool,
    pub index: usize,
    pub branch: Branch,
    pub t: f64,
    pub eps: Vec<f64>,
}

impl BatchItem {
    fn key(&self) -> (bool, usize, u64, Vec<u64>) {
        (self.from_noisy, self.index, self.t.to_bits(), self.eps.iter().map(|e| e.to_bits()).collect())
    }
}

/// Counts of set membership and loss branches over drawn items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BranchCounts {
    pub clean_picks: usize,
    pub noisy_picks: usize,
    pub ddpm: usize,
    pub ambient: usize,
    pub skipped: usize,
}

impl BranchCounts {
    fn add(&mut self, item: &BatchItem) {
        if item.from_noisy {
            self.noisy_picks += 1;
        } else {
            self.clean_picks += 1;
        }
        match item.branch {
            Branch::Ddpm => self.ddpm += 1,
            Branch::Ambient => self.ambient += 1,
            Branch::Skipped => self.skipped += 1,
        }
    }
}

/// Draws a batch following the training algorithm: items uniform over
/// `S ∪ S_{t_n}`, noisy items at `t ~ U(t_n, T]`, clean items at
/// `t ~ U[0, t_n)`. With `t_n = 0` the two sets coincide and every item takes
/// the ambient branch (which then equals the DDPM loss).
pub fn draw_batch(n: usize, dim: usize, cfg: &TrainConfig, sched: &NoiseSchedule, r: &mut Rng) -> Vec<BatchItem> {
    let t_max = sched.t_max();
    (0..cfg.batch)
        .map(|_| {
            let (from_noisy, index) = match cfg.mode {
                LossMode::Ddpm => (false, r.random_range(0..n)),
                LossMode::Ambient => (true, r.random_range(0..n)),
                LossMode::Hybrid => {
                    let k = r.random_range(0..2 * n);
                    (k >= n, k % n)
                }
            };
            let u: f64 = r.random();
            let eps = rng::normal_vec(r, dim);
            let (branch, t) = match cfg.mode {
                LossMode::Ddpm => (Branch::Ddpm, u * t_max),
                _ if cfg.t_n == 0.0 => (Branch::Ambient, t_max - u * t_max),
                _ if from_noisy && cfg.t_n >= t_max => (Branch::Skipped, t_max),
                _ if from_noisy => (Branch::Ambient, t_max - u * (t_max - cfg.t_n)),
                _ => (Branch::Ddpm, u * cfg.t_n),
            };
            BatchItem { from_noisy, index, branch, t, eps }
        })
        .collect()
}

/// Mean loss and gradient over a batch. Items are put in a canonical order
/// and reduced in fixed chunks, so the result does not depend on the order
/// of `items` or on the number of threads.
pub fn batch_loss_grad(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    clean: &SampleSet,
    noisy: &SampleSet,
    t_n: f64,
    items: &[BatchItem],
) -> (f64, Vec<f64>) {
    let (loss, _, grad) = batch_eval(net, sched, clean, noisy, t_n, items);
    (loss, grad)
}

/// Mean loss, per-item losses (in the order of `items`) and the mean-loss
/// gradient.
fn batch_eval(
    net: &DenoiserNet,
    sched: &NoiseSchedule,
    clean: &SampleSet,
    noisy: &SampleSet,
    t_n: f64,
    items: &[BatchItem],
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_cached_key(|&i| items[i].key());
    let weight = 1.0 / items.len().max(1) as f64;
    let sigma_n = sched.sigma(t_n);
    let p = net.params().len();
    let d = net.dim();
    let parts: Vec<(Vec<(usize, f64)>, Vec<f64>)> = order
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; p];
            let live: Vec<usize> = chunk.iter().copied().filter(|&i| items[i].branch != Branch::Skipped).collect();
            let mut losses: Vec<(usize, f64)> = chunk.iter().map(|&i| (i, 0.0)).collect();
            if live.is_empty() {
                return (losses, grad);
            }
            // Each item's residual is `a h + b x_t − target`.
            let mut xs = Vec::with_capacity(live.len() * d);
            let mut sigmas = Vec::with_capacity(live.len());
            let mut lin = Vec::with_capacity(live.len());
            for &i in &live {
                let it = &items[i];
                let sigma = sched.sigma(it.t);
                sigmas.push(sigma);
                match it.branch {
                    Branch::Ddpm => {
                        let x0 = clean.row(it.index);
                        let alpha = alpha_of(sigma);
                        xs.extend(x0.iter().zip(&it.eps).map(|(x, e)| alpha * x + sigma * e));
                        lin.push((1.0, 0.0, x0));
                    }
                    _ => {
                        let x = if it.from_noisy { noisy.row(it.index) } else { clean.row(it.index) };
                        let (c1, c2) = crate::schedule::bridge(sigma, sigma_n);
                        let (a, b) = ambient_coeffs(sigma, sigma_n);
                        xs.extend(x.iter().zip(&it.eps).map(|(x, e)| c1 * x + c2 * e));
                        lin.push((a, b, x));
                    }
                }
            }
            let mut item_loss = vec![0.0; live.len()];
            net.backward_batch(
                &xs,
                &sigmas,
                |h| {
                    let mut up = vec![0.0; h.len()];
                    for (j, &(a, b, target)) in lin.iter().enumerate() {
                        for k in 0..d {
                            let r = a * h[j * d + k] + b * xs[j * d + k] - target[k];
                            item_loss[j] += r * r;
                            up[j * d + k] = 2.0 * weight * a * r;
                        }
                    }
                    up
                },
                &mut grad,
            );
            for (slot, l) in losses.iter_mut().filter(|(i, _)| items[*i].branch != Branch::Skipped).zip(item_loss) {
                slot.1 = l;
            }
            (losses, grad)
        })
        .collect();
    let mut grad = vec![0.0; p];
    let mut losses = vec![0.0; items.len()];
    let mut total = 0.0;
    for (ls, g) in parts {
        for (i, l) in ls {
            total += l;
            losses[i] = l;
        }
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total * weight, losses, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self { lr, m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Per-iteration training statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Mean per-item loss over DDPM-branch items, if any were drawn.
    pub ddpm_loss: Option<f64>,
    pub ambient_loss: Option<f64>,
    pub counts: BranchCounts,
}

/// One optimizer update on a freshly drawn batch.
#[allow(clippy::too_many_arguments)]
pub fn hybrid_step(
    net: &mut DenoiserNet,
    opt: &mut Adam,
    sched: &NoiseSchedule,
    clean: &SampleSet,
    noisy: &SampleSet,
    cfg: &TrainConfig,
    r: &mut Rng,
) -> Result<StepReport> {
    if clean.is_empty() || noisy.is_empty() {
        return domain("training sets must be non-empty");
    }
    if clean.len() != noisy.len() || clean.dim() != noisy.dim() || clean.dim() != net.dim() {
        return domain("clean and noisy sets must have equal size and the network's dimension");
    }
    let items = draw_batch(clean.len(), clean.dim(), cfg, sched, r);
    let (loss, losses, grad) = batch_eval(net, sched, clean, noisy, cfg.t_n, &items);
    opt.update(net.params_mut(), &grad);

    let mut counts = BranchCounts::default();
    let (mut dl, mut al) = (0.0, 0.0);
    for (it, l) in items.iter().zip(&losses) {
        counts.add(it);
        match it.branch {
            Branch::Ddpm => dl += l,
            Branch::Ambient => al += l,
            Branch::Skipped => {}
        }
    }
    let ddpm_loss = (counts.ddpm > 0).then(|| dl / counts.ddpm as f64);
    let ambient_loss = (counts.ambient > 0).then(|| al / counts.ambient as f64);
    Ok(StepReport { loss, ddpm_loss, ambient_loss, counts })
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub net: DenoiserNet,
    pub normalizer: Normalizer,
    /// Batch loss before each update.
    pub losses: Vec<StepReport>,
    /// How many times the noisy copy `S_{t_n}` was generated.
    pub noisy_constructions: usize,
}

/// Trains a denoiser on `data`: normalizes it, noises it once at `t_n`, then
/// runs `cfg.iterations` hybrid steps.
pub fn train(data: &SampleSet, sched: &NoiseSchedule, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate(sched)?;
    if data.len() < 2 {
        return domain("training needs at least two points");
    }
    let normalizer = Normalizer::fit(data);
    let clean = normalizer.normalize(data)?;
    let noisy = clean.noised(sched, cfg.t_n, rng::component_seed(cfg.seed, "noisy-set"))?;
    let mut net = DenoiserNet::init(clean.dim(), rng::component_seed(cfg.seed, "init"))?;
    let mut opt = Adam::new(net.params().len(), cfg.learning_rate);
    let mut r = rng::stream(rng::component_seed(cfg.seed, "batches"), 0);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rep = hybrid_step(&mut net, &mut opt, sched, &clean, &noisy, cfg, &mut r)?;
        if !rep.loss.is_finite() || net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingDiverged { iteration: it });
        }
        losses.push(rep);
    }
    Ok(TrainedModel { net, normalizer, losses, noisy_constructions: 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (DenoiserNet, NoiseSchedule) {
        (DenoiserNet::init(2, 3).unwrap(), NoiseSchedule::default())
    }

    #[test]
    fn ambient_with_clean_level_equals_ddpm() {
        let (net, s) = setup();
        let (x, eps) = ([0.4, -1.1], [0.3, 0.9]);
        for t in [0.05, 0.5, 1.0] {
            let a = loss_ddpm(&net, &s, &x, t, &eps).unwrap();
            let b = loss_ambient(&net, &s, &x, t, 0.0, &eps).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn ambient_loss_domain() {
        let (net, s) = setup();
        assert!(loss_ambient(&net, &s, &[0.0, 0.0], 0.3, 0.3, &[0.0, 0.0]).is_err());
        assert!(loss_ambient(&net, &s, &[0.0, 0.0], 0.2, 0.3, &[0.0, 0.0]).is_err());
        assert!(loss_ddpm(&net, &s, &[0.0], 0.2, &[0.0]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -1.0, 0.5];
        let mut opt = Adam::new(3, 0.01);
        opt.update(&mut p, &[2.0, -3.0, 0.0]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn batch_draw_respects_time_ranges() {
        let s = NoiseSchedule::default();
        let cfg = TrainConfig { t_n: 0.4, batch: 500, iterations: 0, learning_rate: 1e-3, seed: 0, mode: LossMode::Hybrid };
        let mut r = rng::stream(1, 0);
        for it in draw_batch(10, 2, &cfg, &s, &mut r) {
            match it.branch {
                Branch::Ambient => assert!(it.from_noisy && it.t > 0.4 && it.t <= 1.0),
                Branch::Ddpm => assert!(!it.from_noisy && it.t >= 0.0 && it.t < 0.4),
                Branch::Skipped => panic!("no skipped items below t_max"),
            }
        }
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("hybrid".parse::<LossMode>().unwrap(), LossMode::Hybrid);
        assert!("edm".parse::<LossMode>().is_err());
    }
}
