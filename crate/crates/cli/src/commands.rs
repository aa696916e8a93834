//! Subcommand implementations. Each writes its artifacts under the output
//! directory and returns the paths it wrote.

use std::path::{Path, PathBuf};

use diffmem::checkpoint::Checkpoint;
use diffmem::gmmnoise;
use diffmem::infotheory;
use diffmem::metrics::{self, SweepEntry};
use diffmem::rng;
use diffmem::sampler::{reverse_ode_sample, SampleOptions, TrajectoryRecord};
use diffmem::subpop::{self, MixtureInstance, TauMethod};
use diffmem::trainer::{self, LossMode, TrainedModel};
use diffmem::{Error, Normalizer, SampleSet, ScoreField};
use rand::Rng as _;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{self, num, opt, Table};

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSSES_FILE: &str = "losses.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PARETO_FILE: &str = "pareto.csv";
pub const MI_FILE: &str = "mi.csv";
pub const TAU_FILE: &str = "tau.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const BOUNDS_FILE: &str = "tau1_bounds.csv";
pub const DECOMPOSITION_FILE: &str = "decomposition.csv";
pub const GMM_FILE: &str = "gmm.csv";
pub const GMM_THRESHOLDS_FILE: &str = "gmm_thresholds.csv";

/// Writes the resolved configuration next to the command's outputs.
pub fn echo_config(cfg: &ExperimentConfig) -> CliResult<PathBuf> {
    let path = cfg.out.join(CONFIG_FILE);
    output::write_file(&path, cfg.raw.render().as_bytes())?;
    Ok(path)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<SampleSet> {
    match &cfg.dataset {
        DatasetSpec::Ring { n, mixture } => Ok(mixture.sample(*n, rng::component_seed(cfg.seed, "dataset"))?),
        DatasetSpec::File(path) => output::read_matrix(path),
    }
}

/// Fresh draws from the true distribution, when it is known.
pub fn heldout(cfg: &ExperimentConfig, n: usize) -> CliResult<Option<SampleSet>> {
    match &cfg.dataset {
        DatasetSpec::Ring { mixture, .. } => Ok(Some(mixture.sample(n, rng::component_seed(cfg.seed, "heldout"))?)),
        DatasetSpec::File(_) => Ok(None),
    }
}

pub fn train(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let data = load_dataset(cfg)?;
    let tc = cfg.train_config(cfg.train.sigma_tn)?;
    let model = trainer::train(&data, &cfg.schedule, &tc)?;
    write_model(cfg, &cfg.out, &model)
}

fn write_model(cfg: &ExperimentConfig, dir: &Path, model: &TrainedModel) -> CliResult<Vec<PathBuf>> {
    let ckpt = dir.join(CHECKPOINT_FILE);
    let bytes = Checkpoint::new(model.net.clone(), model.normalizer.clone())?.encode();
    output::write_file(&ckpt, &bytes)?;
    let mut t = Table::new(
        "losses/1",
        &["iteration", "loss", "ddpm_loss", "ambient_loss", "clean_picks", "noisy_picks", "skipped"],
    );
    for (i, r) in model.losses.iter().enumerate() {
        t.push(vec![
            i.to_string(),
            num(r.loss),
            opt(r.ddpm_loss),
            opt(r.ambient_loss),
            r.counts.clean_picks.to_string(),
            r.counts.noisy_picks.to_string(),
            r.counts.skipped.to_string(),
        ]);
    }
    let losses = dir.join(LOSSES_FILE);
    t.write(&losses, cfg.seed)?;
    Ok(vec![ckpt, losses])
}

fn generate(cfg: &ExperimentConfig, ckpt: &Checkpoint, record: bool) -> diffmem::Result<(SampleSet, TrajectoryRecord)> {
    let field = ScoreField::learned(ckpt.net.clone(), cfg.schedule.clone());
    let opts = SampleOptions {
        n: cfg.sample.n,
        steps: cfg.sample.steps,
        stop_t: cfg.sample.stop_t,
        seed: rng::component_seed(cfg.seed, "sample"),
        record,
    };
    let rec = reverse_ode_sample(&field, opts)?;
    let gen = ckpt.normalizer.denormalize(&SampleSet::new(rec.finals.clone(), rec.dim)?)?;
    Ok((gen, rec))
}

pub fn sample(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let ckpt = Checkpoint::load(&cfg.sample.checkpoint)?;
    let (gen, rec) = generate(cfg, &ckpt, cfg.sample.record)?;
    let path = cfg.out.join(SAMPLES_FILE);
    output::matrix_table("samples/1", &gen).write(&path, cfg.seed)?;
    let mut written = vec![path];
    if cfg.sample.record {
        written.push(write_trajectory(cfg, &rec, &ckpt.normalizer)?);
    }
    Ok(written)
}

fn write_trajectory(cfg: &ExperimentConfig, rec: &TrajectoryRecord, norm: &Normalizer) -> CliResult<PathBuf> {
    let mut header = vec!["step", "t", "index"];
    let coords: Vec<String> = (0..rec.dim).map(|k| format!("x{k}")).collect();
    header.extend(coords.iter().map(String::as_str));
    let mut t = Table::new("trajectory/1", &header);
    for (&step, states) in rec.snapshot_steps.iter().zip(&rec.states) {
        let set = norm.denormalize(&SampleSet::new(states.clone(), rec.dim)?)?;
        for (i, row) in set.rows().enumerate() {
            let mut cells = vec![step.to_string(), num(rec.times[step]), i.to_string()];
            cells.extend(row.iter().copied().map(num));
            t.push(cells);
        }
    }
    let path = cfg.out.join(TRAJECTORY_FILE);
    t.write(&path, cfg.seed)?;
    Ok(path)
}

/// Memorization and, when a reference set is available, quality metrics.
pub struct Evaluation {
    pub table: Table,
    pub memorized_fraction: f64,
    pub w2: Option<f64>,
}

pub fn evaluate(cfg: &ExperimentConfig, gen: &SampleSet, train: &SampleSet, reference: Option<&SampleSet>) -> CliResult<Evaluation> {
    let delta = cfg.eval.delta_fraction * train.data_scale();
    let rep = metrics::nn_similarity_with_delta(gen, train, &cfg.eval.thresholds, delta)?;
    let mut table = Table::new(metrics::METRIC_SCHEMA, &["metric", "threshold", "value"]);
    let mut rows = rep.rows();
    let mut w2 = None;
    if let Some(reference) = reference {
        let w = metrics::exact_w2(gen, reference)?;
        let fr = metrics::gaussian_frechet(gen, reference)?;
        rows.push(metrics::MetricRow::new("w2", None, w));
        rows.push(metrics::MetricRow::new("frechet", None, fr.distance));
        rows.push(metrics::MetricRow::new("frechet_regularized", None, if fr.regularized { 1.0 } else { 0.0 }));
        w2 = Some(w);
    }
    for r in rows {
        table.push(vec![r.metric, opt(r.threshold), num(r.value)]);
    }
    Ok(Evaluation { table, memorized_fraction: rep.delta_fraction, w2 })
}

pub fn eval(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let gen = output::read_matrix(&cfg.eval.samples)?;
    let train = load_dataset(cfg)?;
    let reference = match &cfg.eval.reference {
        Some(path) => Some(output::read_matrix(path)?),
        None => heldout(cfg, gen.len())?,
    };
    let ev = evaluate(cfg, &gen, &train, reference.as_ref())?;
    let path = cfg.out.join(METRICS_FILE);
    ev.table.write(&path, cfg.seed)?;
    Ok(vec![path])
}

/// Outcome of one sweep leg.
#[derive(Debug, Clone, PartialEq)]
pub enum LegOutcome {
    Done(SweepEntry),
    Diverged(String),
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::TrainingDiverged { .. } | Error::IntegrationDiverged { .. })
}

fn run_leg(cfg: &ExperimentConfig, dir: &Path, sigma_tn: f64, data: &SampleSet, reference: &SampleSet) -> CliResult<LegOutcome> {
    let mut tc = cfg.train_config(sigma_tn)?;
    if sigma_tn == 0.0 {
        tc.mode = LossMode::Ddpm;
    }
    let model = match trainer::train(data, &cfg.schedule, &tc) {
        Ok(m) => m,
        Err(e) if is_divergence(&e) => return Ok(LegOutcome::Diverged(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    write_model(cfg, dir, &model)?;
    let ckpt = Checkpoint::new(model.net, model.normalizer)?;
    let gen = match generate(cfg, &ckpt, false) {
        Ok((g, _)) => g,
        Err(e) if is_divergence(&e) => return Ok(LegOutcome::Diverged(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    output::matrix_table("samples/1", &gen).write(&dir.join(SAMPLES_FILE), cfg.seed)?;
    let ev = evaluate(cfg, &gen, data, Some(reference))?;
    ev.table.write(&dir.join(METRICS_FILE), cfg.seed)?;
    let quality = ev.w2.expect("reference set supplied");
    Ok(LegOutcome::Done(SweepEntry { sigma_tn, quality, memorization: ev.memorized_fraction }))
}

pub fn leg_dir(out: &Path, index: usize) -> PathBuf {
    out.join(format!("leg{index}"))
}

/// Trains, samples and evaluates one model per `σ_{t_n}`, then writes the
/// Pareto table. Diverged legs are reported and skipped.
pub fn sweep(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.train.mode == LossMode::Ddpm {
        return Err(CliError::Usage("sweep needs train.mode = hybrid or ambient for the noisy legs".into()));
    }
    let data = load_dataset(cfg)?;
    let reference = match &cfg.eval.reference {
        Some(path) => output::read_matrix(path)?,
        None => heldout(cfg, cfg.sample.n)?
            .ok_or_else(|| CliError::Usage("sweep on a file dataset needs eval.reference".into()))?,
    };
    let mut legs = Vec::with_capacity(cfg.sweep_sigmas.len());
    for (i, &sigma) in cfg.sweep_sigmas.iter().enumerate() {
        let outcome = run_leg(cfg, &leg_dir(&cfg.out, i), sigma, &data, &reference)?;
        if let LegOutcome::Diverged(msg) = &outcome {
            eprintln!("sweep leg {i} (sigma_tn = {sigma}) diverged: {msg}");
        }
        legs.push((i, sigma, outcome));
    }

    let done: Vec<SweepEntry> = legs.iter().filter_map(|(_, _, o)| if let LegOutcome::Done(e) = o { Some(*e) } else { None }).collect();
    let frontier: Vec<SweepEntry> = match done.len() {
        0 => Vec::new(),
        1 => done.clone(),
        _ => metrics::pareto_sweep(&done)?.into_iter().filter(|r| r.on_frontier).map(|r| r.entry).collect(),
    };
    let mut order: Vec<usize> = (0..legs.len()).collect();
    order.sort_by(|&a, &b| legs[a].1.total_cmp(&legs[b].1));
    let mut t = Table::new("pareto/1", &["leg", "sigma_tn", "t_n", "status", "w2", "memorized_fraction", "on_frontier"]);
    for k in order {
        let (i, sigma, outcome) = &legs[k];
        let t_n = cfg.train_config(*sigma)?.t_n;
        let row = match outcome {
            LegOutcome::Done(e) => vec![
                i.to_string(),
                num(*sigma),
                num(t_n),
                "ok".into(),
                num(e.quality),
                num(e.memorization),
                frontier.contains(e).to_string(),
            ],
            LegOutcome::Diverged(_) => {
                vec![i.to_string(), num(*sigma), num(t_n), "diverged".into(), String::new(), String::new(), "false".into()]
            }
        };
        t.push(row);
    }
    let path = cfg.out.join(PARETO_FILE);
    t.write(&path, cfg.seed)?;
    if done.is_empty() {
        return Err(CliError::Runtime("every sweep leg diverged".into()));
    }
    Ok(vec![path])
}

pub fn mi(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let p = &cfg.mi;
    let d = p.dim;
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        cov[i * d + i] = p.variance;
    }
    // The simulation assumes a standard normal prior in one dimension.
    let simulate = p.mc_draws > 0 && d == 1 && p.variance == 1.0;
    let mut t = Table::new("mi/1", &["sigma_tn", "mi_ambient", "mi_ddpm", "bound", "mi_monte_carlo", "regularized"]);
    for &s in &p.sigma_tn {
        let r = infotheory::mi_single_point(&cov, d, s, p.m)?;
        let bound = infotheory::mi_dataset_bound(d, s, p.m)?;
        let mc = if simulate { Some(infotheory::mi_monte_carlo_gaussian(s, p.mc_draws, rng::component_seed(cfg.seed, "mi"))?) } else { None };
        t.push(vec![num(s), num(r.mi_ambient), num(r.mi_ddpm), num(bound), opt(mc), r.regularized.to_string()]);
    }
    let path = cfg.out.join(MI_FILE);
    t.write(&path, cfg.seed)?;
    Ok(vec![path])
}

/// Support of component `i` in the decomposition instances.
pub fn instance_support(i: usize) -> Vec<f64> {
    let base = 10.0 * i as f64;
    vec![base, base + 1.0, base + 2.0]
}

pub fn subpop(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let p = &cfg.subpop;
    let prior = p.frequency_prior()?;
    let n = p.n;
    let mut written = Vec::new();

    let mut t = Table::new("tau/1", &["ell", "tau", "method", "monte_carlo"]);
    for ell in 1..=n {
        let r = subpop::tau(ell, n, &prior)?;
        let method = match r.method {
            TauMethod::Exact => "exact",
            TauMethod::Quadrature => "quadrature",
        };
        t.push(vec![ell.to_string(), num(r.value), method.into(), opt(r.monte_carlo)]);
    }
    let path = cfg.out.join(TAU_FILE);
    t.write(&path, cfg.seed)?;
    written.push(path);

    let nf = n as f64;
    let mut intervals = vec![(1.0 / (2.0 * nf), 1.0 / nf), (1.0 / (3.0 * nf), (2.0 / nf).min(1.0))];
    intervals.extend((0..p.weight_bins).map(|j| (0.5f64.powi(j as i32 + 1), 0.5f64.powi(j as i32))));
    let mut t = Table::new("weights/1", &["lower", "upper", "weight"]);
    for (a, b) in intervals {
        t.push(vec![num(a), num(b), num(subpop::weight(&prior, a, b)?)]);
    }
    let path = cfg.out.join(WEIGHTS_FILE);
    t.write(&path, cfg.seed)?;
    written.push(path);

    let b = subpop::tau1_bounds_check(&prior, n)?;
    let heavy = subpop::heavy_tail_predicate(&prior, n, p.heavy_c)?;
    let mut t = Table::new("tau1-bounds/1", &["tau1", "lower", "upper", "theta", "lower_holds", "upper_holds", "heavy_tail"]);
    t.push(vec![
        num(b.tau1),
        num(b.lower),
        opt(b.upper),
        opt(b.theta),
        b.lower_holds().to_string(),
        b.upper_holds().map(|v| v.to_string()).unwrap_or_default(),
        heavy.to_string(),
    ]);
    let path = cfg.out.join(BOUNDS_FILE);
    t.write(&path, cfg.seed)?;
    written.push(path);

    if p.instances > 0 {
        if !prior.is_enumerable() {
            eprintln!("subpop: prior too large for exhaustive enumeration; decomposition check skipped");
            return Ok(written);
        }
        let supports: Vec<Vec<f64>> = (0..prior.n_components).map(instance_support).collect();
        let mut t = Table::new("decomposition/1", &["instance", "lhs", "unseen", "rhs", "gap"]);
        for j in 0..p.instances {
            let inst = MixtureInstance::draw(prior.clone(), supports.clone(), n, rng::component_seed(cfg.seed, &format!("subpop-instance-{j}")))?;
            let mut r = rng::stream(rng::component_seed(cfg.seed, &format!("subpop-loss-{j}")), 0);
            let loss = supports.iter().map(|s| s.iter().map(|_| r.random::<f64>()).collect()).collect();
            let rep = subpop::error_decomposition_check(&inst.with_loss(loss)?)?;
            t.push(vec![j.to_string(), num(rep.lhs), num(rep.unseen), num(rep.rhs), num(rep.gap)]);
        }
        let path = cfg.out.join(DECOMPOSITION_FILE);
        t.write(&path, cfg.seed)?;
        written.push(path);
    }
    Ok(written)
}

pub fn gmm(cfg: &ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let p = &cfg.gmm;
    let mut t = Table::new("gmm/1", &["sigma_t", "tv", "status"]);
    for j in 0..p.points {
        let s = j as f64 / p.points as f64;
        let tv = gmmnoise::tv_at_noise(&p.mu1, &p.mu2, s)?;
        t.push(vec![num(s), num(tv), gmmnoise::status_from_tv(tv, p.epsilon).as_str().into()]);
    }
    let path = cfg.out.join(GMM_FILE);
    t.write(&path, cfg.seed)?;

    let gap = p.mu1.iter().zip(&p.mu2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let c = gmmnoise::tv_from_distance(gap);
    let mut th = Table::new("gmm-thresholds/1", &["threshold", "sigma_t"]);
    th.push(vec!["merge".into(), num(gmmnoise::merge_threshold(p.epsilon, gap))]);
    th.push(vec!["separation".into(), opt(gmmnoise::separation_threshold(p.epsilon, gap))]);
    th.push(vec!["merge_tv".into(), num(gmmnoise::merge_threshold_tv(p.epsilon, c))]);
    th.push(vec!["separation_tv".into(), opt(gmmnoise::separation_threshold_tv(p.epsilon, c))]);
    let thresholds = cfg.out.join(GMM_THRESHOLDS_FILE);
    th.write(&thresholds, cfg.seed)?;
    Ok(vec![path, thresholds])
}
