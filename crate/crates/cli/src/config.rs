//! Flat `key = value` experiment configuration.
//!
//! Lines are `dotted.key = value`; blank lines and lines starting with `#`
//! are ignored. Lists are comma-separated. Every key has a default, unknown
//! keys are rejected, and the whole configuration is validated when loaded.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diffmem::schedule::NoiseSchedule;
use diffmem::trainer::{LossMode, TrainConfig};

use crate::error::{CliError, CliResult};

/// Every recognised key with its default value.
pub const DEFAULTS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("output.dir", "out"),
    ("dataset.kind", "ring"),
    ("dataset.path", ""),
    ("dataset.n", "32"),
    ("dataset.components", "8"),
    ("dataset.radius", "2"),
    ("dataset.std", "0.2"),
    ("schedule.kind", "linear"),
    ("schedule.sigma_max", "0.995"),
    ("schedule.t_min", "0.001"),
    ("train.mode", "hybrid"),
    ("train.sigma_tn", "0.4"),
    ("train.batch", "128"),
    ("train.iterations", "15000"),
    ("train.learning_rate", "0.001"),
    ("sweep.sigma_tn", "0, 0.1, 0.4, 0.7"),
    ("sample.n", "2048"),
    ("sample.steps", "64"),
    ("sample.stop_t", ""),
    ("sample.record", "false"),
    ("sample.checkpoint", ""),
    ("eval.samples", ""),
    ("eval.reference", ""),
    ("eval.thresholds", "0.9, 0.95, 0.99"),
    ("eval.delta_fraction", "0.05"),
    ("mi.sigma_tn", "0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9"),
    ("mi.dim", "1"),
    ("mi.variance", "1"),
    ("mi.m", "1"),
    ("mi.mc_draws", "0"),
    ("subpop.prior", "zipf"),
    ("subpop.pi", ""),
    ("subpop.k", "2"),
    ("subpop.components", "3"),
    ("subpop.n", "2"),
    ("subpop.heavy_c", "0.1"),
    ("subpop.weight_bins", "8"),
    ("subpop.instances", "20"),
    ("gmm.mu1", "0, 0"),
    ("gmm.mu2", "1, 0"),
    ("gmm.epsilon", "0.01"),
    ("gmm.points", "100"),
];

/// Key/value pairs after defaults, file contents and overrides are merged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!("config line {}: expected `key = value`", no + 1)));
            };
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), no + 1) {
                return Err(CliError::Usage(format!("config line {}: `{key}` already set on line {prev}", no + 1)));
            }
            cfg.set(key, value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.into();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    /// All keys in sorted order, one `key = value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn parse_as<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.get(key);
        raw.parse().map_err(|e| CliError::Usage(format!("{key}: invalid value `{raw}` ({e})")))
    }

    fn list(&self, key: &str) -> CliResult<Vec<f64>> {
        let raw = self.get(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| CliError::Usage(format!("{key}: invalid number `{}` ({e})", s.trim()))))
            .collect()
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.get(key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Ring { n: usize, mixture: diffmem::RingMixture },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub mode: LossMode,
    pub sigma_tn: f64,
    pub batch: usize,
    pub iterations: usize,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleParams {
    pub n: usize,
    pub steps: usize,
    pub stop_t: f64,
    pub record: bool,
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalParams {
    pub samples: PathBuf,
    pub reference: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub delta_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiParams {
    pub sigma_tn: Vec<f64>,
    pub dim: usize,
    pub variance: f64,
    pub m: usize,
    pub mc_draws: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    Zipf(usize),
    PointMass,
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubpopParams {
    pub prior: PriorSpec,
    pub components: usize,
    pub n: usize,
    pub heavy_c: f64,
    pub weight_bins: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub epsilon: f64,
    pub points: usize,
}

/// A fully validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetSpec,
    pub schedule: NoiseSchedule,
    pub train: TrainParams,
    pub sweep_sigmas: Vec<f64>,
    pub sample: SampleParams,
    pub eval: EvalParams,
    pub mi: MiParams,
    pub subpop: SubpopParams,
    pub gmm: GmmParams,
}

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn require(ok: bool, msg: &str) -> CliResult<()> {
    if ok {
        Ok(())
    } else {
        usage(msg)
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> CliResult<Self> {
        let seed = raw.parse_as::<u64>("seed")?;
        let out = raw.path("output.dir").ok_or_else(|| CliError::Usage("output.dir must not be empty".into()))?;

        let dataset = match raw.get("dataset.kind") {
            "ring" => {
                let n = raw.parse_as::<usize>("dataset.n")?;
                let mixture = diffmem::RingMixture {
                    components: raw.parse_as("dataset.components")?,
                    radius: raw.parse_as("dataset.radius")?,
                    std: raw.parse_as("dataset.std")?,
                };
                require(n >= 2, "dataset.n must be at least 2")?;
                require(mixture.components >= 1, "dataset.components must be positive")?;
                require(mixture.radius.is_finite() && mixture.radius >= 0.0, "dataset.radius must be finite and non-negative")?;
                require(mixture.std.is_finite() && mixture.std > 0.0, "dataset.std must be positive")?;
                DatasetSpec::Ring { n, mixture }
            }
            "file" => DatasetSpec::File(raw.path("dataset.path").ok_or_else(|| CliError::Usage("dataset.kind = file needs dataset.path".into()))?),
            other => return usage(format!("dataset.kind: expected `ring` or `file`, got `{other}`")),
        };

        require(raw.get("schedule.kind") == "linear", "schedule.kind: only `linear` is supported")?;
        let schedule = NoiseSchedule::linear(raw.parse_as("schedule.sigma_max")?, raw.parse_as("schedule.t_min")?)
            .map_err(|e| CliError::Usage(format!("schedule: {e}")))?;

        let train = TrainParams {
            mode: raw.parse_as("train.mode")?,
            sigma_tn: raw.parse_as("train.sigma_tn")?,
            batch: raw.parse_as("train.batch")?,
            iterations: raw.parse_as("train.iterations")?,
            learning_rate: raw.parse_as("train.learning_rate")?,
        };
        let probe = train_config(&schedule, &train, train.sigma_tn, seed)?;
        probe.validate(&schedule).map_err(|e| CliError::Usage(format!("train: {e}")))?;

        let sweep_sigmas = raw.list("sweep.sigma_tn")?;
        require(sweep_sigmas.len() >= 2, "sweep.sigma_tn needs at least two values")?;
        require(sweep_sigmas.contains(&0.0), "sweep.sigma_tn must include 0 (the DDPM baseline)")?;
        for (i, &s) in sweep_sigmas.iter().enumerate() {
            require(s >= 0.0 && s < schedule.sigma_max(), "sweep.sigma_tn values must lie in [0, schedule.sigma_max)")?;
            require(!sweep_sigmas[..i].contains(&s), "sweep.sigma_tn values must be distinct")?;
        }

        let stop_t = match raw.get("sample.stop_t") {
            "" => schedule.t_min(),
            _ => raw.parse_as("sample.stop_t")?,
        };
        let sample = SampleParams {
            n: raw.parse_as("sample.n")?,
            steps: raw.parse_as("sample.steps")?,
            stop_t,
            record: raw.parse_as("sample.record")?,
            checkpoint: raw.path("sample.checkpoint").unwrap_or_else(|| out.join(crate::commands::CHECKPOINT_FILE)),
        };
        require(sample.n >= 1, "sample.n must be positive")?;
        require(sample.steps >= 1, "sample.steps must be positive")?;
        require(
            sample.stop_t >= schedule.t_min() && sample.stop_t < schedule.t_max(),
            "sample.stop_t must lie in [schedule.t_min, 1)",
        )?;

        let eval = EvalParams {
            samples: raw.path("eval.samples").unwrap_or_else(|| out.join(crate::commands::SAMPLES_FILE)),
            reference: raw.path("eval.reference"),
            thresholds: raw.list("eval.thresholds")?,
            delta_fraction: raw.parse_as("eval.delta_fraction")?,
        };
        require(eval.thresholds.iter().all(|t| (-1.0..=1.0).contains(t)), "eval.thresholds must lie in [-1, 1]")?;
        require(eval.delta_fraction > 0.0 && eval.delta_fraction.is_finite(), "eval.delta_fraction must be positive")?;

        let mi = MiParams {
            sigma_tn: raw.list("mi.sigma_tn")?,
            dim: raw.parse_as("mi.dim")?,
            variance: raw.parse_as("mi.variance")?,
            m: raw.parse_as("mi.m")?,
            mc_draws: raw.parse_as("mi.mc_draws")?,
        };
        require(!mi.sigma_tn.is_empty(), "mi.sigma_tn must not be empty")?;
        require(mi.sigma_tn.iter().all(|&s| s > 0.0 && s < 1.0), "mi.sigma_tn values must lie in (0, 1)")?;
        require(mi.dim >= 1 && mi.m >= 1, "mi.dim and mi.m must be positive")?;
        require(mi.variance >= 0.0 && mi.variance.is_finite(), "mi.variance must be non-negative")?;
        require(
            mi.mc_draws == 0 || mi.mc_draws >= diffmem::infotheory::MIN_MC_DRAWS,
            "mi.mc_draws must be 0 or at least 10000",
        )?;

        let prior = match raw.get("subpop.prior") {
            "zipf" => PriorSpec::Zipf(raw.parse_as("subpop.k")?),
            "point-mass" => PriorSpec::PointMass,
            "list" => PriorSpec::List(raw.list("subpop.pi")?),
            other => return usage(format!("subpop.prior: expected `zipf`, `point-mass` or `list`, got `{other}`")),
        };
        let subpop = SubpopParams {
            prior,
            components: raw.parse_as("subpop.components")?,
            n: raw.parse_as("subpop.n")?,
            heavy_c: raw.parse_as("subpop.heavy_c")?,
            weight_bins: raw.parse_as("subpop.weight_bins")?,
            instances: raw.parse_as("subpop.instances")?,
        };
        require(subpop.components >= 2, "subpop.components must be at least 2")?;
        require(subpop.n >= 1, "subpop.n must be positive")?;
        require(subpop.heavy_c > 0.0, "subpop.heavy_c must be positive")?;
        require(subpop.weight_bins >= 1, "subpop.weight_bins must be positive")?;
        subpop.frequency_prior()?;

        let gmm = GmmParams {
            mu1: raw.list("gmm.mu1")?,
            mu2: raw.list("gmm.mu2")?,
            epsilon: raw.parse_as("gmm.epsilon")?,
            points: raw.parse_as("gmm.points")?,
        };
        require(!gmm.mu1.is_empty() && gmm.mu1.len() == gmm.mu2.len(), "gmm.mu1 and gmm.mu2 need the same positive dimension")?;
        require(gmm.epsilon > 0.0 && gmm.epsilon < 1.0, "gmm.epsilon must lie in (0, 1)")?;
        require(gmm.points >= 2, "gmm.points must be at least 2")?;

        Ok(Self { raw, seed, out, dataset, schedule, train, sweep_sigmas, sample, eval, mi, subpop, gmm })
    }

    /// Trainer settings for a given noise level, using the configured mode
    /// (DDPM whenever `σ_{t_n} = 0` in a sweep).
    pub fn train_config(&self, sigma_tn: f64) -> CliResult<TrainConfig> {
        train_config(&self.schedule, &self.train, sigma_tn, self.seed)
    }
}

impl SubpopParams {
    pub fn frequency_prior(&self) -> CliResult<diffmem::subpop::FrequencyPrior> {
        use diffmem::subpop::FrequencyPrior;
        let prior = match &self.prior {
            PriorSpec::Zipf(k) => FrequencyPrior::zipf(*k, self.components),
            PriorSpec::PointMass => FrequencyPrior::point_mass(self.components),
            PriorSpec::List(pi) => FrequencyPrior::new(pi.clone(), self.components),
        };
        prior.map_err(|e| CliError::Usage(format!("subpop: {e}")))
    }
}

fn train_config(sched: &NoiseSchedule, p: &TrainParams, sigma_tn: f64, seed: u64) -> CliResult<TrainConfig> {
    let t_n = if sigma_tn == 0.0 {
        0.0
    } else {
        sched.time_at_sigma(sigma_tn).map_err(|e| CliError::Usage(format!("train.sigma_tn: {e}")))?
    };
    require(p.iterations >= 1, "train.iterations must be positive")?;
    Ok(TrainConfig { t_n, batch: p.batch, iterations: p.iterations, learning_rate: p.learning_rate, seed, mode: p.mode })
}
