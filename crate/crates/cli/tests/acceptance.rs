//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use diffmem::gmmnoise;
use diffmem::infotheory;
use diffmem::nn::DenoiserNet;
use diffmem::rng;
use diffmem::sampler::{reverse_ode_sample, SampleOptions};
use diffmem::scores::{empirical_ambient_score, empirical_ddpm_score, mixture_log_density};
use diffmem::subpop::{self, FrequencyPrior, MixtureInstance};
use diffmem::trainer::{loss_ambient, loss_ddpm};
use diffmem::{NoiseSchedule, RingMixture, SampleSet, ScoreField};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_set(n: usize, d: usize, seed: u64) -> SampleSet {
    let mut r = rng::stream(seed, 0);
    SampleSet::new(rng::normal_vec(&mut r, n * d), d).unwrap()
}

fn score_oracle() -> Outcome {
    let sched = NoiseSchedule::default();
    let data = random_set(8, 2, 101);
    let mut r = rng::stream(102, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let t = r.random_range(sched.t_min()..1.0);
        let x = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let s = empirical_ddpm_score(&data, &sched, &x, t).unwrap();
        let sigma = sched.sigma_at(t).unwrap();
        let alpha = (1.0 - sigma * sigma).sqrt();
        let h = 1e-4 * sigma;
        let fd: Vec<f64> = (0..2)
            .map(|k| {
                let (mut xp, mut xm) = (x, x);
                xp[k] += h;
                xm[k] -= h;
                let lp = mixture_log_density(&data, alpha, sigma * sigma, &xp);
                let lm = mixture_log_density(&data, alpha, sigma * sigma, &xm);
                (lp - lm) / (2.0 * h)
            })
            .collect();
        let err = norm(&[s[0] - fd[0], s[1] - fd[1]]) / norm(&s).max(1e-300);
        worst = worst.max(err);
    }
    outcome(worst <= 1e-5, format!("max relative error {worst:.2e} over 20 probes"))
}

fn ambient_identity() -> Outcome {
    let sched = NoiseSchedule::default();
    let clean = random_set(8, 2, 201);
    let mut r = rng::stream(202, 0);
    let mut worst: f64 = 0.0;
    for probe in 0..20 {
        let t_n = r.random_range(0.05..0.6);
        let t = r.random_range(t_n + 0.05..1.0);
        let noisy = clean.noised(&sched, t_n, 300 + probe).unwrap();
        let as_clean = SampleSet::new(noisy.as_slice().to_vec(), 2).unwrap();
        let x = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
        let amb = empirical_ambient_score(&noisy, &sched, &x, t).unwrap();
        // Bridging t_n -> t is a VP step with noise c2, so it matches DDPM at σ = c2.
        let (_, c2) = sched.bridge_coeffs(t, t_n).unwrap();
        let t_eq = sched.time_at_sigma(c2).unwrap();
        let ddpm = empirical_ddpm_score(&as_clean, &sched, &x, t_eq).unwrap();
        let err = norm(&[amb[0] - ddpm[0], amb[1] - ddpm[1]]) / norm(&amb).max(1.0);
        worst = worst.max(err);
    }
    outcome(worst <= 1e-10, format!("max discrepancy {worst:.2e} over 20 probes"))
}

fn ambient_sampler_lands_on_noisy_set() -> Outcome {
    let sched = NoiseSchedule::default();
    let clean = RingMixture::default().sample(16, 301).unwrap();
    let t_n = sched.time_at_sigma(0.4).unwrap();
    let noisy = clean.noised(&sched, t_n, 302).unwrap();
    let scale = noisy.data_scale();
    let field = ScoreField::empirical_ambient(noisy.clone(), sched).unwrap();
    let rec = reverse_ode_sample(&field, SampleOptions { n: 512, steps: 256, stop_t: t_n, seed: 303, record: false }).unwrap();
    let hits = rec
        .finals
        .chunks_exact(2)
        .filter(|x| noisy.rows().any(|y| norm(&[x[0] - y[0], x[1] - y[1]]) <= 1e-2 * scale))
        .count();
    let frac = hits as f64 / 512.0;
    outcome(frac >= 0.99, format!("{hits}/512 trajectories within 1e-2 data_scale of a noisy point"))
}

fn gradient_check() -> Outcome {
    let sched = NoiseSchedule::default();
    let mut r = rng::stream(401, 0);
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for probe in 0..6 {
        let net = DenoiserNet::init(2, 410 + probe).unwrap();
        let x = rng::normal_vec(&mut r, 2);
        let eps = rng::normal_vec(&mut r, 2);
        let t_n = r.random_range(0.05..0.5);
        let t = r.random_range(t_n + 0.05..1.0);
        let losses: [&dyn Fn(&DenoiserNet) -> (f64, Vec<f64>); 2] = [
            &|n| loss_ddpm(n, &sched, &x, t, &eps).unwrap(),
            &|n| loss_ambient(n, &sched, &x, t, t_n, &eps).unwrap(),
        ];
        for loss in losses {
            let (_, grad) = loss(&net);
            for _ in 0..5 {
                let k = r.random_range(0..grad.len());
                let h = 1e-6;
                let mut plus = net.clone();
                plus.params_mut()[k] += h;
                let mut minus = net.clone();
                minus.params_mut()[k] -= h;
                let fd = (loss(&plus).0 - loss(&minus).0) / (2.0 * h);
                let err = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-6);
                worst = worst.max(err);
                probed += 1;
            }
        }
    }
    outcome(probed >= 50 && worst <= 1e-4, format!("max relative error {worst:.2e} over {probed} coordinates"))
}

fn mutual_information() -> Outcome {
    let sigma = 0.5f64.sqrt();
    let closed = 0.5 * 2f64.ln();
    let single = infotheory::mi_single_point(&[1.0], 1, sigma, 1).unwrap().mi_ambient;
    let mc = infotheory::mi_monte_carlo_gaussian(sigma, 1_000_000, 501).unwrap();
    let mc_ok = (mc - closed).abs() <= 0.02 && (single - closed).abs() <= 1e-15;

    let cov = [1.0, 0.3, 0.3, 2.0];
    let factor_ok = [1, 2, 5, 17, 100].iter().all(|&m| {
        let r = infotheory::mi_single_point(&cov, 2, 0.3, m).unwrap();
        r.mi_ddpm == m as f64 * r.mi_ambient
    });

    let mut bound_ok = true;
    for k in 1..=20 {
        let s = k as f64 / 21.0;
        for (d, m) in [(1, 1), (3, 4), (8, 10)] {
            let mut eye = vec![0.0; d * d];
            for i in 0..d {
                eye[i * d + i] = 1.0;
            }
            let mi = infotheory::mi_single_point(&eye, d, s, m).unwrap().mi_ddpm;
            let bound = infotheory::mi_dataset_bound(d, s, m).unwrap();
            bound_ok &= bound >= mi * (1.0 - 1e-12);
        }
    }
    outcome(
        mc_ok && factor_ok && bound_ok,
        format!("Monte Carlo {mc:.5} vs ½ln2 = {closed:.5}; factor-m exact: {factor_ok}; bound dominates: {bound_ok}"),
    )
}

/// Independent `τ_ℓ` by Laplace quadrature, building the tilted moments of
/// the other draws one draw at a time.
fn laplace_tau(prior: &FrequencyPrior, ell: usize, n: usize) -> f64 {
    let top = prior.pi.iter().cloned().fold(0.0, f64::max);
    let pi: Vec<f64> = prior.pi.iter().map(|p| p / top).collect();
    let k = pi.len() as f64;
    let rest = prior.n_components - 1;
    let b = n - ell;
    let binom = |n: usize, r: usize| (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let (lo, hi) = (1e-9f64.ln(), 200f64.ln());
    let points = 3_000;
    let h = (hi - lo) / points as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=points {
        let v = lo + i as f64 * h;
        let u = v.exp();
        let w: Vec<f64> = pi.iter().map(|y| (-u * y).exp()).collect();
        let z: f64 = w.iter().sum();
        let phi: Vec<f64> = (0..=b).map(|j| pi.iter().zip(&w).map(|(y, w)| w * y.powi(j as i32)).sum::<f64>() / z).collect();
        let mut t = vec![0.0; b + 1];
        t[0] = 1.0;
        for _ in 0..rest {
            t = (0..=b).map(|q| (0..=q).map(|j| binom(q, j) * t[j] * phi[q - j]).sum()).collect();
        }
        let log_scale = rest as f64 * (z / k).ln();
        let wt = if i == 0 || i == points { 0.5 } else { 1.0 };
        for &p in &pi {
            let base = log_scale - u * p + t[b].ln();
            den += wt * (ell as f64 * p.ln() + n as f64 * v + base - libm::lgamma(n as f64)).exp();
            num += wt * ((ell + 1) as f64 * p.ln() + (n + 1) as f64 * v + base - libm::lgamma(n as f64 + 1.0)).exp();
        }
    }
    num / den
}

fn tau_coefficients() -> Outcome {
    let mut point_err: f64 = 0.0;
    for n_comp in [2, 5, 9] {
        let prior = FrequencyPrior::point_mass(n_comp).unwrap();
        let n = 12;
        for ell in 1..=n {
            let t = subpop::tau(ell, n, &prior).unwrap().value;
            point_err = point_err.max((t - 1.0 / n_comp as f64).abs());
        }
    }

    let zipf = FrequencyPrior::zipf(50, 100).unwrap();
    let got = subpop::tau(1, 20, &zipf).unwrap().value;
    let oracle = laplace_tau(&zipf, 1, 20);
    let zipf_rel = (got - oracle).abs() / oracle;

    let mut priors = vec![
        FrequencyPrior::point_mass(4).unwrap(),
        FrequencyPrior::zipf(2, 3).unwrap(),
        FrequencyPrior::zipf(10, 6).unwrap(),
        FrequencyPrior::zipf(50, 100).unwrap(),
    ];
    let mut r = rng::stream(601, 0);
    for _ in 0..10 {
        let k = r.random_range(1..5);
        let pi: Vec<f64> = (0..k).map(|_| r.random_range(0.01..10.0)).collect();
        priors.push(FrequencyPrior::new(pi, r.random_range(2..7)).unwrap());
    }
    let mut lower_ok = true;
    let mut checked = 0;
    for prior in &priors {
        for n in [1, 3, 10, 30] {
            lower_ok &= subpop::tau1_bounds_check(prior, n).unwrap().lower_holds();
            checked += 1;
        }
    }
    outcome(
        point_err <= 1e-12 && zipf_rel <= 1e-3 && lower_ok,
        format!("point mass max error {point_err:.1e}; Zipf τ_1 relative error {zipf_rel:.1e}; lower bound on {checked}/{checked} cases: {lower_ok}"),
    )
}

fn error_decomposition() -> Outcome {
    let mut r = rng::stream(701, 0);
    let mut worst: f64 = 0.0;
    let count = 24;
    for j in 0..count {
        let k = r.random_range(1..=2);
        let pi: Vec<f64> = (0..k).map(|_| r.random_range(0.1..5.0)).collect();
        let n_comp = r.random_range(2..=3);
        let n = r.random_range(1..=2);
        let prior = FrequencyPrior::new(pi, n_comp).unwrap();
        let supports: Vec<Vec<f64>> = (0..n_comp).map(|i| (0..r.random_range(1..=3)).map(|e| 10.0 * i as f64 + e as f64).collect()).collect();
        let inst = MixtureInstance::draw(prior, supports.clone(), n, 710 + j).unwrap();
        let loss = supports.iter().map(|s| s.iter().map(|_| r.random::<f64>()).collect()).collect();
        let rep = subpop::error_decomposition_check(&inst.with_loss(loss).unwrap()).unwrap();
        worst = worst.max(rep.gap);
    }
    outcome(worst <= 1e-12, format!("max gap {worst:.1e} over {count} instances"))
}

fn cluster_merging() -> Outcome {
    let mut r = rng::stream(801, 0);
    let mut monotone = true;
    for _ in 0..10 {
        let d = r.random_range(1..5);
        let a: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let tv: Vec<f64> = (0..100).map(|k| gmmnoise::tv_at_noise(&a, &b, k as f64 / 100.0).unwrap()).collect();
        monotone &= tv.windows(2).all(|w| w[1] < w[0]);
    }

    let mut implications = true;
    let mut cases = 0;
    for _ in 0..200 {
        let gap = r.random_range(1e-5..4.1e-3);
        assert!(gmmnoise::tv_from_distance(gap) <= 1.0 / 600.0);
        let eps = gmmnoise::tv_from_distance(gap) * r.random_range(0.01..1.0);
        let (mu1, mu2) = ([0.0, 0.0], [gap * 0.6, gap * 0.8]);
        let s = gmmnoise::merge_threshold(eps, gap);
        for k in 0..=10 {
            let sigma = s + (1.0 - s) * k as f64 / 11.0;
            let tv = gmmnoise::tv_at_noise(&mu1, &mu2, sigma).unwrap();
            implications &= tv <= eps;
            cases += 1;
        }
        if let Some(s) = gmmnoise::separation_threshold(eps, gap) {
            for k in 0..=10 {
                let tv = gmmnoise::tv_at_noise(&mu1, &mu2, s * k as f64 / 10.0).unwrap();
                implications &= tv > 2.0 * eps;
                cases += 1;
            }
        }
    }
    outcome(monotone && implications, format!("TV strictly decreasing for 10 pairs: {monotone}; {cases} threshold implications hold: {implications}"))
}

fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["diffmem"];
    full.extend_from_slice(args);
    diffmem_cli::run(full)
}

/// `(sigma_tn, w2, memorized_fraction)` rows of a Pareto report.
fn pareto_rows(path: &Path) -> Vec<(f64, Option<f64>, Option<f64>)> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .skip(2)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[1].parse().unwrap(), c[4].parse().ok(), c[5].parse().ok())
        })
        .collect()
}

fn sweep_trend(root: &Path) -> Outcome {
    let start = Instant::now();
    let config = root.join("sweep.txt");
    fs::write(&config, "sweep.sigma_tn = 0, 0.1, 0.4, 0.7\ndataset.n = 32\ntrain.batch = 128\ntrain.iterations = 15000\nsample.n = 2048\n").unwrap();
    let mut runs = Vec::new();
    for seed in 0..3 {
        let out = root.join(format!("sweep-{seed}"));
        let code = cli(&["--config", config.to_str().unwrap(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap(), "sweep"]);
        if code != 0 {
            return outcome(false, format!("sweep for seed {seed} exited with {code}"));
        }
        runs.push(pareto_rows(&out.join("pareto.csv")));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let mut winners = Vec::new();
    let mut lines = Vec::new();
    for &sigma in &[0.1, 0.4, 0.7] {
        let mut ok = true;
        let mut cells = Vec::new();
        for rows in &runs {
            let base = rows.iter().find(|r| r.0 == 0.0).unwrap();
            let leg = rows.iter().find(|r| r.0 == sigma).unwrap();
            match (base.1, base.2, leg.1, leg.2) {
                (Some(bw), Some(bm), Some(w), Some(m)) => {
                    ok &= m < bm && w <= 1.25 * bw;
                    cells.push(format!("mem {m:.3} vs {bm:.3}, w2 ratio {:.2}", w / bw));
                }
                _ => {
                    ok = false;
                    cells.push("diverged".into());
                }
            }
        }
        if ok {
            winners.push(sigma);
        }
        lines.push(format!("σ={sigma}: [{}]", cells.join("; ")));
    }
    let pass = !winners.is_empty() && elapsed < 600.0;
    outcome(pass, format!("{elapsed:.0}s; qualifying σ_tn {winners:?}; {}", lines.join(" ")))
}

fn snapshot(dir: &Path, into: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            snapshot(&path, into);
        } else {
            into.insert(path.to_string_lossy().into_owned(), fs::read(&path).unwrap());
        }
    }
}

fn determinism(root: &Path) -> Outcome {
    let config = root.join("det.txt");
    fs::write(
        &config,
        "train.iterations = 300\nsample.n = 128\nsample.steps = 16\nsweep.sigma_tn = 0, 0.4\nmi.mc_draws = 20000\nsubpop.instances = 5\n",
    )
    .unwrap();
    let out = root.join("det");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&out);
        let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
        for cmd in [&["train"][..], &["sample", "--record"], &["eval"], &["sweep"], &["mi"], &["subpop"], &["gmm"]] {
            let mut args = vec!["--config", c, "--seed", "9", "--out", o];
            args.extend_from_slice(cmd);
            if cli(&args) != 0 {
                return outcome(false, format!("{cmd:?} failed"));
            }
        }
        let mut files = BTreeMap::new();
        snapshot(&out, &mut files);
        runs.push(files);
    }
    let same = runs[0] == runs[1];
    let ckpts = runs[0].keys().filter(|k| k.ends_with(".ckpt")).count();
    let csvs = runs[0].keys().filter(|k| k.ends_with(".csv")).count();
    outcome(same, format!("{csvs} CSV files and {ckpts} checkpoints byte-identical across two runs: {same}"))
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("score oracle", Box::new(score_oracle)),
        ("ambient/DDPM score identity", Box::new(ambient_identity)),
        ("ambient sampler lands on the noisy set", Box::new(ambient_sampler_lands_on_noisy_set)),
        ("loss gradients", Box::new(gradient_check)),
        ("mutual information", Box::new(mutual_information)),
        ("tau coefficients", Box::new(tau_coefficients)),
        ("error decomposition", Box::new(error_decomposition)),
        ("cluster merging", Box::new(cluster_merging)),
        ("desk-scale memorization trend", Box::new(|| sweep_trend(root.path()))),
        ("determinism", Box::new(|| determinism(root.path()))),
    ];
    let mut failed = 0;
    let mut summary = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let line = format!("criterion {:>2} {} ({name}, {secs:.2}s): {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        summary.push(line);
        failed += usize::from(!o.pass);
    }
    println!("\nacceptance summary");
    for line in &summary {
        println!("{line}");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
