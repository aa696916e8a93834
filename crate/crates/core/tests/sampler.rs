use diffmem::rng;
use diffmem::sampler::{integrate, reverse_ode_sample, sampling_grid, SampleOptions};
use diffmem::{NoiseSchedule, SampleSet, ScoreField};

fn opts(n: usize, steps: usize, stop_t: f64, seed: u64) -> SampleOptions {
    SampleOptions { n, steps, stop_t, seed, record: false }
}

fn nearest_dist(p: &[f64], set: &SampleSet) -> f64 {
    set.rows()
        .map(|r| r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn singleton_ddpm_field_collapses_to_the_point() {
    let sched = NoiseSchedule::default();
    let set = SampleSet::new(vec![1.3, -0.6], 2).unwrap();
    let scale = set.data_scale();
    let field = ScoreField::empirical_ddpm(set.clone(), sched.clone()).unwrap();
    let rec = reverse_ode_sample(&field, opts(64, 128, sched.t_min(), 1)).unwrap();
    for p in rec.finals.chunks(2) {
        assert!(nearest_dist(p, &set) <= 1e-2 * scale);
    }
}

#[test]
fn gaussian_field_moments_match_pushforward() {
    // With Σ = I the flow shifts x − α_t μ rigidly, so the N(0, I) start maps
    // to N((α_min − α_max) μ, I) exactly.
    let sched = NoiseSchedule::default();
    let mu = vec![1.5, -0.5];
    let field = ScoreField::analytic_gaussian(mu.clone(), vec![1.0, 0.0, 0.0, 1.0], sched.clone()).unwrap();
    let n = 4096;
    let rec = reverse_ode_sample(&field, opts(n, 64, sched.t_min(), 2)).unwrap();
    let set = SampleSet::new(rec.finals.clone(), 2).unwrap();
    let shift = sched.alpha_at(sched.t_min()).unwrap() - sched.alpha_at(1.0).unwrap();
    let m = set.mean();
    let c = set.covariance();
    let se = 1.0 / (n as f64).sqrt();
    for k in 0..2 {
        assert!((m[k] - shift * mu[k]).abs() < 4.0 * se, "mean {k}: {}", m[k]);
    }
    assert!((c[0] - 1.0).abs() < 6.0 * 2f64.sqrt() * se);
    assert!((c[3] - 1.0).abs() < 6.0 * 2f64.sqrt() * se);
    assert!(c[1].abs() < 6.0 * se);
}

#[test]
fn standard_normal_data_stays_standard_normal() {
    let sched = NoiseSchedule::default();
    let field = ScoreField::analytic_gaussian(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0], sched.clone()).unwrap();
    let n = 4096;
    let rec = reverse_ode_sample(&field, SampleOptions { n, steps: 48, stop_t: sched.t_min(), seed: 3, record: true }).unwrap();
    let se = 1.0 / (n as f64).sqrt();
    for st in &rec.states {
        let set = SampleSet::new(st.clone(), 2).unwrap();
        let (m, c) = (set.mean(), set.covariance());
        assert!(m.iter().all(|v| v.abs() < 4.0 * se));
        assert!((c[0] - 1.0).abs() < 0.1 && (c[3] - 1.0).abs() < 0.1 && c[1].abs() < 0.1, "{c:?}");
    }
}

#[test]
fn heun_is_second_order_on_gaussian_field() {
    let sched = NoiseSchedule::default();
    let field = ScoreField::analytic_gaussian(vec![0.8, -1.2], vec![0.3, 0.1, 0.1, 0.05], sched.clone()).unwrap();
    let x0 = rng::normal_vec(&mut rng::stream(9, 0), 2);
    let run = |steps: usize| {
        let grid = sampling_grid(&field, steps, 0.05).unwrap();
        integrate(&field, &grid, x0.clone(), None).unwrap().0
    };
    let (a, b, c) = (run(16), run(32), run(64));
    let diff = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let order = (diff(&a, &b) / diff(&b, &c)).log2();
    assert!(order >= 1.8, "observed order {order}");
}

#[test]
fn ambient_field_lands_on_noisy_points() {
    let sched = NoiseSchedule::default();
    let clean = SampleSet::new(rng::normal_vec(&mut rng::stream(4, 0), 32), 2).unwrap();
    let t_n = 0.4;
    let noisy = clean.noised(&sched, t_n, 8).unwrap();
    let scale = noisy.data_scale();
    let field = ScoreField::empirical_ambient(noisy.clone(), sched).unwrap();
    let rec = reverse_ode_sample(&field, opts(256, 128, t_n, 5)).unwrap();
    let hits = rec.finals.chunks(2).filter(|p| nearest_dist(p, &noisy) <= 1e-2 * scale).count();
    assert!(hits as f64 >= 0.99 * 256.0, "{hits} of 256");
}
