use diffmem::data::SampleSet;
use diffmem::metrics::{self, SweepEntry};
use diffmem::rng;
use proptest::prelude::*;

fn random_set(n: usize, d: usize, seed: u64) -> SampleSet {
    let mut r = rng::stream(seed, 0);
    SampleSet::new(rng::normal_vec(&mut r, n * d), d).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn self_match_is_perfect() {
    let s = random_set(20, 3, 1);
    let rep = metrics::nn_similarity(&s, &s, &[0.5, 0.9, 0.99]).unwrap();
    assert!(rep.similarity.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    assert!(rep.distance.iter().all(|&v| v == 0.0));
    assert_eq!(rep.delta_fraction, 1.0);
    assert_eq!(rep.distance_index, (0..20).collect::<Vec<_>>());
}

#[test]
fn orthogonal_points_have_zero_similarity() {
    let train = SampleSet::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]]).unwrap();
    let gen = SampleSet::from_rows(&[vec![0.0, 0.0, 3.0]]).unwrap();
    let rep = metrics::nn_similarity(&gen, &train, &[0.0]).unwrap();
    assert_eq!(rep.similarity, vec![0.0]);
    assert_eq!(rep.fractions, vec![0.0]);
}

#[test]
fn nearest_neighbors_match_brute_force() {
    let gen = random_set(5, 2, 2);
    let train = random_set(7, 2, 3);
    let rep = metrics::nn_similarity(&gen, &train, &[]).unwrap();
    for i in 0..5 {
        let g = gen.row(i);
        let d: Vec<f64> = train.rows().map(|t| g.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum()).collect();
        let best = (0..7).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        assert_eq!(rep.distance_index[i], best);
    }
}

#[test]
fn ties_go_to_lowest_index() {
    let train = SampleSet::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let gen = SampleSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let rep = metrics::nn_similarity(&gen, &train, &[]).unwrap();
    assert_eq!(rep.distance_index, vec![0, 0]);
    assert_eq!(rep.similarity_index[1], 0);
}

#[test]
fn dimension_mismatch_is_rejected() {
    assert!(metrics::nn_similarity(&random_set(3, 2, 1), &random_set(3, 3, 1), &[]).is_err());
}

#[test]
fn frechet_closed_forms() {
    let a = random_set(50, 2, 4);
    assert!(metrics::gaussian_frechet(&a, &a).unwrap().distance.abs() < 1e-10);
    let shifted = SampleSet::new(a.rows().flat_map(|r| [r[0] + 1.0, r[1] - 2.0]).collect(), 2).unwrap();
    assert!((metrics::gaussian_frechet(&a, &shifted).unwrap().distance - 5.0).abs() < 1e-10);
    // Fitted moments: mean 0, unbiased variance 1 and 4.
    let one = SampleSet::new(vec![-1.0, 1.0, -1.0, 1.0].iter().map(|x| x * (3.0f64 / 4.0).sqrt()).collect(), 1).unwrap();
    let two = SampleSet::new(one.as_slice().iter().map(|x| 2.0 * x).collect(), 1).unwrap();
    let f = metrics::gaussian_frechet(&one, &two).unwrap();
    assert!((f.distance - 1.0).abs() < 1e-12 && !f.regularized);
}

#[test]
fn frechet_flags_singular_covariance() {
    let flat = SampleSet::new((0..10).flat_map(|i| [i as f64, 0.0]).collect(), 2).unwrap();
    let f = metrics::gaussian_frechet(&flat, &random_set(10, 2, 5)).unwrap();
    assert!(f.regularized && f.distance.is_finite());
    assert!(metrics::gaussian_frechet(&random_set(2, 2, 1), &random_set(5, 2, 1)).is_err());
}

#[test]
fn w2_matches_permutation_search() {
    let a = random_set(6, 2, 6);
    let b = random_set(6, 2, 7);
    let cost = |i: usize, j: usize| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let brute = permutations(6).iter().map(|p| p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>()).fold(f64::INFINITY, f64::min);
    assert_eq!(permutations(6).len(), 720);
    let w2 = metrics::exact_w2(&a, &b).unwrap();
    assert!((w2 * w2 * 6.0 - brute).abs() < 1e-12);
}

#[test]
fn w2_trivial_cases() {
    let a = random_set(10, 3, 8);
    assert_eq!(metrics::exact_w2(&a, &a).unwrap(), 0.0);
    let p = SampleSet::new(vec![0.0, 0.0], 2).unwrap();
    let q = SampleSet::new(vec![3.0, 4.0], 2).unwrap();
    assert!((metrics::exact_w2(&p, &q).unwrap() - 5.0).abs() < 1e-15);
    assert!(metrics::exact_w2(&a, &random_set(9, 3, 1)).is_err());
}

#[test]
fn w2_handles_two_thousand_points() {
    let a = random_set(2048, 2, 9);
    let b = random_set(2048, 2, 10);
    let start = std::time::Instant::now();
    let w = metrics::exact_w2(&a, &b).unwrap();
    eprintln!("w2 = {w:.4} in {:?}", start.elapsed());
    assert!(w > 0.0 && w < 1.0);
}

#[test]
fn pareto_examples() {
    let e = |s, q, m| SweepEntry { sigma_tn: s, quality: q, memorization: m };
    let rows = metrics::pareto_sweep(&[e(0.0, 1.0, 1.0), e(0.5, 0.5, 0.5)]).unwrap();
    assert_eq!(rows.iter().filter(|r| r.on_frontier).count(), 1);
    let rows = metrics::pareto_sweep(&[e(0.0, 1.0, 1.0), e(0.5, 1.0, 1.0)]).unwrap();
    assert!(rows.iter().all(|r| r.on_frontier));
    assert!(metrics::pareto_sweep(&[e(0.0, 1.0, 1.0)]).is_err());
}

#[test]
fn pareto_matches_dominance_oracle() {
    let e = |s, q, m| SweepEntry { sigma_tn: s, quality: q, memorization: m };
    let entries = [e(0.4, 0.3, 0.2), e(0.0, 0.1, 0.9), e(0.8, 0.9, 0.0), e(0.2, 0.35, 0.25), e(0.6, 0.5, 0.1)];
    let rows = metrics::pareto_sweep(&entries).unwrap();
    for r in &rows {
        let dominated = entries.iter().any(|o| {
            (o.quality < r.entry.quality && o.memorization <= r.entry.memorization)
                || (o.quality <= r.entry.quality && o.memorization < r.entry.memorization)
        });
        assert_eq!(r.on_frontier, !dominated);
    }
    assert!(rows.windows(2).all(|w| w[0].entry.sigma_tn <= w[1].entry.sigma_tn));
    assert_eq!(rows.iter().filter(|r| r.on_frontier).count(), 4);
}

proptest! {
    #[test]
    fn fractions_are_monotone(seed in 0u64..1000) {
        let rep = metrics::nn_similarity(&random_set(15, 2, seed), &random_set(10, 2, seed + 1), &[-0.5, 0.0, 0.5, 0.9, 0.99]).unwrap();
        prop_assert!(rep.fractions.iter().all(|f| (0.0..=1.0).contains(f)));
        prop_assert!(rep.fractions.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn report_invariant_to_permutation(seed in 0u64..1000) {
        let gen = random_set(12, 2, seed);
        let train = random_set(9, 2, seed + 7);
        let rev = SampleSet::from_rows(&train.rows().rev().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let a = metrics::nn_similarity(&gen, &train, &[0.5]).unwrap();
        let b = metrics::nn_similarity(&gen, &rev, &[0.5]).unwrap();
        prop_assert_eq!(a.distance, b.distance);
        prop_assert_eq!(a.fractions, b.fractions);
    }

    #[test]
    fn frechet_is_symmetric(seed in 0u64..1000) {
        let a = random_set(20, 3, seed);
        let b = random_set(25, 3, seed + 3);
        let x = metrics::gaussian_frechet(&a, &b).unwrap().distance;
        let y = metrics::gaussian_frechet(&b, &a).unwrap().distance;
        prop_assert!((x - y).abs() <= 1e-10);
    }

    #[test]
    fn w2_triangle_inequality(seed in 0u64..1000) {
        let (a, b, c) = (random_set(12, 2, seed), random_set(12, 2, seed + 1), random_set(12, 2, seed + 2));
        let ab = metrics::exact_w2(&a, &b).unwrap();
        let bc = metrics::exact_w2(&b, &c).unwrap();
        let ac = metrics::exact_w2(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
    }
}
