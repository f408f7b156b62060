use pinlab::analysis::*;
use pinlab::levy::ks_two_sample;
use pinlab::model::PotentialSpec;
use pinlab::rng::seed_stream;
use pinlab::sampler::{sample_block_area, sample_first_block_area};
use pinlab::transfer::{critical_epsilon, kernel_and_tables, GridSpec, DEFAULT_NMAX};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

fn pareto(n: usize, alpha: f64, seed: u64) -> Vec<f64> {
    let mut rng = seed_stream(seed, "pareto", 0);
    (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
}

#[test]
fn hill_recovers_pareto_index() {
    let x = pareto(1_000_000, 0.4, 1);
    let a = hill_tail_index(&x, 10_000).unwrap();
    assert!((a - 0.4).abs() < 0.02, "{a}");
    let scaled: Vec<f64> = x.iter().map(|v| 37.5 * v).collect();
    assert!((hill_tail_index(&scaled, 10_000).unwrap() - a).abs() < 1e-9);
    assert!(hill_plateau(&x).unwrap().heavy_tailed);
}

#[test]
fn hill_flags_light_tails() {
    let mut rng = seed_stream(2, "exp", 0);
    let x: Vec<f64> = (0..1_000_000).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let p = hill_plateau(&x).unwrap();
    assert!(!p.heavy_tailed, "{p:?}");
    // no stable level: the estimate moves monotonically with k
    assert!(p.alpha.windows(2).all(|w| w[1] != w[0]));
}

#[test]
fn noisy_power_law_slope() {
    let mut rng = seed_stream(3, "noise", 0);
    let pts: Vec<(f64, f64)> = (6..=12)
        .map(|p| {
            let n = (1u64 << p) as f64;
            let e: f64 = rng.sample(StandardNormal);
            (n, 2.3 * n.powf(1.5) * (1.0 + 0.01 * e))
        })
        .collect();
    let f = fit_scaling_exponent(&pts).unwrap();
    assert!((f.slope - 1.5).abs() < 0.02);
}

#[test]
fn estimators_are_deterministic() {
    let x = pareto(10_000, 1.0, 4);
    assert_eq!(hill_plateau(&x).unwrap(), hill_plateau(&x).unwrap());
    assert_eq!(sign_test(&x), sign_test(&x));
}

#[test]
fn critical_area_law() {
    let pot = PotentialSpec::gaussian(1.0).unwrap();
    let grid = GridSpec::default_for(&pot);
    let ec = critical_epsilon(&grid, &pot, DEFAULT_NMAX).unwrap();
    let horizon = 4098;
    let (k, t) = kernel_and_tables(ec, ec, &grid, &pot, DEFAULT_NMAX, horizon, None).unwrap();
    let law = area_law_experiment(&k, &t, &pot, &[64, 512], 4000, 200_000, 5).unwrap();
    assert!((law.hill.estimate - 0.4).abs() < 0.05, "{:?}", law.hill);
    for c in &law.conditional {
        assert!(second_moment_ratio(c, &[0.02, 0.05, 0.1, 0.2, 0.4]) < 0.01);
        let p = sign_test(&c.scaled);
        assert!(p > 0.01, "n {}: sign test p {p}", c.n);
    }

    // mixing the conditional laws with q reproduces the unconditional law
    let limit = 4096;
    let q = &t.renewal.q[..=limit];
    let mass: f64 = q.iter().sum();
    let mut direct = Vec::new();
    let mut r = 0u64;
    while direct.len() < 20_000 {
        let mut rng = seed_stream(6, "mix/direct", r);
        r += 1;
        if let Some((a, len)) = sample_first_block_area(&k, &mut rng) {
            if len <= limit {
                direct.push(a.abs());
            }
        }
    }
    let mixed: Vec<f64> = (0..20_000u64)
        .map(|i| {
            let mut rng = seed_stream(6, "mix/cond", i);
            let mut u = rng.random::<f64>() * mass;
            let n = q.iter().position(|&p| {
                u -= p;
                u < 0.0
            });
            let n = n.unwrap_or(limit).max(1);
            sample_block_area(n, &k, &t, &pot, &mut rng).unwrap().0.abs()
        })
        .collect();
    let d = ks_two_sample(&direct, &mixed).unwrap();
    // 1% two-sample critical value at 2·10^4 each
    assert!(d < 1.63 * (2.0f64 / 20_000.0).sqrt(), "ks {d}");
}

#[test]
fn conditional_area_approaches_gaussian_limit() {
    let pot = PotentialSpec::gaussian(1.0).unwrap();
    let grid = GridSpec::default_for(&pot);
    let ec = critical_epsilon(&grid, &pot, DEFAULT_NMAX).unwrap();
    let (k, t) = kernel_and_tables(ec, ec, &grid, &pot, DEFAULT_NMAX, 514, None).unwrap();
    let law = area_law_experiment(&k, &t, &pot, &[512], 10_000, 10_000, 7).unwrap();
    let c = &law.conditional[0];
    assert!(c.ks < 0.03, "KS at n = 512: {}", c.ks);
}
