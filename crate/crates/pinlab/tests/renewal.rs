use pinlab::renewal::*;
use pinlab::rng::seed_stream;
use pinlab::transfer::renewal_tables;
use proptest::prelude::*;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Chi-square statistic after pooling cells with expected count below 5, and its 1% critical value.
fn chi_square(expected: &[f64], observed: &[u64]) -> (f64, f64) {
    let total: u64 = observed.iter().sum();
    let (mut stat, mut cells, mut pe, mut po) = (0.0, 0usize, 0.0, 0.0);
    for (e, o) in expected.iter().zip(observed) {
        pe += e * total as f64;
        po += *o as f64;
        if pe >= 5.0 {
            stat += (po - pe).powi(2) / pe;
            cells += 1;
            pe = 0.0;
            po = 0.0;
        }
    }
    if pe > 0.0 {
        stat += (po - pe).powi(2) / pe;
        cells += 1;
    }
    let crit = ChiSquared::new((cells - 1) as f64).unwrap().inverse_cdf(0.99);
    (stat, crit)
}

#[test]
fn geometric_renewal_density() {
    let p = 0.3;
    let law = synthetic_q(StepKind::Geometric { p }, 64).unwrap();
    let n = 100_000;
    let iotas: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|i| sample_renewal(&law, n, &mut seed_stream(1, "geo", i)).iota as f64 / n as f64)
        .collect();
    let (m, _) = mean_se(&iotas);
    assert!((m / p - 1.0).abs() < 0.02, "{m}");
}

#[test]
fn critical_renewal_density() {
    let c = DEFAULT_CRITICAL_C;
    let law = synthetic_q(StepKind::CriticalPower { c }, 1 << 16).unwrap();
    let n = 1usize << 16;
    let scaled: Vec<f64> = (0..4000u64)
        .into_par_iter()
        .map(|i| {
            let s = sample_renewal(&law, n, &mut seed_stream(2, "crit", i));
            s.iota as f64 * (n as f64).ln() / n as f64
        })
        .collect();
    let (m, se) = mean_se(&scaled);
    eprintln!("ι_N log N / N = {m} ± {se}, 1/C = {}", 1.0 / c);
    assert!((m * c - 1.0).abs() < 0.15, "{m}");
}

#[test]
fn sampled_renewal_mass_matches_the_renewal_equation() {
    let law = synthetic_q(StepKind::CriticalPower { c: 1.2 }, 1 << 10).unwrap();
    let t = renewal_tables(&law.q, 64, 0.0);
    let reps = 1_000_000u64;
    let counts = (0..reps)
        .into_par_iter()
        .fold(
            || vec![0u64; 65],
            |mut acc, i| {
                for &x in &sample_renewal(&law, 64, &mut seed_stream(3, "u", i)).points {
                    acc[x] += 1;
                }
                acc
            },
        )
        .reduce(|| vec![0u64; 65], |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect());
    assert_eq!(counts[0], reps);
    let z: Vec<f64> = (1..=64)
        .map(|n| {
            let p = counts[n] as f64 / reps as f64;
            (p - t.u[n]) / (t.u[n] * (1.0 - t.u[n]) / reps as f64).sqrt()
        })
        .collect();
    for (n, zn) in z.iter().enumerate() {
        assert!(zn.abs() <= 3.0, "n={}: z = {zn:.2}; all z: {z:.2?}", n + 1);
    }
}

#[test]
fn conditioned_first_gap_for_geometric_steps() {
    let p = 0.35;
    let n = 15;
    let law = synthetic_q(StepKind::Geometric { p }, 64).unwrap();
    let t = renewal_tables(&law.q, n + 1, 0.0);
    // u ≡ p off the origin, so the first gap keeps the law q and the tail lands on N+1
    let mut expected: Vec<f64> = (1..=n).map(|j| p * (1.0 - p).powi(j as i32 - 1)).collect();
    expected.push((1.0 - p).powi(n as i32));
    let mut observed = vec![0u64; n + 1];
    for i in 0..200_000u64 {
        let chi = sample_conditioned_renewal(&t.q, &t.u, n, &mut seed_stream(4, "first", i)).unwrap();
        assert_eq!(*chi.last().unwrap(), n + 1);
        observed[chi[1] - 1] += 1;
    }
    let (stat, crit) = chi_square(&expected, &observed);
    assert!(stat < crit, "{stat} >= {crit}");
}

#[test]
fn conditioned_sets_match_enumeration() {
    let (p, n) = (0.3, 10usize);
    let law = synthetic_q(StepKind::Geometric { p }, 64).unwrap();
    let t = renewal_tables(&law.q, n + 1, 0.0);
    // weight of {0 < s_1 < … < N+1} is the product of q over its gaps
    let mut expected = vec![0.0; 1 << n];
    for (mask, w) in expected.iter_mut().enumerate() {
        let mut prev = 0;
        let mut acc = 1.0;
        for s in (1..=n).filter(|s| mask >> (s - 1) & 1 == 1).chain([n + 1]) {
            acc *= law.q[s - prev];
            prev = s;
        }
        *w = acc;
    }
    let z: f64 = expected.iter().sum();
    assert!((z - t.u[n + 1]).abs() < 1e-12);
    expected.iter_mut().for_each(|w| *w /= z);
    let mut observed = vec![0u64; 1 << n];
    for i in 0..300_000u64 {
        let chi = sample_conditioned_renewal(&t.q, &t.u, n, &mut seed_stream(5, "sets", i)).unwrap();
        let mask = chi.iter().filter(|&&s| s >= 1 && s <= n).fold(0usize, |m, &s| m | 1 << (s - 1));
        observed[mask] += 1;
    }
    let (stat, crit) = chi_square(&expected, &observed);
    assert!(stat < crit, "{stat} >= {crit}");
}

#[test]
fn critical_renewal_mass_function_asymptotics() {
    let c = DEFAULT_CRITICAL_C;
    let law = synthetic_q(StepKind::CriticalPower { c }, 1 << 14).unwrap();
    let n = 1usize << 14;
    let t = renewal_tables(&law.q, n, 0.0);
    let r = t.u[n] * c * (n as f64).ln();
    assert!((0.9..=1.1).contains(&r), "{r}");
}

#[test]
fn gap_curves_are_monotone_in_the_threshold() {
    let law = synthetic_q(StepKind::CriticalPower { c: DEFAULT_CRITICAL_C }, 2048).unwrap();
    let ts = [0.05, 0.5, 1.0, 4.0, 16.0];
    let rows = verify_gap_bounds(GapRegime::Critical, &law, &[256, 1024], &ts, 2000, 6).unwrap();
    assert_eq!(rows.len(), 10);
    for w in rows.chunks(ts.len()) {
        assert!(w.windows(2).all(|p| p[1].estimate <= p[0].estimate));
        assert!(w[0].estimate > 0.9);
    }
    assert_eq!(rows, verify_gap_bounds(GapRegime::Critical, &law, &[256, 1024], &ts, 2000, 6).unwrap());
    assert!(rows[0].to_csv().starts_with("critical,256,5.0000000000000003e-2,"));
}

proptest! {
    #[test]
    fn max_gap_is_monotone_in_the_volume(seed in any::<u64>(), p in 0.05..0.9f64) {
        let law = synthetic_q(StepKind::Geometric { p }, 256).unwrap();
        let s = sample_renewal(&law, 400, &mut seed_stream(seed, "mono", 0));
        let mut last = 0;
        for n in 1..=400 {
            let g = gap_statistics(&s.points, n);
            prop_assert!(g.delta >= last);
            prop_assert!(g.delta >= 1 && g.delta <= n + 1);
            last = g.delta;
        }
    }
}
