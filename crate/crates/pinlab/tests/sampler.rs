use nalgebra::Matrix3;
use pinlab::model::{contact_structure, FieldPath, PotentialSpec};
use pinlab::oracle::{empirical_law, enumerate_contact_law, kernel_contact_law, mask_of, total_variation};
use pinlab::rng::seed_stream;
use pinlab::sampler::*;
use pinlab::transfer::{critical_epsilon, kernel_and_tables, step_law_q, DiscreteKernel, GridSpec, HitTables};
use rayon::prelude::*;

const NMAX: usize = 1 << 12;

fn setup(rel: f64, horizon: usize) -> (PotentialSpec, DiscreteKernel, HitTables) {
    let pot = PotentialSpec::gaussian(1.0).unwrap();
    let grid = GridSpec::default_for(&pot);
    let ec = critical_epsilon(&grid, &pot, NMAX).unwrap();
    let (k, t) = kernel_and_tables(rel * ec, ec, &grid, &pot, NMAX, horizon, None).unwrap();
    (pot, k, t)
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn chain_ends_at_n_and_n_plus_one() {
    let (_, k, t) = setup(1.0, 300);
    for (i, n) in [1usize, 2, 5, 40, 257].into_iter().enumerate() {
        let mut rng = seed_stream(3, "end", i as u64);
        for c in [
            sample_contact_chain(&k, &t, n, &mut rng).unwrap(),
            sample_contact_chain_blocks(&k, &t, n, &mut rng).unwrap(),
        ] {
            let l = c.tau.len();
            assert_eq!(&c.tau[l - 2..], &[n, n + 1]);
            // J at N + 1 is φ_N
            assert_eq!(c.states[l - 1], 0);
            assert!(c.tau.windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn kernel_law_matches_enumeration() {
    for rel in [0.5, 1.0, 2.0] {
        let (_, k, _) = setup(rel, 16);
        for n in 3..=7 {
            let exact = enumerate_contact_law(n, k.eps, 1.0).unwrap();
            let implied = kernel_contact_law(&k, n).unwrap();
            assert!(total_variation(&exact, &implied).unwrap() < 1e-2);
        }
    }
}

#[test]
fn sampled_contact_sets_match_enumeration() {
    for (ri, rel) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        let (_, k, t) = setup(rel, 16);
        for n in 3..=7 {
            let exact = enumerate_contact_law(n, k.eps, 1.0).unwrap();
            for method in [ChainMethod::Blocks, ChainMethod::Hits] {
                let masks: Vec<usize> = (0..100_000u64)
                    .into_par_iter()
                    .map(|r| {
                        let mut rng = seed_stream(ri as u64, &format!("oracle/{n}/{method:?}"), r);
                        let c = match method {
                            ChainMethod::Blocks => sample_contact_chain_blocks(&k, &t, n, &mut rng),
                            ChainMethod::Hits => sample_contact_chain(&k, &t, n, &mut rng),
                        };
                        mask_of(&c.unwrap().tau, n)
                    })
                    .collect();
                let tv = total_variation(&empirical_law(&masks, n).unwrap(), &exact).unwrap();
                assert!(tv < 0.02, "rel {rel} N {n} {method:?}: tv {tv}");
            }
        }
    }
}

/// `Var(Z_k | Z_{l-1} = Z_l = 0)` by Schur complement of the explicit
/// covariance sums.
fn conditioned_variance(k: usize, l: usize) -> f64 {
    let c = |i: usize, j: usize| -> f64 { (1..=i.min(j)).map(|m| ((i - m + 1) * (j - m + 1)) as f64).sum() };
    let idx = [k, l - 1, l];
    let m = Matrix3::from_fn(|a, b| c(idx[a], idx[b]));
    1.0 / m.try_inverse().unwrap()[(0, 0)]
}

#[test]
fn excursion_midpoint_variance() {
    let pot = PotentialSpec::gaussian(1.0).unwrap();
    let exact = conditioned_variance(32, 64);
    assert!((exact / 64f64.powi(3) * 192.0 - 1.0).abs() < 0.05);
    let z: Vec<f64> = (0..100_000u64)
        .into_par_iter()
        .map(|r| sample_excursion(64, 0.0, 0.0, &pot, &mut seed_stream(5, "mid", r)).unwrap()[31])
        .collect();
    let var = z.iter().map(|x| x * x).sum::<f64>() / z.len() as f64;
    assert!((var / exact - 1.0).abs() < 0.05, "var {var} exact {exact}");
}

#[test]
fn free_path_agrees_with_long_excursion() {
    let pot = PotentialSpec::gaussian(1.3).unwrap();
    let n = 50;
    let (a, b): (Vec<f64>, Vec<f64>) = (0..100_000u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed_stream(6, "free", r);
            let f = sample_free_pinning_path(n, &pot, &mut rng).unwrap();
            let e = sample_excursion(n + 1, 0.0, 0.0, &pot, &mut rng).unwrap();
            (f.at(n / 2), e[n / 2 - 1])
        })
        .unzip();
    let ks = pinlab::levy::ks_two_sample(&a, &b).unwrap();
    assert!(ks < 0.02, "ks {ks}");
}

#[test]
fn pinning_path_invariants() {
    let (pot, k, t) = setup(1.0, 600);
    for r in 0..50u64 {
        let mut rng = seed_stream(7, "path", r);
        let method = if r % 2 == 0 { ChainMethod::Blocks } else { ChainMethod::Hits };
        let s = sample_pinning_path(512, &k, &t, &pot, method, &mut rng).unwrap();
        let f: &FieldPath = &s.field;
        for &tau in &s.contacts.tau {
            assert_eq!(f.at(tau).to_bits(), 0.0f64.to_bits());
        }
        assert_eq!(f.get(-1).unwrap(), 0.0);
        assert_eq!(f.get(513).unwrap(), 0.0);
        // the zeros of the field are exactly the chain
        assert_eq!(contact_structure(f).tau, s.contacts.tau);
        for (i, &tau) in s.chain.tau.iter().enumerate().filter(|(_, &t)| t <= 512) {
            assert_eq!(f.get(tau as i64 - 1).unwrap(), k.grid.value(s.chain.states[i]));
        }
    }
}

#[test]
fn field_is_sign_symmetric_and_blocks_uncorrelated() {
    let (pot, k, t) = setup(2.0, 600);
    let n = 512;
    let out: Vec<(f64, Vec<f64>)> = (0..4000u64)
        .into_par_iter()
        .map(|r| {
            let s = sample_pinning_path(n, &k, &t, &pot, ChainMethod::Blocks, &mut seed_stream(8, "sym", r)).unwrap();
            let areas = pinlab::model::excursion_areas(&s.field, &s.contacts);
            (s.field.at(n / 2), areas.a)
        })
        .collect();
    let mid: Vec<f64> = out.iter().map(|o| o.0).collect();
    let (m, se) = mean_se(&mid);
    assert!(m.abs() < 3.0 * se + 1e-12, "mean {m} se {se}");
    let pairs: Vec<(f64, f64)> = out
        .iter()
        .flat_map(|o| o.1.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>())
        .collect();
    let np = pairs.len() as f64;
    let (mx, my) = pairs.iter().fold((0.0, 0.0), |s, p| (s.0 + p.0 / np, s.1 + p.1 / np));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for p in &pairs {
        sxy += (p.0 - mx) * (p.1 - my);
        sxx += (p.0 - mx).powi(2);
        syy += (p.1 - my).powi(2);
    }
    let rho = sxy / (sxx * syy).sqrt();
    assert!(rho.abs() < 3.0 / np.sqrt(), "rho {rho} over {np} pairs");
    let positive = out.iter().filter(|o| o.1.first().is_some_and(|&a| a > 0.0)).count() as f64;
    let signed = out.iter().filter(|o| o.1.first().is_some_and(|&a| a != 0.0)).count() as f64;
    assert!((positive / signed - 0.5).abs() < 3.0 * 0.5 / signed.sqrt());
}

#[test]
fn localized_contact_density_concentrates() {
    let (pot, k, t) = setup(2.0, 2100);
    let sd = |n: usize| {
        let x: Vec<f64> = (0..400u64)
            .into_par_iter()
            .map(|r| {
                let s = sample_pinning_path(n, &k, &t, &pot, ChainMethod::Blocks, &mut seed_stream(9, &format!("ell/{n}"), r))
                    .unwrap();
                s.contacts.ell_n as f64 / n as f64
            })
            .collect();
        mean_se(&x).1 * (x.len() as f64).sqrt()
    };
    let (s1, s2) = (sd(512), sd(2048));
    assert!(s2 < s1, "sd {s1} -> {s2}");
}

#[test]
fn delocalized_prefix_terminates_at_the_kernel_rate() {
    let (pot, k, _) = setup(0.5, 8);
    let (killed, jumps) = (0..20_000u64)
        .into_par_iter()
        .map(|r| {
            let p = sample_infinite_volume_prefix(4096, &k, &pot, &mut seed_stream(10, "kill", r)).unwrap();
            (p.terminated as usize, p.jumps)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let rate = killed as f64 / jumps as f64;
    let expected = 1.0 - k.eps / k.eps_c;
    assert!((rate / expected - 1.0).abs() < 0.02, "rate {rate}");
}

#[test]
fn localized_prefix_renewal_density() {
    let (pot, k, _) = setup(2.0, 8);
    let q = step_law_q(&k, 4000).unwrap();
    let mean_gap: f64 = q.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    let n = 1 << 14;
    let x: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| {
            let p = sample_infinite_volume_prefix(n, &k, &pot, &mut seed_stream(11, "iota", r)).unwrap();
            assert!(!p.terminated);
            (p.chi.len() - 1) as f64 / n as f64
        })
        .collect();
    let (m, _) = mean_se(&x);
    assert!((m * mean_gap - 1.0).abs() < 0.05, "iota/N {m} vs 1/E[chi] {}", 1.0 / mean_gap);
}

#[test]
fn critical_prefix_renewal_density() {
    let (pot, k, t) = setup(1.0, (1 << 16) + 2);
    let n = 1usize << 16;
    let x: Vec<f64> = (0..1000u64)
        .into_par_iter()
        .map(|r| {
            let p = sample_infinite_volume_prefix(n, &k, &pot, &mut seed_stream(12, "crit", r)).unwrap();
            (p.chi.len() - 1) as f64
        })
        .collect();
    let (m, _) = mean_se(&x);
    let ratio = m * (n as f64).ln() / n as f64 * t.renewal.c_eps;
    assert!((ratio - 1.0).abs() < 0.15, "iota log N / N times C = {ratio}");
}

#[test]
fn delocalized_bulk_is_contact_free_at_the_exact_rate() {
    let (pot, k, t) = setup(0.5, 1026);
    let (n, l) = (1024, 64);
    let exact = pinlab::oracle::bulk_free_probability(&k, &t, n, l).unwrap();
    // by brute force on a small volume
    let (_, k8, t8) = setup(0.5, 16);
    let law = kernel_contact_law(&k8, 12).unwrap();
    let brute: f64 = law
        .iter()
        .enumerate()
        .filter(|(m, _)| !pinlab::oracle::sites(*m, 12).iter().any(|&s| (3..=9).contains(&s)))
        .map(|p| p.1)
        .sum();
    assert!((pinlab::oracle::bulk_free_probability(&k8, &t8, 12, 3).unwrap() - brute).abs() < 1e-9);
    let reps = 4000u64;
    let free = (0..reps)
        .into_par_iter()
        .filter(|&r| {
            let s = sample_pinning_path(n, &k, &t, &pot, ChainMethod::Blocks, &mut seed_stream(13, "bulk", r)).unwrap();
            !s.contacts.tau.iter().any(|&x| x >= l && x <= n - l)
        })
        .count() as f64
        / reps as f64;
    let se = (exact * (1.0 - exact) / reps as f64).sqrt();
    assert!((free - exact).abs() < 3.0 * se, "sampled {free} exact {exact}");
}
