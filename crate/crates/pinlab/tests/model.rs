use pinlab::model::*;
use proptest::prelude::*;

fn field() -> impl Strategy<Value = FieldPath> {
    (2usize..40).prop_flat_map(|n| {
        prop::collection::vec(prop_oneof![Just(0.0), -5.0..5.0f64], n - 1)
            .prop_map(move |v| FieldPath::from_interior(n, &v).unwrap())
    })
}

proptest! {
    #[test]
    fn contact_structure_invariants(f in field()) {
        let n = f.n();
        let c = contact_structure(&f);
        prop_assert_eq!(c.tau[0], 0);
        prop_assert_eq!(c.chi[0], 0);
        prop_assert!(c.chi.iter().all(|x| c.tau.contains(x)));
        for i in 1..=n {
            let both = f.at(i) == 0.0 && f.at(i - 1) == 0.0;
            prop_assert_eq!(c.chi.contains(&i), both, "site {}", i);
        }
        for k in 1..c.tau.len() {
            let unit = c.tau[k] - c.tau[k - 1] == 1;
            prop_assert_eq!(c.j[k] == 0.0, unit);
            prop_assert_eq!(c.j[k], f.at(c.tau[k] - 1));
        }
        prop_assert_eq!(c.ell_n, c.tau.iter().filter(|&&t| t >= 1).count());
        prop_assert_eq!(c.iota_n, c.chi.iter().filter(|&&t| t >= 1).count());
        prop_assert!(c.delta_small >= 1 && c.delta_small <= n + 1);
        prop_assert!(c.delta_big <= c.delta_small);
        let brute = c.tau.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0);
        prop_assert_eq!(c.delta_big, brute);
    }

    #[test]
    fn excursion_areas_telescope(f in field()) {
        let c = contact_structure(&f);
        let a = excursion_areas(&f, &c);
        prop_assert_eq!(a.a.len(), c.iota_n);
        for k in 0..a.a.len() {
            prop_assert!(a.a[k].abs() <= a.a_abs[k]);
            if k > 0 {
                prop_assert!(a.s_abs[k] >= a.s_abs[k - 1]);
            }
        }
        let last = c.chi.last().copied().unwrap_or(0);
        let direct: f64 = (1..=last).map(|i| f.at(i)).sum();
        let s = a.s.last().copied().unwrap_or(0.0);
        prop_assert!((s - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn mu_is_additive(f in field(), mut p in prop::array::uniform3(0.0..1.0f64)) {
        p.sort_by(f64::total_cmp);
        let mu = mu_measure(&f);
        let lhs = mu.interval(p[0], p[1]) + mu.interval(p[1], p[2]);
        prop_assert!((lhs - mu.interval(p[0], p[2])).abs() < 1e-12);
        prop_assert!(mu.interval(p[0], p[2]).abs() <= mu.abs_interval(p[0], p[2]) + 1e-15);
    }

    #[test]
    fn rescaled_field_is_piecewise_linear(f in field(), s in 0.0..1.0f64) {
        let pot = PotentialSpec::gaussian(1.3).unwrap();
        let n = f.n() as f64;
        let k = (s * n).floor();
        let (a, b) = (k / n, ((k + 1.0) / n).min(1.0));
        let va = rescale_hat(&f, &pot, a).unwrap();
        let vb = rescale_hat(&f, &pot, b).unwrap();
        let w = if b > a { (s - a) / (b - a) } else { 0.0 };
        let v = rescale_hat(&f, &pot, s).unwrap();
        prop_assert!((v - (va + w * (vb - va))).abs() < 1e-12 * (1.0 + va.abs() + vb.abs()));
    }

    #[test]
    fn laplacian_kills_affine_windows(n in 6usize..30, c in -3.0..3.0f64, slope in -2.0..2.0f64) {
        let interior: Vec<f64> = (1..n).map(|i| c + slope * i as f64).collect();
        let f = FieldPath::from_interior(n, &interior).unwrap();
        for i in 2..n as i64 - 1 {
            prop_assert!(discrete_laplacian(&f, i).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn hamiltonian_examples() {
    let pot = PotentialSpec::gaussian(1.0).unwrap();
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let zero = FieldPath::zeros(3).unwrap();
    assert!((hamiltonian(&zero, &pot) - 2.0 * ln2pi).abs() < 1e-12);
    let spike = FieldPath::from_interior(3, &[1.0, 0.0]).unwrap();
    // Laplacians (1, -2, 1, 0) at n = 0..3
    assert!((hamiltonian(&spike, &pot) - (3.0 + 2.0 * ln2pi)).abs() < 1e-12);
    assert_eq!(discrete_laplacian(&spike, 1).unwrap(), -2.0);
    assert!(discrete_laplacian(&spike, 4).is_err());
    assert!(discrete_laplacian(&spike, -1).is_err());
}

#[test]
fn boundary_and_serialization() {
    let f = FieldPath::from_interior(4, &[1.5, -2.0, 0.25]).unwrap();
    for i in [-1, 0, 4, 5] {
        assert_eq!(f.get(i).unwrap(), 0.0);
    }
    assert!(f.get(6).is_err());
    let csv = f.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "index,value");
    assert_eq!(lines.len(), 4 + 3 + 1);
    assert_eq!(lines[1], "-1,0");
    assert_eq!(lines[3], "1,1.5000000000000000e0");
    let c = contact_structure(&f);
    let js: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
    assert_eq!(js["tau"], serde_json::json!([0, 4]));
}

#[test]
fn tabulated_potential_is_normalized() {
    let pot = PotentialSpec::tabulated_from_fn(6.0, 2001, |x| 0.5 * x * x + 0.5 * (2.0 * std::f64::consts::PI).ln())
        .unwrap();
    let total = pinlab::quad::integrate(|x| (-pot.v(x)).exp(), -6.0, 6.0, 60, 16);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    assert_eq!(pot.v(1.3), pot.v(-1.3));
}
