//! Stable laws of index 2/5, the atomic random measure `dL`, and
//! Kolmogorov–Smirnov distances.
//!
//! Stable laws are parametrized by their one-sided tail constant:
//! `P(X > x) ~ tail · x^{-2/5}`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::model::MuMeasure;
use crate::quad::integrate;

pub const ALPHA: f64 = 0.4;

/// Closed form of the limit's tail constant for step scale `sigma`.
pub fn c_l_constant(sigma: f64) -> f64 {
    3.0 * 10f64.sqrt() / (PI.sqrt() * 360f64.powf(0.7)) * gamma(0.7) * sigma.powf(0.4)
}

/// The same constant as `(6√10/√π) σ^{2/5} ∫_0^∞ s^{2/5} e^{-360 s²} ds`,
/// by quadrature.
pub fn c_l_integral(sigma: f64) -> f64 {
    // s = u^5 removes the singular derivative at 0
    let f = |u: f64| 5.0 * u.powi(6) * (-360.0 * u.powi(10)).exp();
    6.0 * 10f64.sqrt() / PI.sqrt() * sigma.powf(0.4) * integrate(f, 0.0, 1.0, 64, 16)
}

/// `Γ(α) sin(πα/2) / π`: tail constant of the standard symmetric law with
/// characteristic function `exp(-|t|^α)`.
pub fn symmetric_tail_factor(alpha: f64) -> f64 {
    gamma(alpha) * (PI * alpha / 2.0).sin() / PI
}

/// Scale `γ` of `exp(-|γt|^α)` giving one-sided tail constant `tail`.
pub fn symmetric_scale(tail: f64) -> f64 {
    (tail / symmetric_tail_factor(ALPHA)).powf(1.0 / ALPHA)
}

/// Symmetric 2/5-stable variate with one-sided tail constant `tail`
/// (Chambers–Mallows–Stuck).
pub fn sample_stable_symmetric<R: Rng + ?Sized>(tail: f64, rng: &mut R) -> f64 {
    let u = rng.sample(Uniform::new(-PI / 2.0, PI / 2.0).expect("valid range"));
    let w: f64 = rng.sample(Exp1);
    let a = ALPHA;
    let x = (a * u).sin() / u.cos().powf(1.0 / a) * (((1.0 - a) * u).cos() / w).powf((1.0 - a) / a);
    symmetric_scale(tail) * x
}

/// Positive 2/5-stable variate with `P(X > x) ~ tail · x^{-2/5}` (Kanter).
pub fn sample_subordinator<R: Rng + ?Sized>(tail: f64, rng: &mut R) -> f64 {
    let a = ALPHA;
    let u = rng.sample(Uniform::new(0.0, PI).expect("valid range"));
    let w: f64 = rng.sample(Exp1);
    let k = (a * u).sin().powf(a / (1.0 - a)) * ((1.0 - a) * u).sin() / u.sin().powf(1.0 / (1.0 - a));
    // E exp(-s X) = exp(-s^α) has tail x^{-α} / Γ(1-α)
    let scale = (tail * gamma(1.0 - a)).powf(1.0 / a);
    scale * (k / w).powf((1.0 - a) / a)
}

/// Finite signed measure on `[0, 1]` given by its atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicSignedMeasure {
    atoms: Vec<(f64, f64)>,
    prefix: Vec<f64>,
    abs_prefix: Vec<f64>,
}

impl AtomicSignedMeasure {
    pub fn new(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if let Some(&(x, y)) = atoms.iter().find(|(x, y)| !(0.0..=1.0).contains(x) || !y.is_finite()) {
            return Err(invalid(format!("atom ({x}, {y}) outside [0, 1] or not finite")));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut prefix = vec![0.0];
        let mut abs_prefix = vec![0.0];
        for &(_, y) in &atoms {
            prefix.push(prefix.last().unwrap() + y);
            abs_prefix.push(abs_prefix.last().unwrap() + y.abs());
        }
        Ok(Self { atoms, prefix, abs_prefix })
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    fn count_le(&self, t: f64) -> usize {
        self.atoms.partition_point(|a| a.0 <= t)
    }

    /// `ν([0, t])`.
    pub fn cumulative(&self, t: f64) -> f64 {
        self.prefix[self.count_le(t)]
    }

    pub fn abs_interval(&self, a: f64, b: f64) -> f64 {
        self.abs_prefix[self.count_le(b)] - self.abs_prefix[self.count_le(a)]
    }

    pub fn total_variation(&self) -> f64 {
        *self.abs_prefix.last().unwrap()
    }

    /// Jordan decomposition `ν = ν⁺ - ν⁻`.
    pub fn jordan(&self) -> (Self, Self) {
        let pos = self.atoms.iter().filter(|a| a.1 > 0.0).copied().collect();
        let neg = self.atoms.iter().filter(|a| a.1 < 0.0).map(|&(x, y)| (x, -y)).collect();
        (Self::new(pos).expect("valid atoms"), Self::new(neg).expect("valid atoms"))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("position,mass\n");
        for &(x, y) in &self.atoms {
            s.push_str(&format!("{},{}\n", crate::model::fmt17(x), crate::model::fmt17(y)));
        }
        s
    }
}

/// A measure that can report its mass on `(a, b]`.
pub trait IntervalMass {
    fn interval(&self, a: f64, b: f64) -> f64;
}

impl IntervalMass for AtomicSignedMeasure {
    fn interval(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }
}

impl IntervalMass for MuMeasure {
    fn interval(&self, a: f64, b: f64) -> f64 {
        MuMeasure::interval(self, a, b)
    }
}

/// Increments `ν((0, a_1]), ν((a_1, a_2]), …` over sorted breakpoints in `(0, 1)`.
pub fn finite_dim_marginals<M: IntervalMass + ?Sized>(nu: &M, breakpoints: &[f64]) -> Result<Vec<f64>> {
    check_breakpoints(breakpoints)?;
    let mut prev = 0.0;
    Ok(breakpoints
        .iter()
        .map(|&b| {
            let v = nu.interval(prev, b);
            prev = b;
            v
        })
        .collect())
}

fn check_breakpoints(b: &[f64]) -> Result<()> {
    if b.is_empty() || b.iter().any(|&x| !(x > 0.0 && x < 1.0)) || b.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("breakpoints must be strictly increasing in (0, 1)"));
    }
    Ok(())
}

/// Increments of the symmetric stable process over the breakpoint intervals,
/// from `L_t =d t^{5/2} L_1` and independence.
pub fn stable_increments<R: Rng + ?Sized>(breakpoints: &[f64], tail: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_breakpoints(breakpoints)?;
    let mut prev = 0.0;
    Ok(breakpoints
        .iter()
        .map(|&b| {
            let h = (b - prev).powf(1.0 / ALPHA);
            prev = b;
            h * sample_stable_symmetric(tail, rng)
        })
        .collect())
}

/// Atoms of a Poisson point process on `[0,1] × {|y| > eta}` with intensity
/// `dx ⊗ density·|y|^{-7/5} dy`.
pub fn sample_dl_with<R: Rng + ?Sized>(eta: f64, density: f64, rng: &mut R) -> Result<AtomicSignedMeasure> {
    if !(eta > 0.0) || !(density > 0.0) {
        return Err(invalid("eta and density must be positive"));
    }
    let mean = expected_atoms(eta, density);
    let count = rand_distr::Poisson::new(mean)
        .map_err(|e| Error::Numeric(format!("poisson mean {mean}: {e}")))?;
    let k = rng.sample(count) as usize;
    let atoms = (0..k)
        .map(|_| {
            let x: f64 = rng.random();
            let u: f64 = 1.0 - rng.random::<f64>();
            let y = eta * u.powf(-1.0 / ALPHA);
            (x, if rng.random::<bool>() { y } else { -y })
        })
        .collect();
    AtomicSignedMeasure::new(atoms)
}

/// [`sample_dl_with`] at density `c_L(σ)`.
pub fn sample_dl<R: Rng + ?Sized>(eta: f64, sigma: f64, rng: &mut R) -> Result<AtomicSignedMeasure> {
    sample_dl_with(eta, c_l_constant(sigma), rng)
}

/// Mean atom count `2·density·∫_η^∞ y^{-7/5} dy = 5·density·η^{-2/5}`.
pub fn expected_atoms(eta: f64, density: f64) -> f64 {
    2.0 * density * eta.powf(-ALPHA) / ALPHA
}

/// Mean mass of the discarded atoms, `(10/3)·density·η^{3/5}`.
pub fn truncation_bias(eta: f64, density: f64) -> f64 {
    2.0 * density * eta.powf(1.0 - ALPHA) / (1.0 - ALPHA)
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_one_sample(a: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut x = a.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    Ok(x.iter().enumerate().fold(0.0, |d: f64, (i, &v)| {
        let f = cdf(v);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    }))
}
