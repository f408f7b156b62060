//! Field configurations, potentials and path observables.
//!
//! A field of volume `N` stores `φ_{-1}, …, φ_{N+1}` in a vector of length
//! `N + 3`; index `i` lives at offset `i + 1`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Number of points in the inverse-CDF table used for tabulated steps.
pub const STEP_TABLE_POINTS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialKind {
    Gaussian,
    Tabulated(TabulatedV),
}

/// Piecewise-linear symmetric convex potential, `+∞` outside the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedV {
    pub xs: Vec<f64>,
    pub vs: Vec<f64>,
    cdf_x: Vec<f64>,
    cdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub sigma2: f64,
    pub gamma: f64,
}

impl PotentialSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("sigma must be positive, got {sigma}")));
        }
        let sigma2 = sigma * sigma;
        Ok(Self { kind: PotentialKind::Gaussian, sigma2, gamma: 1.0 / sigma2 })
    }

    /// Tabulated potential on an ascending grid symmetric about 0.
    ///
    /// The density `exp(-V)` with `V` linearly interpolated must integrate to
    /// one within `1e-8`.
    pub fn tabulated(xs: Vec<f64>, vs: Vec<f64>) -> Result<Self> {
        if xs.len() != vs.len() || xs.len() < 3 {
            return Err(invalid("tabulated potential needs matching grids of length >= 3"));
        }
        let k = xs.len();
        for i in 0..k {
            let j = k - 1 - i;
            if (xs[i] + xs[j]).abs() > 1e-12 * (1.0 + xs[i].abs()) {
                return Err(invalid("tabulated grid must be symmetric about 0"));
            }
            if (vs[i] - vs[j]).abs() > 1e-12 * (1.0 + vs[i].abs()) {
                return Err(invalid("tabulated potential must be symmetric"));
            }
            if i > 0 && xs[i] <= xs[i - 1] {
                return Err(invalid("tabulated grid must be strictly ascending"));
            }
        }
        let mass = segment_masses(&xs, &vs).iter().sum::<f64>();
        if (mass - 1.0).abs() > 1e-8 {
            return Err(Error::NotNormalized(mass));
        }
        let mut gamma = f64::INFINITY;
        for i in 1..k - 1 {
            let h0 = xs[i] - xs[i - 1];
            let h1 = xs[i + 1] - xs[i];
            let d2 = 2.0 * ((vs[i + 1] - vs[i]) / h1 - (vs[i] - vs[i - 1]) / h0) / (h0 + h1);
            gamma = gamma.min(d2);
        }
        if gamma <= 0.0 {
            return Err(invalid("tabulated potential must be uniformly convex"));
        }
        let (cdf_x, cdf) = step_table(&xs, &vs);
        let sigma2 = second_moment(&xs, &vs);
        Ok(Self {
            kind: PotentialKind::Tabulated(TabulatedV { xs, vs, cdf_x, cdf }),
            sigma2,
            gamma,
        })
    }

    /// Tabulates `v` on `points` uniform nodes of `[-a, a]` and shifts it so
    /// that `exp(-V)` is a probability density.
    pub fn tabulated_from_fn(a: f64, points: usize, v: impl Fn(f64) -> f64) -> Result<Self> {
        if !(a > 0.0) || points < 3 {
            return Err(invalid("need a > 0 and at least 3 points"));
        }
        let xs: Vec<f64> = (0..points)
            .map(|i| -a + 2.0 * a * i as f64 / (points - 1) as f64)
            .collect();
        let mut xs = xs;
        let mid = points / 2;
        for i in 0..mid {
            xs[points - 1 - i] = -xs[i];
        }
        if points % 2 == 1 {
            xs[mid] = 0.0;
        }
        let mut vs: Vec<f64> = xs.iter().map(|&x| 0.5 * (v(x) + v(-x))).collect();
        let z: f64 = segment_masses(&xs, &vs).iter().sum();
        let lz = z.ln();
        for val in vs.iter_mut() {
            *val += lz;
        }
        Self::tabulated(xs, vs)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, PotentialKind::Gaussian)
    }

    /// `V(x)`; `+∞` outside the support of a tabulated potential.
    pub fn v(&self, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Gaussian => {
                x * x / (2.0 * self.sigma2) + 0.5 * (2.0 * PI * self.sigma2).ln()
            }
            PotentialKind::Tabulated(t) => t.eval(x),
        }
    }

    /// Draws one increment with density `exp(-V)`.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            PotentialKind::Gaussian => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                z * self.sigma2.sqrt()
            }
            PotentialKind::Tabulated(t) => t.inverse_cdf(rng.random::<f64>()),
        }
    }
}

impl TabulatedV {
    fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] || x.is_nan() {
            return f64::INFINITY;
        }
        let i = match self.xs.partition_point(|&p| p <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let s = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.vs[i] + s * (self.vs[i + 1] - self.vs[i])
    }

    fn inverse_cdf(&self, u: f64) -> f64 {
        let n = self.cdf.len();
        let j = self.cdf.partition_point(|&c| c < u).clamp(1, n - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let s = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.cdf_x[j - 1] + s.clamp(0.0, 1.0) * (self.cdf_x[j] - self.cdf_x[j - 1])
    }
}

fn seg_mass(h: f64, v0: f64, v1: f64) -> f64 {
    let d = v1 - v0;
    if d.abs() < 1e-10 {
        h * (-v0).exp() * (1.0 - 0.5 * d)
    } else {
        h * (-v0).exp() * (-(-d).exp_m1()) / d
    }
}

fn segment_masses(xs: &[f64], vs: &[f64]) -> Vec<f64> {
    xs.windows(2)
        .zip(vs.windows(2))
        .map(|(x, v)| seg_mass(x[1] - x[0], v[0], v[1]))
        .collect()
}

fn second_moment(xs: &[f64], vs: &[f64]) -> f64 {
    // Simpson on each segment with the interpolated potential.
    let mut acc = 0.0;
    for i in 0..xs.len() - 1 {
        let sub = 16;
        let h = (xs[i + 1] - xs[i]) / sub as f64;
        for k in 0..=sub {
            let x = xs[i] + k as f64 * h;
            let v = vs[i] + (k as f64 / sub as f64) * (vs[i + 1] - vs[i]);
            let w = if k == 0 || k == sub { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * x * x * (-v).exp() * h / 3.0;
        }
    }
    acc
}

fn step_table(xs: &[f64], vs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = xs[xs.len() - 1];
    let lo = xs[0];
    let n = STEP_TABLE_POINTS;
    let grid: Vec<f64> = (0..n).map(|i| lo + (a - lo) * i as f64 / (n - 1) as f64).collect();
    let t = TabulatedV { xs: xs.to_vec(), vs: vs.to_vec(), cdf_x: vec![], cdf: vec![] };
    let vals: Vec<f64> = grid.iter().map(|&x| t.eval(x)).collect();
    let masses = segment_masses(&grid, &vals);
    let total: f64 = masses.iter().sum();
    let mut cdf = Vec::with_capacity(n);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in masses {
        acc += m;
        cdf.push(acc / total);
    }
    (grid, cdf)
}

/// A realization `φ_{-1}, …, φ_{N+1}` with pinned boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    n: usize,
    values: Vec<f64>,
}

impl FieldPath {
    pub fn zeros(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("volume must be at least 2, got {n}")));
        }
        Ok(Self { n, values: vec![0.0; n + 3] })
    }

    /// Builds a field from `φ_1, …, φ_{N-1}`.
    pub fn from_interior(n: usize, interior: &[f64]) -> Result<Self> {
        if interior.len() + 1 != n {
            return Err(invalid(format!(
                "expected {} interior values for N = {n}, got {}",
                n.saturating_sub(1),
                interior.len()
            )));
        }
        let mut f = Self::zeros(n)?;
        f.values[2..n + 1].copy_from_slice(interior);
        Ok(f)
    }

    /// Builds a field from all `N + 3` values; the four boundary values must be exactly 0.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n < 2 || values.len() != n + 3 {
            return Err(invalid(format!("need N >= 2 and N + 3 values, got N = {n}, len {}", values.len())));
        }
        for idx in [0, 1, n + 1, n + 2] {
            if values[idx] != 0.0 {
                return Err(invalid(format!("boundary value at index {} is not zero", idx as i64 - 1)));
            }
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `φ_i` for `-1 <= i <= N+1`.
    pub fn get(&self, i: i64) -> Result<f64> {
        if i < -1 || i > self.n as i64 + 1 {
            return Err(Error::IndexOutOfRange { index: i, n: self.n });
        }
        Ok(self.values[(i + 1) as usize])
    }

    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        self.values[i + 1]
    }

    /// Raw storage with offset one.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,value\n");
        for (k, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{}", k as i64 - 1, fmt17(*v));
        }
        s
    }
}

/// Float formatting used by every CSV writer: 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn discrete_laplacian(field: &FieldPath, n: i64) -> Result<f64> {
    if n <= -1 || n >= field.n as i64 + 1 {
        return Err(Error::IndexOutOfRange { index: n, n: field.n });
    }
    Ok(field.get(n + 1)? + field.get(n - 1)? - 2.0 * field.get(n)?)
}

/// `Σ_{n=0}^{N} V(Δφ_n)`.
pub fn hamiltonian(field: &FieldPath, pot: &PotentialSpec) -> f64 {
    let v = &field.values;
    let mut h = 0.0;
    for k in 1..=field.n + 1 {
        let lap = v[k + 1] + v[k - 1] - 2.0 * v[k];
        h += pot.v(lap);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactStructure {
    /// Zeros of the field in `[0, N]`; always contains 0 and N.
    pub tau: Vec<usize>,
    /// Adjacent-contact epochs in `[0, N]`.
    pub chi: Vec<usize>,
    /// `J_k = φ_{τ_k - 1}`, aligned with `tau` (`J_0 = φ_{-1} = 0`).
    pub j: Vec<f64>,
    pub ell_n: usize,
    pub iota_n: usize,
    pub delta_big: usize,
    pub delta_small: usize,
}

impl ContactStructure {
    /// Builds the structure from a sorted contact set `tau ⊆ [0, N]` and the field.
    pub fn from_tau(field: &FieldPath, tau: Vec<usize>) -> Self {
        let n = field.n;
        let mut chi = vec![0usize];
        for w in tau.windows(2) {
            if w[1] == w[0] + 1 {
                chi.push(w[1]);
            }
        }
        // values[t] is φ_{t-1} because of the storage offset
        let j: Vec<f64> = tau.iter().map(|&t| field.values[t]).collect();
        let ell_n = tau.iter().filter(|&&t| t >= 1 && t <= n).count();
        let iota_n = chi.len() - 1;
        let delta_big = tau.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(n);
        let delta_small = chi_max_gap(&chi, n);
        Self { tau, chi, j, ell_n, iota_n, delta_big, delta_small }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("contact structure serializes")
    }
}

/// Largest χ-gap over `[0, N+1]`, closing the last gap at `N + 1`.
///
/// With no renewal in `(0, N]` this returns the sentinel `N + 1`.
pub fn chi_max_gap(chi: &[usize], n: usize) -> usize {
    let mut best = 0;
    let mut prev = 0;
    for &c in chi.iter().filter(|&&c| c <= n) {
        if c > prev {
            best = best.max(c - prev);
        }
        prev = c;
    }
    best.max(n + 1 - prev)
}

/// Contact structure read off the exact zeros of `field`.
pub fn contact_structure(field: &FieldPath) -> ContactStructure {
    let tau: Vec<usize> = (0..=field.n).filter(|&i| field.at(i) == 0.0).collect();
    ContactStructure::from_tau(field, tau)
}

/// Linearly interpolated field rescaled by `σ N^{3/2}`.
pub fn rescale_hat(field: &FieldPath, pot: &PotentialSpec, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("t must lie in [0, 1], got {t}")));
    }
    let n = field.n as f64;
    let s = pot.sigma() * n.powf(1.5);
    let x = n * t;
    let k = (x.floor() as usize).min(field.n);
    let frac = x - k as f64;
    let a = field.at(k);
    let b = if k < field.n { field.at(k + 1) } else { a };
    Ok(a / s + frac * (b - a) / s)
}

/// The signed measure with step density `(log N)^{5/2} N^{-3/2} φ_{⌊Nt⌋}` on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MuMeasure {
    n: usize,
    scale: f64,
    phi: Vec<f64>,
    prefix: Vec<f64>,
    abs_prefix: Vec<f64>,
}

pub fn mu_measure(field: &FieldPath) -> MuMeasure {
    let n = field.n;
    let nf = n as f64;
    let scale = nf.ln().powf(2.5) / nf.powf(1.5);
    let phi: Vec<f64> = (0..=n).map(|i| field.at(i)).collect();
    let mut prefix = Vec::with_capacity(n + 2);
    let mut abs_prefix = Vec::with_capacity(n + 2);
    prefix.push(0.0);
    abs_prefix.push(0.0);
    let (mut p, mut q) = (0.0, 0.0);
    for &v in &phi {
        p += v;
        q += v.abs();
        prefix.push(p);
        abs_prefix.push(q);
    }
    MuMeasure { n, scale, phi, prefix, abs_prefix }
}

impl MuMeasure {
    fn cumulative(&self, t: f64, absolute: bool) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let x = self.n as f64 * t;
        let k = (x.floor() as usize).min(self.n);
        let frac = x - k as f64;
        let (pre, v) = if absolute {
            (self.abs_prefix[k], self.phi[k].abs())
        } else {
            (self.prefix[k], self.phi[k])
        };
        self.scale * (pre + frac * v) / self.n as f64
    }

    /// `ν((a, b])`.
    pub fn interval(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b, false) - self.cumulative(a, false)
    }

    /// `|ν|((a, b])`.
    pub fn abs_interval(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b, true) - self.cumulative(a, true)
    }

    pub fn total_variation(&self) -> f64 {
        self.abs_interval(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExcursionAreas {
    pub a: Vec<f64>,
    pub a_abs: Vec<f64>,
    pub s: Vec<f64>,
    pub s_abs: Vec<f64>,
}

/// Signed and absolute areas over the complete χ-blocks in `[0, N]`.
pub fn excursion_areas(field: &FieldPath, cs: &ContactStructure) -> ExcursionAreas {
    let mut out = ExcursionAreas::default();
    let (mut s, mut sa) = (0.0, 0.0);
    for w in cs.chi.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut a = 0.0;
        let mut aa = 0.0;
        for i in lo + 1..=hi {
            let v = field.at(i);
            a += v;
            aa += v.abs();
        }
        s += a;
        sa += aa;
        out.a.push(a);
        out.a_abs.push(aa);
        out.s.push(s);
        out.s_abs.push(sa);
    }
    out
}
