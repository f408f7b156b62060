//! Plain renewal processes: synthetic step laws, free and conditioned
//! sampling, and maximal-gap statistics.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{chi_max_gap, fmt17};
use crate::rng::seed_stream;
use crate::transfer::{renewal_tables, tail_sum, RenewalTables};

/// Default prefactor of the critical power law.
pub const DEFAULT_CRITICAL_C: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepKind {
    /// `q(n) = C/n²` for `n >= 2`, remaining mass at `n = 1`.
    CriticalPower { c: f64 },
    /// `q(n) ∝ e^{-Gn}` on `1..=N_max`.
    Exponential { g: f64 },
    /// `q(n) = p(1-p)^{n-1}`.
    Geometric { p: f64 },
    /// Explicit table, possibly defective.
    Table,
}

/// Step law tabulated on `1..=n_max`, with the remaining mass either in an
/// overflow bucket beyond `n_max` or lost (termination).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLaw {
    pub kind: StepKind,
    /// `q[n]` with `q[0] = 0`.
    pub q: Vec<f64>,
    /// Mass of the steps longer than `n_max`.
    pub overflow: f64,
    cum: Vec<f64>,
}

/// Tabulates a synthetic step law up to `n_max`.
pub fn synthetic_q(kind: StepKind, n_max: usize) -> Result<StepLaw> {
    if n_max < 2 {
        return Err(invalid("n_max must be at least 2"));
    }
    let mut q = vec![0.0; n_max + 1];
    let overflow;
    match kind {
        StepKind::CriticalPower { c } => {
            let head = c * (PI * PI / 6.0 - 1.0);
            if !(c > 0.0) || head > 1.0 {
                return Err(invalid(format!("critical-power prefactor {c} is not normalizable (need 0 < C <= {})", 1.0 / (PI * PI / 6.0 - 1.0))));
            }
            for (n, x) in q.iter_mut().enumerate().skip(2) {
                *x = c / (n as f64 * n as f64);
            }
            q[1] = 1.0 - head;
            overflow = c * tail_sum(0.0, n_max);
        }
        StepKind::Exponential { g } => {
            if !(g > 0.0) || !g.is_finite() {
                return Err(invalid("exponential rate must be positive"));
            }
            let mut z = 0.0;
            for (n, x) in q.iter_mut().enumerate().skip(1) {
                *x = (-g * (n as f64 - 1.0)).exp();
                z += *x;
            }
            q.iter_mut().for_each(|x| *x /= z);
            overflow = 0.0;
        }
        StepKind::Geometric { p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid("geometric parameter must be in (0, 1]"));
            }
            for (n, x) in q.iter_mut().enumerate().skip(1) {
                *x = p * (1.0 - p).powi(n as i32 - 1);
            }
            overflow = (1.0 - p).powi(n_max as i32);
        }
        StepKind::Table => return Err(invalid("use StepLaw::from_table for explicit tables")),
    }
    Ok(StepLaw::assemble(kind, q, overflow))
}

impl StepLaw {
    fn assemble(kind: StepKind, q: Vec<f64>, overflow: f64) -> Self {
        let mut cum = Vec::with_capacity(q.len());
        let mut acc = 0.0;
        for x in &q {
            acc += x;
            cum.push(acc);
        }
        Self { kind, q, overflow, cum }
    }

    /// Explicit table `q[1..]`; a total below 1 is a termination mass.
    pub fn from_table(q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 || q.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(invalid("step table must be nonnegative with at least one entry"));
        }
        let mut q = q;
        q[0] = 0.0;
        let total: f64 = q.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(invalid(format!("step table has mass {total} > 1")));
        }
        Ok(Self::assemble(StepKind::Table, q, 0.0))
    }

    pub fn n_max(&self) -> usize {
        self.q.len() - 1
    }

    /// Total mass including the overflow bucket.
    pub fn mass(&self) -> f64 {
        self.cum[self.n_max()] + self.overflow
    }

    /// `Σ n q(n)` over the table plus the overflow bucket where its mean is finite.
    pub fn mean(&self) -> f64 {
        let head: f64 = self.q.iter().enumerate().map(|(n, x)| n as f64 * x).sum();
        let m = self.n_max() as f64;
        match self.kind {
            StepKind::Geometric { p } if self.overflow > 0.0 => head + self.overflow * (m + 1.0 / p),
            StepKind::CriticalPower { .. } if self.overflow > 0.0 => f64::INFINITY,
            _ => head,
        }
    }

    /// One step; `None` is termination.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let u: f64 = rng.random::<f64>();
        let head = self.cum[self.n_max()];
        if u < head {
            let n = self.cum.partition_point(|&c| c <= u);
            return Some(n.clamp(1, self.n_max()));
        }
        if u >= head + self.overflow {
            return None;
        }
        let m = self.n_max();
        Some(match self.kind {
            StepKind::Geometric { p } => {
                let e: f64 = rng.random::<f64>();
                m + 1 + ((1.0 - e).ln() / (1.0 - p).ln()).floor() as usize
            }
            _ => sample_inverse_square_tail(m, rng),
        })
    }
}

/// Draws `n > m` with `P(n) ≈ ∝ 1/n²` by the continuous inverse transform.
pub fn sample_inverse_square_tail<R: Rng + ?Sized>(m: usize, rng: &mut R) -> usize {
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let x = ((m as f64 + 0.5) / u - 0.5).ceil();
        if x < 9.0e15 {
            return (x as usize).max(m + 1);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalSample {
    /// Renewal epochs in `[0, N]`, starting with 0.
    pub points: Vec<usize>,
    /// Number of epochs in `(0, N]`.
    pub iota: usize,
    /// Whether the process terminated before passing `N`.
    pub terminated: bool,
}

/// Free renewal started at 0, run until it passes `n`.
pub fn sample_renewal<R: Rng + ?Sized>(law: &StepLaw, n: usize, rng: &mut R) -> RenewalSample {
    let mut points = vec![0usize];
    let mut t = 0usize;
    loop {
        match law.sample(rng) {
            None => return RenewalSample { iota: points.len() - 1, points, terminated: true },
            Some(s) => {
                t = t.saturating_add(s);
                if t > n {
                    return RenewalSample { iota: points.len() - 1, points, terminated: false };
                }
                points.push(t);
            }
        }
    }
}

/// Renewal conditioned on `n + 1 ∈ χ`, sampled sequentially with
/// `q(j) u(R - j) / u(R)`; the returned points end with `n + 1`.
pub fn sample_conditioned_renewal<R: Rng + ?Sized>(
    q: &[f64],
    u: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let end = n + 1;
    if u.len() <= end || q.len() <= end {
        return Err(Error::TableLimit { requested: end, limit: u.len().min(q.len()).saturating_sub(1) });
    }
    if !(u[end] > 0.0) {
        return Err(Error::Numeric(format!("u({end}) = {} leaves nothing to condition on", u[end])));
    }
    let mut points = vec![0usize];
    let mut m = 0usize;
    while m < end {
        let rem = end - m;
        let target = rng.random::<f64>() * u[rem];
        let mut acc = 0.0;
        let mut pick = rem;
        for j in 1..=rem {
            acc += q[j] * u[rem - j];
            if acc > target {
                pick = j;
                break;
            }
        }
        m += pick;
        points.push(m);
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapStats {
    pub delta: usize,
    pub iota: usize,
    /// Left end of the first maximal gap.
    pub argmax: usize,
}

/// Max gap (closing at `N + 1`), count of epochs in `(0, N]` and the gap location.
pub fn gap_statistics(chi: &[usize], n: usize) -> GapStats {
    let delta = chi_max_gap(chi, n);
    let inside: Vec<usize> = chi.iter().copied().filter(|&c| c <= n).collect();
    let iota = inside.iter().filter(|&&c| c > 0).count();
    let mut gaps = Vec::with_capacity(inside.len() + 1);
    let mut prev = 0;
    for &c in &inside {
        if c > prev {
            gaps.push((prev, c - prev));
        }
        prev = c;
    }
    gaps.push((prev, n + 1 - prev));
    let argmax = gaps.iter().find(|g| g.1 == delta).map_or(0, |g| g.0);
    GapStats { delta, iota, argmax }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapRegime {
    /// Threshold `t N / log N`.
    Critical,
    /// Threshold `c log N`.
    Exponential,
}

impl GapRegime {
    pub fn name(&self) -> &'static str {
        match self {
            GapRegime::Critical => "critical",
            GapRegime::Exponential => "exponential",
        }
    }

    pub fn threshold(&self, n: usize, t: f64) -> f64 {
        let ln = (n as f64).ln();
        match self {
            GapRegime::Critical => t * n as f64 / ln,
            GapRegime::Exponential => t * ln,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub regime: GapRegime,
    pub n: usize,
    pub t_or_c: f64,
    pub estimate: f64,
    pub stderr: f64,
    pub replicas: usize,
}

impl GapRow {
    pub const CSV_HEADER: &'static str = "regime,N,t_or_c,estimate,stderr,replicas";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.regime.name(),
            self.n,
            fmt17(self.t_or_c),
            fmt17(self.estimate),
            fmt17(self.stderr),
            self.replicas
        )
    }
}

/// Estimates `P(δ_N >= threshold(N, t) | N+1 ∈ χ)` on the `(N, t)` lattice.
///
/// Replica `i` at volume `N` uses stream `i` of the label `gaps/<regime>/N`.
pub fn verify_gap_bounds(
    regime: GapRegime,
    law: &StepLaw,
    ns: &[usize],
    ts: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<GapRow>> {
    if replicas == 0 {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut rows = Vec::new();
    for &n in ns {
        let tables: RenewalTables = renewal_tables(&law.q, n + 1, 0.0);
        let label = format!("gaps/{}/{n}", regime.name());
        let deltas: Vec<usize> = (0..replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed_stream(seed, &label, i as u64);
                let chi = sample_conditioned_renewal(&tables.q, &tables.u, n, &mut rng)?;
                Ok(chi_max_gap(&chi, n))
            })
            .collect::<Result<_>>()?;
        for &t in ts {
            let thr = regime.threshold(n, t);
            let hits = deltas.iter().filter(|&&d| d as f64 >= thr).count();
            let p = hits as f64 / replicas as f64;
            rows.push(GapRow {
                regime,
                n,
                t_or_c: t,
                estimate: p,
                stderr: (p * (1.0 - p) / replicas as f64).sqrt(),
                replicas,
            });
        }
    }
    Ok(rows)
}
