//! Estimators and experiments that turn samples into checks of the scaling
//! laws: exponents, tail indices, area laws and the critical measure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};
use crate::levy::{c_l_constant, finite_dim_marginals, ks_one_sample, ks_two_sample, stable_increments};
use crate::model::{mu_measure, ContactStructure, FieldPath, PotentialSpec};
use crate::rng::seed_stream;
use crate::sampler::{
    sample_block_area, sample_first_block_area, sample_free_pinning_path, sample_pinning_path, ChainMethod,
};
use crate::transfer::{DiscreteKernel, HitTables};

/// Least-squares line through `(log N, log statistic)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::TooFewSamples { got: points.len(), need: 4 });
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) || points[0].0 <= 0.0 {
        return Err(invalid("N must be positive and strictly increasing"));
    }
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return Err(invalid("statistics must be positive"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(ScalingFit { slope, intercept, stderr })
}

/// Smallest order-statistics count accepted by the Hill estimator.
pub const HILL_MIN_K: usize = 50;

/// Default order-statistics count `⌈n^{0.6}⌉`.
pub fn hill_default_k(n: usize) -> usize {
    (n as f64).powf(0.6).ceil() as usize
}

/// Hill estimate of the tail index from the `k` largest samples.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<f64> {
    if k < HILL_MIN_K {
        return Err(Error::TooFewSamples { got: k, need: HILL_MIN_K });
    }
    if k >= samples.len() {
        return Err(Error::TooFewSamples { got: samples.len(), need: k + 1 });
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(invalid("Hill estimator needs positive samples"));
    }
    let top = top_descending(samples, k + 1);
    let base = top[k].ln();
    let mean = top[..k].iter().map(|x| x.ln() - base).sum::<f64>() / k as f64;
    Ok(1.0 / mean)
}

fn top_descending(samples: &[f64], m: usize) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.select_nth_unstable_by(m - 1, |a, b| b.total_cmp(a));
    v.truncate(m);
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Hill estimates over a geometric range of `k` around the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillPlateau {
    pub k: Vec<usize>,
    pub alpha: Vec<f64>,
    pub default_k: usize,
    pub estimate: f64,
    /// Relative spread `(max - min) / estimate` over the range.
    pub spread: f64,
    pub heavy_tailed: bool,
}

/// Relative spread below which the Hill curve counts as a plateau.
pub const PLATEAU_SPREAD: f64 = 0.2;

pub fn hill_plateau(samples: &[f64]) -> Result<HillPlateau> {
    let k0 = hill_default_k(samples.len());
    let estimate = hill_tail_index(samples, k0)?;
    let mut ks = Vec::new();
    for f in [0.25, 0.5, 1.0, 2.0, 4.0] {
        let k = ((k0 as f64 * f).round() as usize).clamp(HILL_MIN_K, samples.len() / 2);
        if ks.last() != Some(&k) {
            ks.push(k);
        }
    }
    let alpha: Vec<f64> = ks.iter().map(|&k| hill_tail_index(samples, k)).collect::<Result<_>>()?;
    let lo = alpha.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = (hi - lo) / estimate;
    Ok(HillPlateau { k: ks, alpha, default_k: k0, estimate, spread, heavy_tailed: spread < PLATEAU_SPREAD })
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(samples: &[f64], p: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = h.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (h - i as f64) * (v[j] - v[i])
}

pub fn mean_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (v / n).sqrt())
}

/// Pearson correlation and its standard error `1/√n` under independence.
pub fn correlation(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxy / (sxx * syy).sqrt(), 1.0 / n.sqrt())
}

/// Two-sided sign test p-value for a median of zero (normal approximation).
pub fn sign_test(x: &[f64]) -> f64 {
    let nz: Vec<&f64> = x.iter().filter(|v| **v != 0.0).collect();
    let n = nz.len() as f64;
    if n == 0.0 {
        return 1.0;
    }
    let pos = nz.iter().filter(|v| ***v > 0.0).count() as f64;
    let z = (pos - n / 2.0).abs() / (n.sqrt() / 2.0);
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    2.0 * (1.0 - normal.cdf(z))
}

/// Conditional area statistics at one block length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalArea {
    pub n: usize,
    /// `A_1 / (σ n^{5/2})` given `χ_1 = n`.
    pub scaled: Vec<f64>,
    /// Absolute area `Ã_1` given `χ_1 = n`.
    pub abs_area: Vec<f64>,
    /// KS distance of `scaled` to `N(0, 1/720)`.
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaLaw {
    pub conditional: Vec<ConditionalArea>,
    /// `|A_1|` of the first block, unconditionally.
    pub unconditional: Vec<f64>,
    pub hill: HillPlateau,
}

/// Conditional and unconditional laws of the first block area.
pub fn area_law_experiment(
    kernel: &DiscreteKernel,
    tables: &HitTables,
    pot: &PotentialSpec,
    ns: &[usize],
    conditional_replicas: usize,
    unconditional_replicas: usize,
    seed: u64,
) -> Result<AreaLaw> {
    let sigma = pot.sigma();
    let limit = Normal::new(0.0, (1.0f64 / 720.0).sqrt()).expect("valid normal");
    let mut conditional = Vec::new();
    for &n in ns {
        let label = format!("area/cond/{n}");
        let draws: Vec<(f64, f64)> = (0..conditional_replicas as u64)
            .into_par_iter()
            .map(|r| sample_block_area(n, kernel, tables, pot, &mut seed_stream(seed, &label, r)))
            .collect::<Result<_>>()?;
        let s = sigma * (n as f64).powf(2.5);
        let scaled: Vec<f64> = draws.iter().map(|d| d.0 / s).collect();
        let abs_area = draws.iter().map(|d| d.1).collect();
        let ks = ks_one_sample(&scaled, |x| limit.cdf(x))?;
        conditional.push(ConditionalArea { n, scaled, abs_area, ks });
    }
    let unconditional: Vec<f64> = (0..unconditional_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed_stream(seed, "area/free", r);
            sample_first_block_area(kernel, &mut rng)
                .map(|a| a.0.abs())
                .ok_or_else(|| Error::Numeric("chain killed before closing a block".into()))
        })
        .collect::<Result<_>>()?;
    let positive: Vec<f64> = unconditional.iter().copied().filter(|&a| a > 0.0).collect();
    let hill = hill_plateau(&positive)?;
    Ok(AreaLaw { conditional, unconditional, hill })
}

/// `max_x P(Ã_1 > x | χ_1 = n)·x²/n⁵` over the given thresholds (in units of `n^{5/2}`).
pub fn second_moment_ratio(c: &ConditionalArea, xs: &[f64]) -> f64 {
    let n5 = (c.n as f64).powi(5);
    xs.iter()
        .map(|&t| {
            let x = t * (c.n as f64).powf(2.5);
            let p = c.abs_area.iter().filter(|&&a| a > x).count() as f64 / c.abs_area.len() as f64;
            p * x * x / n5
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalMeasure {
    pub n: usize,
    pub breakpoints: Vec<f64>,
    /// Per replica, the increments of `μ_N` over the breakpoint intervals.
    pub increments: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub ks: Vec<f64>,
    /// Correlations of adjacent increments with their standard errors.
    pub correlations: Vec<(f64, f64)>,
    pub sign_p: Vec<f64>,
    /// `(K, P(|μ_N|([0,1]) > K))`.
    pub tightness: Vec<(f64, f64)>,
}

/// Thresholds of the tightness curve.
pub const TIGHTNESS_K: [f64; 6] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Increments of `μ_N` under `P_{ε,N}` against the stable reference.
#[allow(clippy::too_many_arguments)]
pub fn critical_measure_experiment(
    kernel: &DiscreteKernel,
    tables: &HitTables,
    pot: &PotentialSpec,
    n: usize,
    breakpoints: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<CriticalMeasure> {
    let label = format!("measure/{n}");
    let per: Vec<(Vec<f64>, f64)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed_stream(seed, &label, r);
            let s = sample_pinning_path(n, kernel, tables, pot, ChainMethod::Blocks, &mut rng)?;
            let mu = mu_measure(&s.field);
            Ok((finite_dim_marginals(&mu, breakpoints)?, mu.total_variation()))
        })
        .collect::<Result<_>>()?;
    let tail = c_l_constant(pot.sigma());
    let reference: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| stable_increments(breakpoints, tail, &mut seed_stream(seed, "measure/reference", r)))
        .collect::<Result<_>>()?;
    let k = breakpoints.len();
    let column = |v: &[Vec<f64>], j: usize| -> Vec<f64> { v.iter().map(|row| row[j]).collect() };
    let increments: Vec<Vec<f64>> = per.iter().map(|p| p.0.clone()).collect();
    let ks = (0..k)
        .map(|j| ks_two_sample(&column(&increments, j), &column(&reference, j)))
        .collect::<Result<_>>()?;
    let correlations = (1..k).map(|j| correlation(&column(&increments, j - 1), &column(&increments, j))).collect();
    let sign_p = (0..k).map(|j| sign_test(&column(&increments, j))).collect();
    let tv: Vec<f64> = per.iter().map(|p| p.1).collect();
    let tightness = TIGHTNESS_K
        .iter()
        .map(|&kk| (kk, tv.iter().filter(|&&t| t > kk).count() as f64 / tv.len() as f64))
        .collect();
    Ok(CriticalMeasure { n, breakpoints: breakpoints.to_vec(), increments, reference, ks, correlations, sign_p, tightness })
}

/// Which law the regime table samples from.
#[derive(Clone, Copy)]
pub enum RegimeLaw<'a> {
    Free,
    Pinned { kernel: &'a DiscreteKernel, tables: &'a HitTables },
}

/// Boundary window of the delocalized contact check.
pub const BOUNDARY_WINDOW: usize = 64;
/// Widening constant of the critical height bracket.
pub const BRACKET_K: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub eps_rel: f64,
    pub n: usize,
    pub replicas: usize,
    pub max_mean: f64,
    pub max_q10: f64,
    pub max_q50: f64,
    pub max_q90: f64,
    pub delta_mean: f64,
    pub ell_mean: f64,
    /// Fraction with no contact in `[L, N - L]`.
    pub boundary_free: f64,
    /// 90th percentile of `max|φ| / (log N)²`.
    pub log2_q90: f64,
    /// Fraction with `N^{3/2}/(K (log N)^{3/2}) <= max|φ| <= K N^{3/2}/log N`.
    pub bracketed: f64,
    /// Fraction below the geometric middle of the bracket.
    pub lower_half: f64,
}

impl RegimeRow {
    pub const CSV_HEADER: &'static str = "eps_rel,N,replicas,max_mean,max_q10,max_q50,max_q90,delta_mean,ell_mean,boundary_free,log2_q90,bracketed,lower_half";

    pub fn to_csv(&self) -> String {
        use crate::model::fmt17;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt17(self.eps_rel),
            self.n,
            self.replicas,
            fmt17(self.max_mean),
            fmt17(self.max_q10),
            fmt17(self.max_q50),
            fmt17(self.max_q90),
            fmt17(self.delta_mean),
            fmt17(self.ell_mean),
            fmt17(self.boundary_free),
            fmt17(self.log2_q90),
            fmt17(self.bracketed),
            fmt17(self.lower_half)
        )
    }
}

/// Path of replica `r` of the regime table at volume `n`, with its contacts
/// when the law is pinned.
pub fn regime_path(
    law: RegimeLaw<'_>,
    pot: &PotentialSpec,
    n: usize,
    seed: u64,
    r: u64,
) -> Result<(FieldPath, Option<ContactStructure>)> {
    let mut rng = seed_stream(seed, &format!("regime/{n}"), r);
    match law {
        RegimeLaw::Free => Ok((sample_free_pinning_path(n, pot, &mut rng)?, None)),
        RegimeLaw::Pinned { kernel, tables } => {
            let s = sample_pinning_path(n, kernel, tables, pot, ChainMethod::Blocks, &mut rng)?;
            Ok((s.field, Some(s.contacts)))
        }
    }
}

/// Per replica: max|φ|, Δ_N, ℓ_N and whether `[L, N-L]` is contact-free.
fn regime_replica(law: RegimeLaw<'_>, pot: &PotentialSpec, n: usize, seed: u64, r: u64) -> Result<(f64, f64, f64, bool)> {
    let (field, contacts) = regime_path(law, pot, n, seed, r)?;
    match contacts {
        None => Ok((field.max_abs(), n as f64, 1.0, true)),
        Some(c) => {
            let lo = BOUNDARY_WINDOW.min(n);
            let hi = n.saturating_sub(BOUNDARY_WINDOW);
            let free = !c.tau.iter().any(|&t| t >= lo && t <= hi);
            Ok((field.max_abs(), c.delta_big as f64, c.ell_n as f64, free))
        }
    }
}

/// Height, gap and contact statistics of one law over the volumes `ns`.
pub fn regime_table_experiment(
    law: RegimeLaw<'_>,
    eps_rel: f64,
    pot: &PotentialSpec,
    ns: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<Vec<RegimeRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        let reps: Vec<(f64, f64, f64, bool)> = (0..replicas as u64)
            .into_par_iter()
            .map(|r| regime_replica(law, pot, n, seed, r))
            .collect::<Result<_>>()?;
        let maxes: Vec<f64> = reps.iter().map(|r| r.0).collect();
        let nf = n as f64;
        let ln = nf.ln();
        let lower = nf.powf(1.5) / (BRACKET_K * ln.powf(1.5));
        let upper = BRACKET_K * nf.powf(1.5) / ln;
        let middle = (lower * upper).sqrt();
        let frac = |p: &dyn Fn(&(f64, f64, f64, bool)) -> bool| reps.iter().filter(|r| p(r)).count() as f64 / replicas as f64;
        let scaled: Vec<f64> = maxes.iter().map(|m| m / (ln * ln)).collect();
        rows.push(RegimeRow {
            eps_rel,
            n,
            replicas,
            max_mean: mean_stderr(&maxes).0,
            max_q10: quantile(&maxes, 0.1),
            max_q50: quantile(&maxes, 0.5),
            max_q90: quantile(&maxes, 0.9),
            delta_mean: reps.iter().map(|r| r.1).sum::<f64>() / replicas as f64,
            ell_mean: reps.iter().map(|r| r.2).sum::<f64>() / replicas as f64,
            boundary_free: frac(&|r| r.3),
            log2_q90: quantile(&scaled, 0.9),
            bracketed: frac(&|r| r.0 >= lower && r.0 <= upper),
            lower_half: frac(&|r| r.0 < middle),
        });
    }
    Ok(rows)
}
