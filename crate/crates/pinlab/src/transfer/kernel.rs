//! Base kernel `w_n`, the operator `G^δ`, its Perron eigenpair and the
//! pinning kernel `K^ε`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::PotentialSpec;
use crate::quad::gauss_legendre_on;

/// Default grid half-width in units of σ.
pub const DEFAULT_R_SIGMAS: f64 = 8.0;
pub const DEFAULT_M: usize = 64;
pub const DEFAULT_NMAX: usize = 1 << 14;

/// Jump lengths with a precomputed folded kernel matrix.
const SMALL_N: usize = 1024;

/// Quadrature grid for the `J` axis; the atom at 0 is carried separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r: f64,
    pub m: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GridSpec {
    pub fn new(r: f64, m: usize) -> Result<Self> {
        if !(r > 0.0) {
            return Err(invalid("grid half-width must be positive"));
        }
        if m < 2 || m % 2 == 1 {
            return Err(invalid("grid needs an even number of nodes so that 0 is not a node"));
        }
        let (nodes, weights) = gauss_legendre_on(m, -r, r);
        Ok(Self { r, m, nodes, weights })
    }

    pub fn default_for(pot: &PotentialSpec) -> Self {
        Self::new(DEFAULT_R_SIGMAS * pot.sigma(), DEFAULT_M).expect("default grid is valid")
    }

    /// Number of states including the atom.
    pub fn states(&self) -> usize {
        self.m + 1
    }

    /// Value of state `s` (0 is the atom).
    pub fn value(&self, s: usize) -> f64 {
        if s == 0 {
            0.0
        } else {
            self.nodes[s - 1]
        }
    }

    /// Number of folded states `|J|`: the atom plus the positive nodes.
    pub fn folded_states(&self) -> usize {
        self.m / 2 + 1
    }

    /// Value of folded state `f`.
    pub fn folded_value(&self, f: usize) -> f64 {
        if f == 0 {
            0.0
        } else {
            self.nodes[self.m / 2 - 1 + f]
        }
    }

    pub fn folded_weight(&self, f: usize) -> f64 {
        self.weights[self.m / 2 - 1 + f]
    }

    /// Folded index of full state `s`.
    pub fn fold(&self, s: usize) -> usize {
        if s == 0 {
            return 0;
        }
        let i = s - 1;
        let h = self.m / 2;
        if i >= h {
            i - h + 1
        } else {
            h - i
        }
    }

    /// Full state index of folded state `f` with the given sign.
    pub fn unfold(&self, f: usize, positive: bool) -> usize {
        if f == 0 {
            return 0;
        }
        let h = self.m / 2;
        if positive {
            h + f
        } else {
            h + 1 - f
        }
    }
}

/// `w_n(x, y) = exp(ln_c - a x² - b y² - k x y)` for `n >= 2`.
#[derive(Debug, Clone, Copy)]
pub struct WCoeffs {
    pub ln_c: f64,
    pub a: f64,
    pub b: f64,
    pub k: f64,
}

impl WCoeffs {
    pub fn new(n: usize, sigma2: f64) -> Self {
        debug_assert!(n >= 2);
        let nf = n as f64;
        let alpha = 2.0 * (2.0 * nf - 1.0) / (nf * (nf + 1.0));
        let beta = 2.0 * (2.0 * nf + 1.0) / (nf * (nf - 1.0));
        let c = 3f64.sqrt() / (PI * sigma2 * nf * ((nf - 1.0) * (nf + 1.0)).sqrt());
        Self {
            ln_c: c.ln(),
            a: alpha / (2.0 * sigma2),
            b: beta / (2.0 * sigma2),
            k: 2.0 / (nf * sigma2),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.ln_c - self.a * x * x - self.b * y * y - self.k * x * y).exp()
    }
}

/// Large-`n` limit of `n² w_n(x, y)`.
pub fn w_limit(sigma2: f64) -> f64 {
    3f64.sqrt() / (PI * sigma2)
}

/// Density of `(Z_{n-1}, Z_n)` at `(y, 0)` under `P^{(-x,0)}`; for `n = 1`
/// the coefficient `exp(-V(x))` of the Dirac mass at `y = 0`.
pub fn w_kernel(n: usize, x: f64, y: f64, pot: &PotentialSpec) -> Result<f64> {
    if n < 1 {
        return Err(invalid("jump length must be at least 1"));
    }
    if !pot.is_gaussian() {
        return Err(invalid("the kernel is only available for the Gaussian potential"));
    }
    if n == 1 {
        return Ok((-pot.v(x)).exp());
    }
    Ok(WCoeffs::new(n, pot.sigma2).eval(x, y))
}

/// Same density evaluated from the generic bivariate Gaussian formula with
/// covariances of the integrated walk.
pub fn w_kernel_bivariate(n: usize, x: f64, y: f64, sigma2: f64) -> f64 {
    use crate::walk::zz_cov;
    let s11 = zz_cov(n - 1, n - 1, sigma2).unwrap();
    let s12 = zz_cov(n - 1, n, sigma2).unwrap();
    let s22 = zz_cov(n, n, sigma2).unwrap();
    let m1 = -((n - 1) as f64) * x;
    let m2 = -(n as f64) * x;
    let det = s11 * s22 - s12 * s12;
    let (d1, d2) = (y - m1, 0.0 - m2);
    let q = (s22 * d1 * d1 - 2.0 * s12 * d1 * d2 + s11 * d2 * d2) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

/// `Σ_{n > nmax} e^{-δn} / n²`.
pub fn tail_sum(delta: f64, nmax: usize) -> f64 {
    let m = nmax as f64;
    if delta == 0.0 {
        // Euler–Maclaurin for Σ_{n>M} 1/n²
        return 1.0 / m - 1.0 / (2.0 * m * m) + 1.0 / (6.0 * m * m * m) - 1.0 / (30.0 * m.powi(5));
    }
    let stop = nmax.saturating_mul(64).max(nmax + 1);
    let mut acc = 0.0;
    let mut n = nmax + 1;
    while n <= stop {
        let t = (-delta * n as f64).exp() / (n as f64 * n as f64);
        acc += t;
        if t < 1e-300 || t < acc * 1e-18 {
            return acc;
        }
        n += 1;
    }
    let x = stop as f64 + 0.5;
    acc + (-delta * x).exp() / (x * (1.0 + delta * x))
}

/// Row blocks of `G^δ` over the folded states, as a full matrix.
fn assemble_operator(delta: f64, grid: &GridSpec, sigma2: f64, nmax: usize) -> DMatrix<f64> {
    let s = grid.states();
    let h = grid.m / 2;
    let last = if delta > 0.0 { nmax.min((46.0 / delta).ceil() as usize + 2) } else { nmax };
    // rows: atom and positive nodes; columns: all nodes
    let rows = h + 1;
    let chunks = 64usize;
    let span = (last.saturating_sub(1)).div_ceil(chunks).max(1);
    let partial: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = 2 + c * span;
            let hi = (lo + span).min(last + 1);
            let mut acc = vec![0.0; rows * grid.m];
            let mut ey = vec![0.0; grid.m];
            for n in lo..hi {
                let co = WCoeffs::new(n, sigma2);
                let damp = (-delta * n as f64).exp();
                if damp == 0.0 {
                    break;
                }
                for (j, &y) in grid.nodes.iter().enumerate() {
                    ey[j] = (co.ln_c - co.b * y * y).exp() * damp;
                }
                for r in 0..rows {
                    let x = if r == 0 { 0.0 } else { grid.nodes[h - 1 + r] };
                    let ex = (-co.a * x * x).exp();
                    let row = &mut acc[r * grid.m..(r + 1) * grid.m];
                    if r == 0 {
                        for j in 0..grid.m {
                            row[j] += ex * ey[j];
                        }
                    } else {
                        for j in h..grid.m {
                            let y = grid.nodes[j];
                            let e = (-co.k * x * y).exp();
                            row[j] += ex * ey[j] * e;
                            row[grid.m - 1 - j] += ex * ey[grid.m - 1 - j] / e;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut sum = vec![0.0; rows * grid.m];
    for p in &partial {
        for (a, b) in sum.iter_mut().zip(p) {
            *a += b;
        }
    }
    let tail = w_limit(sigma2) * tail_sum(delta, nmax);
    let mut g = DMatrix::<f64>::zeros(s, s);
    for r in 0..rows {
        let x = if r == 0 { 0.0 } else { grid.nodes[h - 1 + r] };
        let full = if r == 0 { 0 } else { h + r };
        let unit = (-delta).exp() * (-x * x / (2.0 * sigma2)).exp() / (2.0 * PI * sigma2).sqrt();
        g[(full, 0)] = unit;
        for j in 0..grid.m {
            g[(full, j + 1)] = (sum[r * grid.m + j] + tail) * grid.weights[j];
        }
        if r > 0 {
            // G(-x, y) = G(x, -y)
            let mirror = h + 1 - r;
            g[(mirror, 0)] = unit;
            for j in 0..grid.m {
                g[(mirror, j + 1)] = g[(full, grid.m - j)];
            }
        }
    }
    g
}

/// `G^δ` over atom + nodes: `Σ_{n<=nmax} e^{-δn} w_n(x, y)` times the
/// quadrature weight, the `n = 1` term feeding the atom column, plus the
/// separable `n > nmax` tail.
pub fn build_operator(delta: f64, grid: &GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<DMatrix<f64>> {
    if !(delta >= 0.0) {
        return Err(invalid(format!("delta must be >= 0, got {delta}")));
    }
    if !pot.is_gaussian() {
        return Err(invalid("the operator is only available for the Gaussian potential"));
    }
    if nmax < 2 {
        return Err(invalid("nmax must be at least 2"));
    }
    Ok(assemble_operator(delta, grid, pot.sigma2, nmax))
}

/// Perron eigenpair by power iteration; `v` is normalized so that `v[0] = 1`.
///
/// Stops when the Collatz–Wielandt bounds agree to relative `1e-12`.
pub fn leading_eigen(g: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let n = g.nrows();
    if n == 0 || g.ncols() != n {
        return Err(invalid("operator must be a non-empty square matrix"));
    }
    if g.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(invalid("operator must be nonnegative and finite"));
    }
    let mut v = DVector::<f64>::from_element(n, 1.0);
    let max_iter = 100_000;
    for _ in 0..max_iter {
        let w = g * &v;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            if v[i] > 0.0 {
                let r = w[i] / v[i];
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        let norm = w.amax();
        if norm == 0.0 {
            return Err(Error::Numeric("operator annihilates the iterate".into()));
        }
        let next = w / norm;
        let settled = (&next - &v).amax() < 1e-14;
        v = next;
        if hi > 0.0 && ((hi - lo) / hi < 1e-12 || settled) {
            if v[0] <= 0.0 {
                return Err(Error::Numeric("eigenvector vanishes at the atom".into()));
            }
            let lam = 0.5 * (hi + lo);
            let v0 = v[0];
            return Ok((lam, v.iter().map(|x| x / v0).collect()));
        }
    }
    Err(Error::NoConvergence(max_iter))
}

pub fn lambda_of(delta: f64, grid: &GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<f64> {
    Ok(leading_eigen(&build_operator(delta, grid, pot, nmax)?)?.0)
}

/// `1/λ(0)`.
pub fn critical_epsilon(grid: &GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<f64> {
    Ok(1.0 / lambda_of(0.0, grid, pot, nmax)?)
}

/// `F(ε)`: zero at or below `ε_c`, otherwise the root of `ε λ(δ) = 1` by bisection.
pub fn free_energy(eps: f64, eps_c: f64, grid: &GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(invalid("eps must be positive"));
    }
    if eps <= eps_c {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 0.5;
    let mut samples = Vec::new();
    loop {
        let l = lambda_of(hi, grid, pot, nmax)?;
        samples.push((hi, l));
        if eps * l < 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Bracketing(format!("ελ(δ) stays above 1 at samples {samples:?}")));
        }
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if eps * lambda_of(mid, grid, pot, nmax)? >= 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The pinning kernel `K^ε_{x,dy}(n) = ε e^{-Fn} v(y)/v(x) w_n(x, y) dy` on the grid.
#[derive(Debug, Serialize, Deserialize)]
pub struct DiscreteKernel {
    pub eps: f64,
    pub eps_c: f64,
    pub f: f64,
    pub sigma2: f64,
    pub nmax: usize,
    pub grid: GridSpec,
    /// Eigenfunction over atom + nodes, `v[0] = 1`.
    pub v: Vec<f64>,
    /// Leading eigenvalue `λ(F)`.
    pub lambda: f64,
    #[serde(skip)]
    small: OnceLock<Vec<f64>>,
    #[serde(skip)]
    jumps: OnceLock<JumpTable>,
}

/// Cumulative jump-length law per folded state for unconditioned sampling.
#[derive(Debug)]
struct JumpTable {
    cum: Vec<Vec<f64>>,
    tail: Vec<f64>,
}

/// Sampled jump of the unconditioned chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Jump {
    To { n: usize, state: usize },
    Killed,
}

impl DiscreteKernel {
    /// Assembles `K^ε` from `F(ε)` and the eigenfunction of `G^{F(ε)}`.
    pub fn build(eps: f64, eps_c: f64, grid: GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<Self> {
        let f = free_energy(eps, eps_c, &grid, pot, nmax)?;
        let g = build_operator(f, &grid, pot, nmax)?;
        let (lambda, v) = leading_eigen(&g)?;
        Ok(Self::from_parts(eps, eps_c, f, pot.sigma2, nmax, grid, v, lambda))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        eps: f64,
        eps_c: f64,
        f: f64,
        sigma2: f64,
        nmax: usize,
        grid: GridSpec,
        v: Vec<f64>,
        lambda: f64,
    ) -> Self {
        Self { eps, eps_c, f, sigma2, nmax, grid, v, lambda, small: OnceLock::new(), jumps: OnceLock::new() }
    }

    /// `min(ε/ε_c, 1)` as realized by the discretization, `ε λ(F)`.
    pub fn nominal_mass(&self) -> f64 {
        self.eps * self.lambda
    }

    fn vf(&self, f: usize) -> f64 {
        self.v[self.grid.unfold(f, true)]
    }

    /// `K(x → y, n)` over the full state space, including the quadrature
    /// weight of a node target.
    pub fn entry(&self, x: usize, y: usize, n: usize) -> f64 {
        let xv = self.grid.value(x);
        let pref = self.eps * (-self.f * n as f64).exp() / self.v[x];
        if n == 1 {
            return if y == 0 { pref * self.v[0] * self.unit_weight(xv) } else { 0.0 };
        }
        if y == 0 {
            return 0.0;
        }
        let yv = self.grid.value(y);
        let w = if n <= self.nmax {
            WCoeffs::new(n, self.sigma2).eval(xv, yv)
        } else {
            w_limit(self.sigma2) / (n as f64 * n as f64)
        };
        pref * w * self.v[y] * self.grid.weights[y - 1]
    }

    fn unit_weight(&self, x: f64) -> f64 {
        (-x * x / (2.0 * self.sigma2)).exp() / (2.0 * PI * self.sigma2).sqrt()
    }

    /// Row `x` of the folded kernel at jump length `n`: `out[0]` is the atom,
    /// `out[f]` the mass sent to `±` node `f`.
    pub fn folded_row(&self, x: usize, n: usize, out: &mut [f64]) {
        self.folded_row_damped(x, n, self.f, out);
    }

    /// Folded row with `e^{-Fn}` replaced by `e^{-rate·n}`.
    pub fn folded_row_damped(&self, x: usize, n: usize, rate: f64, out: &mut [f64]) {
        self.folded_row_tilted(x, n, out);
        let damp = (-rate * n as f64).exp();
        if damp != 1.0 {
            for o in out.iter_mut() {
                *o *= damp;
            }
        }
    }

    /// [`Self::folded_row`] without the factor `e^{-Fn}`.
    pub fn folded_row_tilted(&self, x: usize, n: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.grid.folded_states());
        if n == 0 {
            out.fill(0.0);
            return;
        }
        if n <= SMALL_N {
            if let Some(t) = self.small.get() {
                let d = self.grid.folded_states();
                let base = ((n - 1) * d + x) * d;
                out.copy_from_slice(&t[base..base + d]);
                return;
            }
        }
        self.folded_row_direct(x, n, out);
    }

    /// Undamped row computed from the closed form.
    fn folded_row_direct(&self, x: usize, n: usize, out: &mut [f64]) {
        let d = self.grid.folded_states();
        let xv = self.grid.folded_value(x);
        let pref = self.eps / self.vf(x);
        out[0] = 0.0;
        if n == 1 {
            out[0] = pref * self.v[0] * self.unit_weight(xv);
            for o in out.iter_mut().skip(1) {
                *o = 0.0;
            }
            return;
        }
        if n > self.nmax {
            let w = w_limit(self.sigma2) / (n as f64 * n as f64);
            for f in 1..d {
                out[f] = 2.0 * pref * w * self.vf(f) * self.grid.folded_weight(f);
            }
            return;
        }
        let co = WCoeffs::new(n, self.sigma2);
        let ex = co.ln_c - co.a * xv * xv;
        for f in 1..d {
            let y = self.grid.folded_value(f);
            let base = ex - co.b * y * y;
            let c = co.k * xv * y;
            let w = (base - c).exp() + (base + c).exp();
            out[f] = pref * w * self.vf(f) * self.grid.folded_weight(f);
        }
    }

    /// Exponential decay rate of first-passage weights to the atom through
    /// jumps of length at least 2: `F`, or less when the long-jump part
    /// alone has `ερ(F - θ) = 1` for some `θ < F`.
    pub fn block_decay(&self) -> Result<f64> {
        if self.f == 0.0 {
            return Ok(0.0);
        }
        let rho = |delta: f64| -> Result<f64> {
            let mut g = assemble_operator(delta, &self.grid, self.sigma2, self.nmax);
            for i in 0..g.nrows() {
                g[(i, 0)] = 0.0;
            }
            Ok(self.eps * leading_eigen(&g)?.0)
        };
        if rho(0.0)? <= 1.0 {
            return Ok(self.f);
        }
        let (mut lo, mut hi) = (0.0, self.f);
        while hi - lo > 1e-9 * self.f.max(1e-3) {
            let mid = 0.5 * (lo + hi);
            if rho(mid)? > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(self.f - hi)
    }

    /// Precomputes folded rows for short jumps.
    pub fn warm(&self) {
        self.small.get_or_init(|| {
            let d = self.grid.folded_states();
            let mut t = vec![0.0; SMALL_N * d * d];
            for n in 1..=SMALL_N {
                for x in 0..d {
                    let base = ((n - 1) * d + x) * d;
                    self.folded_row_direct(x, n, &mut t[base..base + d]);
                }
            }
            t
        });
    }

    /// Probability that a jump of length `n` from signed state `x` to the
    /// folded target `f` lands on the positive node.
    pub fn positive_share(&self, x: usize, f: usize, n: usize) -> f64 {
        if f == 0 || n > self.nmax {
            return 0.5;
        }
        let co = WCoeffs::new(n, self.sigma2);
        let c = co.k * self.grid.value(x) * self.grid.folded_value(f);
        // w(x, y) / (w(x, y) + w(x, -y)) = 1 / (1 + e^{2c})
        1.0 / (1.0 + (2.0 * c).exp())
    }

    /// Explicit total mass `Σ_n ∫ K(x, dy, n)` from full state `x`.
    pub fn row_mass(&self, x: usize) -> f64 {
        let f = self.grid.fold(x);
        let d = self.grid.folded_states();
        let mut row = vec![0.0; d];
        let mut total = 0.0;
        for n in 1..=self.nmax {
            self.folded_row(f, n, &mut row);
            total += row.iter().sum::<f64>();
        }
        total + self.tail_mass(f)
    }

    /// Mass of jumps longer than `nmax` from folded state `f`.
    pub fn tail_mass(&self, f: usize) -> f64 {
        let d = self.grid.folded_states();
        let spread: f64 = (1..d).map(|g| 2.0 * self.vf(g) * self.grid.folded_weight(g)).sum();
        self.eps * w_limit(self.sigma2) * tail_sum(self.f, self.nmax) * spread / self.vf(f)
    }

    /// `K(n) n² e^{Fn}` divided by its predicted limit `(√3/(πσ²)) ε v(y)/v(x)`,
    /// for node states.
    pub fn asymptotic_ratio(&self, x: usize, y: usize, n: usize) -> f64 {
        // the factor e^{-Fn} cancels exactly; dividing it out would overflow
        let w = if n <= self.nmax {
            WCoeffs::new(n, self.sigma2).eval(self.grid.value(x), self.grid.value(y))
        } else {
            w_limit(self.sigma2) / (n as f64 * n as f64)
        };
        w * (n * n) as f64 / w_limit(self.sigma2)
    }

    fn jump_table(&self) -> &JumpTable {
        self.jumps.get_or_init(|| {
            let d = self.grid.folded_states();
            let cum: Vec<Vec<f64>> = (0..d)
                .into_par_iter()
                .map(|x| {
                    let mut row = vec![0.0; d];
                    let mut c = Vec::with_capacity(self.nmax + 1);
                    c.push(0.0);
                    let mut acc = 0.0;
                    for n in 1..=self.nmax {
                        self.folded_row(x, n, &mut row);
                        acc += row.iter().sum::<f64>();
                        c.push(acc);
                    }
                    c
                })
                .collect();
            let tail = (0..d).map(|f| self.tail_mass(f)).collect();
            JumpTable { cum, tail }
        })
    }

    /// One step of the unconditioned chain from full state `x`.
    pub fn sample_jump<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Jump {
        let fx = self.grid.fold(x);
        let table = self.jump_table();
        let cum = &table.cum[fx];
        let head = cum[self.nmax];
        let u: f64 = rng.random::<f64>();
        let target = u * (head + table.tail[fx]).max(1.0);
        let d = self.grid.folded_states();
        let n;
        let mut row = vec![0.0; d];
        if target >= head + table.tail[fx] {
            return Jump::Killed;
        } else if target >= head {
            // separable tail: n ∝ e^{-Fn}/n², target ∝ v(y) w_y
            n = sample_power_tail(self.nmax, self.f, rng);
            self.folded_row_tilted(fx, self.nmax + 1, &mut row);
        } else {
            n = cum.partition_point(|&c| c <= target).clamp(1, self.nmax);
            self.folded_row(fx, n, &mut row);
        }
        let total: f64 = row.iter().sum();
        let mut t = rng.random::<f64>() * total;
        let mut f = 0;
        for (k, w) in row.iter().enumerate() {
            if *w > 0.0 {
                f = k;
                if t < *w {
                    break;
                }
                t -= w;
            }
        }
        let positive = rng.random::<f64>() < self.positive_share(x, f, n);
        Jump::To { n, state: self.grid.unfold(f, positive) }
    }
}

/// Draws `n > m` with probability proportional to `e^{-Fn}/n²`.
fn sample_power_tail<R: Rng + ?Sized>(m: usize, f: f64, rng: &mut R) -> usize {
    loop {
        let u: f64 = rng.random::<f64>();
        let mf = m as f64 + 0.5;
        let n = (mf / (1.0 - u) + 0.5).floor().max(m as f64 + 1.0);
        if n > 1e15 {
            continue;
        }
        if f == 0.0 || rng.random::<f64>() < (-f * (n - m as f64 - 1.0)).exp() {
            return n as usize;
        }
    }
}
