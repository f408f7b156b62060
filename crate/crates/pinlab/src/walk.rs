//! Integrated random walk `(Y, Z)`: moments, free paths, bridges, the local
//! limit density and the conditioned integrated Brownian motion.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::model::PotentialSpec;

/// Starting point `Y_0 = a`, `Z_0 = b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkState {
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
}

impl WalkState {
    pub fn new(a: f64, b: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(invalid("sigma2 must be positive"));
        }
        Ok(Self { a, b, sigma2 })
    }

    pub fn origin(sigma2: f64) -> Self {
        Self { a: 0.0, b: 0.0, sigma2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMoments {
    pub mean_y: f64,
    pub mean_z: f64,
    pub var_y: f64,
    pub var_z: f64,
    pub cov_yz: f64,
}

pub fn yz_moments(n: usize, state: &WalkState) -> Result<GaussianMoments> {
    if n < 1 {
        return Err(invalid("n must be at least 1"));
    }
    let nf = n as f64;
    let s2 = state.sigma2;
    Ok(GaussianMoments {
        mean_y: state.a,
        mean_z: state.b + nf * state.a,
        var_y: s2 * nf,
        var_z: s2 * nf * (nf + 1.0) * (2.0 * nf + 1.0) / 6.0,
        cov_yz: s2 * nf * (nf + 1.0) / 2.0,
    })
}

/// `Cov(Z_i, Z_j) = σ² Σ_{k=1}^{i} (i-k+1)(j-k+1)` for `1 <= i <= j`.
pub fn zz_cov(i: usize, j: usize, sigma2: f64) -> Result<f64> {
    if i < 1 || i > j {
        return Err(invalid(format!("zz_cov needs 1 <= i <= j, got ({i}, {j})")));
    }
    Ok(zz(i, j, sigma2))
}

#[inline]
fn zz(i: usize, j: usize, s2: f64) -> f64 {
    let (i, j) = if i <= j { (i as f64, j as f64) } else { (j as f64, i as f64) };
    s2 * (i * (i + 1.0) * (2.0 * i + 1.0) / 6.0 + (j - i) * i * (i + 1.0) / 2.0)
}

/// `Cov(Z_i, Y_j)`.
#[inline]
fn zy(i: usize, j: usize, s2: f64) -> f64 {
    let m = i.min(j) as f64;
    s2 * m * (2.0 * i as f64 - m + 1.0) / 2.0
}

/// A linear observable of the walk used as a conditioning target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    Z(usize),
    Y(usize),
}

impl Observable {
    fn mean(&self, st: &WalkState) -> f64 {
        match *self {
            Observable::Z(i) => st.b + i as f64 * st.a,
            Observable::Y(_) => st.a,
        }
    }

    fn cov(&self, other: &Observable, s2: f64) -> f64 {
        match (*self, *other) {
            (Observable::Z(i), Observable::Z(j)) => zz(i, j, s2),
            (Observable::Z(i), Observable::Y(j)) | (Observable::Y(j), Observable::Z(i)) => zy(i, j, s2),
            (Observable::Y(i), Observable::Y(j)) => s2 * i.min(j) as f64,
        }
    }
}

/// Equality constraint `Z_index = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pin {
    pub index: usize,
    pub value: f64,
}

/// Terminal constraint `(Y_n, Z_n) = (y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub y: f64,
    pub z: f64,
}

/// Free path `(Y_1..Y_n, Z_1..Z_n)` with steps drawn from `exp(-V)`.
pub fn sample_free_path<R: Rng + ?Sized>(
    n: usize,
    state: &WalkState,
    pot: &PotentialSpec,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let mut ys = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    let (mut y, mut z) = (state.a, state.b);
    for _ in 0..n {
        y += pot.sample_step(rng);
        z += y;
        ys.push(y);
        zs.push(z);
    }
    (ys, zs)
}

/// Exact draw of `(Y_n, Z_n)` for Gaussian steps, in O(1).
pub fn sample_endpoint<R: Rng + ?Sized>(n: usize, state: &WalkState, rng: &mut R) -> (f64, f64) {
    let m = yz_moments(n.max(1), state).expect("n >= 1");
    let g1: f64 = rng.sample(StandardNormal);
    let g2: f64 = rng.sample(StandardNormal);
    let sy = m.var_y.sqrt();
    let c = m.cov_yz / sy;
    let r = (m.var_z - c * c).max(0.0).sqrt();
    (m.mean_y + sy * g1, m.mean_z + c * g1 + r * g2)
}

struct Constraints {
    obs: Vec<Observable>,
    values: Vec<f64>,
}

fn collect_constraints(n: usize, pins: &[Pin], terminal: Option<Terminal>) -> Result<Constraints> {
    let mut sorted: Vec<Pin> = pins.to_vec();
    sorted.sort_by_key(|p| p.index);
    let mut obs = Vec::new();
    let mut values = Vec::new();
    let tol = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
    let mut last: Option<Pin> = None;
    for p in sorted {
        if p.index < 1 || p.index > n {
            return Err(Error::InconsistentConstraints(format!("pin index {} outside 1..={n}", p.index)));
        }
        if let Some(l) = last {
            if l.index == p.index {
                if !tol(l.value, p.value) {
                    return Err(Error::InconsistentConstraints(format!("conflicting pins at {}", p.index)));
                }
                continue;
            }
        }
        last = Some(p);
        if let Some(t) = terminal {
            if p.index == n {
                if !tol(p.value, t.z) {
                    return Err(Error::InconsistentConstraints("pin at n conflicts with terminal".into()));
                }
                continue;
            }
            if p.index + 1 == n && n >= 2 {
                // Z_{n-1} is fixed by the terminal pair already.
                if !tol(p.value, t.z - t.y) {
                    return Err(Error::InconsistentConstraints("pin at n-1 conflicts with terminal".into()));
                }
                continue;
            }
        }
        obs.push(Observable::Z(p.index));
        values.push(p.value);
    }
    if let Some(t) = terminal {
        if n < 2 {
            return Err(Error::InconsistentConstraints("terminal pair needs n >= 2".into()));
        }
        obs.push(Observable::Y(n));
        values.push(t.y);
        obs.push(Observable::Z(n));
        values.push(t.z);
    }
    Ok(Constraints { obs, values })
}

/// Cholesky of the correlation matrix of the constraint observables, with
/// the scale vector used to normalize it.
fn constraint_factor(c: &Constraints, s2: f64) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, Vec<f64>)> {
    let p = c.obs.len();
    let scale: Vec<f64> = c.obs.iter().map(|o| o.cov(o, s2).sqrt()).collect();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            m[(i, j)] = c.obs[i].cov(&c.obs[j], s2) / (scale[i] * scale[j]);
        }
        m[(i, i)] += 1e-12;
    }
    let ch = m
        .cholesky()
        .ok_or_else(|| Error::InconsistentConstraints("rank-deficient constraint set".into()))?;
    // reject near-singular systems rather than trusting the jitter
    let diag_min = (0..p).map(|i| ch.l()[(i, i)]).fold(f64::INFINITY, f64::min);
    if p > 0 && diag_min < 1e-7 {
        return Err(Error::InconsistentConstraints("rank-deficient constraint set".into()));
    }
    Ok((ch, scale))
}

/// Conditional mean and covariance of `(Z_1, …, Z_n)` given the constraints.
pub fn bridge_moments(
    n: usize,
    state: &WalkState,
    pins: &[Pin],
    terminal: Option<Terminal>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if n < 1 {
        return Err(invalid("n must be at least 1"));
    }
    let s2 = state.sigma2;
    let c = collect_constraints(n, pins, terminal)?;
    let p = c.obs.len();
    let mut mean: Vec<f64> = (1..=n).map(|k| Observable::Z(k).mean(state)).collect();
    let mut cov = DMatrix::<f64>::from_fn(n, n, |i, j| zz(i + 1, j + 1, s2));
    if p == 0 {
        return Ok((mean, cov));
    }
    let (ch, scale) = constraint_factor(&c, s2)?;
    // cross[k, j] = Cov(Z_{k+1}, C_j) / scale_j
    let cross = DMatrix::<f64>::from_fn(n, p, |k, j| Observable::Z(k + 1).cov(&c.obs[j], s2) / scale[j]);
    let resid = DVector::from_fn(p, |j, _| (c.values[j] - c.obs[j].mean(state)) / scale[j]);
    let sol = ch.solve(&resid);
    let shift = &cross * sol;
    for k in 0..n {
        mean[k] += shift[k];
    }
    let solved = ch.solve(&cross.transpose());
    cov -= &cross * solved;
    for o in c.obs.iter().zip(&c.values) {
        if let (Observable::Z(i), v) = o {
            mean[i - 1] = *v;
        }
    }
    Ok((mean, cov))
}

/// Exact sample of `(Z_1, …, Z_n)` under `P^{(a,b)}` conditioned on the pins
/// and the optional terminal pair, by conditioning a free path on the
/// constraint residuals. Constrained coordinates are set to their exact values.
pub fn sample_bridge<R: Rng + ?Sized>(
    n: usize,
    state: &WalkState,
    pins: &[Pin],
    terminal: Option<Terminal>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(invalid("n must be at least 1"));
    }
    let s2 = state.sigma2;
    let c = collect_constraints(n, pins, terminal)?;
    let pot = PotentialSpec::gaussian(s2.sqrt())?;
    let (ys, mut zs) = sample_free_path(n, state, &pot, rng);
    let p = c.obs.len();
    if p == 0 {
        return Ok(zs);
    }
    if pins.is_empty() {
        if let Some(t) = terminal {
            return Ok(condition_terminal(state, ys[n - 1], zs, t));
        }
    }
    let (ch, scale) = constraint_factor(&c, s2)?;
    let resid = DVector::from_fn(p, |j, _| {
        let free = match c.obs[j] {
            Observable::Z(i) => zs[i - 1],
            Observable::Y(i) => ys[i - 1],
        };
        (c.values[j] - free) / scale[j]
    });
    let sol = ch.solve(&resid);
    for (k, z) in zs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..p {
            acc += Observable::Z(k + 1).cov(&c.obs[j], s2) / scale[j] * sol[j];
        }
        *z += acc;
    }
    for (o, v) in c.obs.iter().zip(&c.values) {
        if let Observable::Z(i) = o {
            zs[i - 1] = *v;
        }
    }
    if let Some(t) = terminal {
        zs[n - 2] = t.z - t.y;
    }
    Ok(zs)
}

/// Inverse of the covariance of `(Y_l, Z_l)` in closed form, divided by σ².
#[inline]
fn terminal_precision(l: usize) -> (f64, f64, f64) {
    let l = l as f64;
    let pyy = 2.0 * (2.0 * l + 1.0) / (l * (l - 1.0));
    let pyz = -6.0 / (l * (l - 1.0));
    let pzz = 12.0 / (l * (l * l - 1.0));
    (pyy, pyz, pzz)
}

fn condition_terminal(state: &WalkState, y_free: f64, mut zs: Vec<f64>, t: Terminal) -> Vec<f64> {
    let l = zs.len();
    let (pyy, pyz, pzz) = terminal_precision(l);
    let dy = t.y - y_free;
    let dz = t.z - zs[l - 1];
    // σ² cancels between the cross covariances and the precision
    let cy = pyy * dy + pyz * dz;
    let cz = pyz * dy + pzz * dz;
    let lf = l as f64;
    for (k, z) in zs.iter_mut().enumerate() {
        let i = (k + 1) as f64;
        let cov_y = i * (i + 1.0) / 2.0;
        let cov_z = i * (i + 1.0) * (2.0 * i + 1.0) / 6.0 + (lf - i) * i * (i + 1.0) / 2.0;
        *z += cov_y * cy + cov_z * cz;
    }
    let _ = state;
    zs[l - 1] = t.z;
    zs[l - 2] = t.z - t.y;
    zs
}

/// Bridge of length `l` from `(Y_0, Z_0) = (y0, 0)` conditioned on
/// `(Y_l, Z_l) = (y_l, z_l)`; returns `Z_1, …, Z_l`.
pub fn sample_terminal_bridge<R: Rng + ?Sized>(
    l: usize,
    y0: f64,
    y_l: f64,
    z_l: f64,
    sigma: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut zs = Vec::with_capacity(l);
    let (mut y, mut z) = (y0, 0.0);
    for _ in 0..l {
        let g: f64 = rng.sample(StandardNormal);
        y += sigma * g;
        z += y;
        zs.push(z);
    }
    if l == 1 {
        zs[0] = z_l;
        return zs;
    }
    condition_terminal(&WalkState { a: y0, b: 0.0, sigma2: sigma * sigma }, y, zs, Terminal { y: y_l, z: z_l })
}

/// `(Y_k, Z_k)` of the bridge of [`sample_terminal_bridge`] at an
/// intermediate time `1 <= k < l`, in O(1).
pub fn sample_bridge_state<R: Rng + ?Sized>(
    k: usize,
    l: usize,
    y0: f64,
    t: Terminal,
    sigma: f64,
    rng: &mut R,
) -> (f64, f64) {
    debug_assert!(k >= 1 && k < l);
    let s2 = sigma * sigma;
    let (yk, zk) = sample_endpoint(k, &WalkState { a: y0, b: 0.0, sigma2: s2 }, rng);
    let (yl, zl) = sample_endpoint(l - k, &WalkState { a: yk, b: zk, sigma2: s2 }, rng);
    let (pyy, pyz, pzz) = terminal_precision(l);
    let (kf, lf) = (k as f64, l as f64);
    let dy = t.y - yl;
    let dz = t.z - zl;
    let cy = pyy * dy + pyz * dz;
    let cz = pyz * dy + pzz * dz;
    let y = yk + kf * cy + kf * (2.0 * lf - kf + 1.0) / 2.0 * cz;
    let cov_zz = kf * (kf + 1.0) * (2.0 * kf + 1.0) / 6.0 + (lf - kf) * kf * (kf + 1.0) / 2.0;
    let z = zk + kf * (kf + 1.0) / 2.0 * cy + cov_zz * cz;
    (y, z)
}

/// Mean and variance of `Σ_{i=1}^{l} Z_i` under the bridge of
/// [`sample_terminal_bridge`], in closed form.
pub fn bridge_area_moments(l: usize, y0: f64, y_l: f64, z_l: f64, sigma2: f64) -> (f64, f64) {
    let lf = l as f64;
    let mean_s = y0 * lf * (lf + 1.0) / 2.0;
    let var_s = lf * (lf + 1.0) * (lf + 2.0) * (3.0 * lf * lf + 6.0 * lf + 1.0) / 60.0;
    if l == 1 {
        return (z_l, 0.0);
    }
    if l == 2 {
        // fully constrained: Z_1 = Z_2 - Y_2
        return (2.0 * z_l - y_l, 0.0);
    }
    let c_y = lf * (lf + 1.0) * (lf + 2.0) / 6.0;
    let c_z = lf * (lf + 1.0) * (lf + 2.0) * (3.0 * lf + 1.0) / 24.0;
    let (pyy, pyz, pzz) = terminal_precision(l);
    let dy = y_l - y0;
    let dz = z_l - lf * y0;
    let mean = mean_s + c_y * (pyy * dy + pyz * dz) + c_z * (pyz * dy + pzz * dz);
    let quad = c_y * c_y * pyy + 2.0 * c_y * c_z * pyz + c_z * c_z * pzz;
    (mean, sigma2 * (var_s - quad).max(0.0))
}

/// `g(y, z) = (√3/π) exp(-2y² - 6z² + 6yz)`.
pub fn local_limit_density(y: f64, z: f64) -> f64 {
    3f64.sqrt() / PI * (-2.0 * y * y - 6.0 * z * z + 6.0 * y * z).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLimitReport {
    pub sup_discrepancy: f64,
    /// Cell-wise discrepancies on the histogram grid, row-major in `(y, z)`.
    pub cells: Vec<f64>,
    pub grid_y: Vec<f64>,
    pub grid_z: Vec<f64>,
    /// Empirical covariance of the rescaled pair.
    pub cov: [[f64; 2]; 2],
}

/// Histogram of `(Y_n/(σ√n), Z_n/(σn^{3/2}))` under `P^{(0,0)}` compared with `g`.
pub fn verify_local_limit<R: Rng + ?Sized>(
    n: usize,
    samples: usize,
    pot: &PotentialSpec,
    rng: &mut R,
) -> Result<LocalLimitReport> {
    if samples < 10_000 {
        return Err(Error::TooFewSamples { got: samples, need: 10_000 });
    }
    if n < 10 {
        return Err(invalid("local limit check needs n >= 10"));
    }
    let (ny, nz) = (30usize, 30usize);
    let (ly, lz) = (3.0, 1.5);
    let hy = 2.0 * ly / ny as f64;
    let hz = 2.0 * lz / nz as f64;
    let mut counts = vec![0u64; ny * nz];
    let sig = pot.sigma();
    let sy = sig * (n as f64).sqrt();
    let sz = sig * (n as f64).powf(1.5);
    let st = WalkState::origin(pot.sigma2);
    let (mut m_yy, mut m_yz, mut m_zz) = (0.0, 0.0, 0.0);
    for _ in 0..samples {
        let (y, z) = if pot.is_gaussian() {
            sample_endpoint(n, &st, rng)
        } else {
            let (ys, zs) = sample_free_path(n, &st, pot, rng);
            (ys[n - 1], zs[n - 1])
        };
        let (u, v) = (y / sy, z / sz);
        m_yy += u * u;
        m_yz += u * v;
        m_zz += v * v;
        let iy = ((u + ly) / hy).floor();
        let iz = ((v + lz) / hz).floor();
        if iy >= 0.0 && iz >= 0.0 && (iy as usize) < ny && (iz as usize) < nz {
            counts[iy as usize * nz + iz as usize] += 1;
        }
    }
    let sf = samples as f64;
    let (gx, gw) = crate::quad::gauss_legendre(4);
    let mut cells = Vec::with_capacity(ny * nz);
    let mut sup: f64 = 0.0;
    for iy in 0..ny {
        for iz in 0..nz {
            let y0 = -ly + iy as f64 * hy;
            let z0 = -lz + iz as f64 * hz;
            let mut avg = 0.0;
            for (a, wa) in gx.iter().zip(&gw) {
                for (b, wb) in gx.iter().zip(&gw) {
                    avg += wa * wb * local_limit_density(y0 + 0.5 * hy * (1.0 + a), z0 + 0.5 * hz * (1.0 + b));
                }
            }
            avg /= 4.0;
            let emp = counts[iy * nz + iz] as f64 / (sf * hy * hz);
            let d = emp - avg;
            sup = sup.max(d.abs());
            cells.push(d);
        }
    }
    Ok(LocalLimitReport {
        sup_discrepancy: sup,
        cells,
        grid_y: (0..ny).map(|i| -ly + (i as f64 + 0.5) * hy).collect(),
        grid_z: (0..nz).map(|i| -lz + (i as f64 + 0.5) * hz).collect(),
        cov: [[m_yy / sf, m_yz / sf], [m_yz / sf, m_zz / sf]],
    })
}

/// Covariance of `(∫₀¹ I_t dt, I_1, B_1)` for Brownian motion `B` and
/// `I_t = ∫₀ᵗ B_s ds`, and the conditional variance of the first
/// coordinate given the other two vanish.
pub fn conditioned_bm_cov() -> ([[f64; 3]; 3], f64) {
    let a = [
        [1.0 / 20.0, 1.0 / 8.0, 1.0 / 6.0],
        [1.0 / 8.0, 1.0 / 3.0, 1.0 / 2.0],
        [1.0 / 6.0, 1.0 / 2.0, 1.0],
    ];
    // Schur complement of the (I_1, B_1) block
    let (p, q, r) = (a[1][1], a[1][2], a[2][2]);
    let det = p * r - q * q;
    let (u, v) = (a[0][1], a[0][2]);
    let cond = a[0][0] - (u * u * r - 2.0 * u * v * q + v * v * p) / det;
    (a, cond)
}

/// `P(N(0, 1/720) > t)`.
pub fn phi_of_t(t: f64) -> f64 {
    0.5 * erfc(t * 360f64.sqrt())
}

/// Samples of `(B̂_t, Î_t)` at the grid points, the Brownian motion and its
/// integral conditioned on `(B_1, I_1) = (0, 0)`.
pub fn sample_conditioned_ibm<R: Rng + ?Sized>(grid: &[f64], rng: &mut R) -> Result<(Vec<f64>, Vec<f64>)> {
    if grid.is_empty() {
        return Err(invalid("empty grid"));
    }
    for (k, &t) in grid.iter().enumerate() {
        if !(t > 0.0 && t < 1.0) || (k > 0 && t <= grid[k - 1]) {
            return Err(invalid("grid must be strictly increasing inside (0, 1)"));
        }
    }
    let mut times: Vec<f64> = grid.to_vec();
    times.push(1.0);
    let mut bs = Vec::with_capacity(times.len());
    let mut is = Vec::with_capacity(times.len());
    let (mut b, mut i, mut prev) = (0.0, 0.0, 0.0);
    for &t in &times {
        let h = t - prev;
        let g1: f64 = rng.sample(StandardNormal);
        let g2: f64 = rng.sample(StandardNormal);
        // (W_h, ∫₀ʰ W) has covariance [[h, h²/2], [h²/2, h³/3]]
        let dw = h.sqrt() * g1;
        let di = 0.5 * h * dw + (h * h * h / 12.0).sqrt() * g2;
        i += b * h + di;
        b += dw;
        bs.push(b);
        is.push(i);
        prev = t;
    }
    let (b1, i1) = (bs[grid.len()], is[grid.len()]);
    // precision of (B_1, I_1): inverse of [[1, 1/2], [1/2, 1/3]]
    let (pbb, pbi, pii) = (4.0, -6.0, 12.0);
    let cb = pbb * (-b1) + pbi * (-i1);
    let ci = pbi * (-b1) + pii * (-i1);
    let mut out_b = Vec::with_capacity(grid.len());
    let mut out_i = Vec::with_capacity(grid.len());
    for (k, &t) in grid.iter().enumerate() {
        let cov_b_b1 = t;
        let cov_b_i1 = t - t * t / 2.0;
        let cov_i_b1 = t * t / 2.0;
        let cov_i_i1 = t * t / 2.0 - t * t * t / 6.0;
        out_b.push(bs[k] + cov_b_b1 * cb + cov_b_i1 * ci);
        out_i.push(is[k] + cov_i_b1 * cb + cov_i_i1 * ci);
    }
    Ok((out_b, out_i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_zz(i: usize, j: usize) -> f64 {
        (1..=i).map(|k| ((i - k + 1) * (j - k + 1)) as f64).sum()
    }

    #[test]
    fn moments_examples() {
        let st = WalkState::origin(1.0);
        let m = yz_moments(1, &st).unwrap();
        assert_eq!((m.var_y, m.var_z, m.cov_yz), (1.0, 1.0, 1.0));
        assert_eq!(yz_moments(3, &st).unwrap().var_z, 14.0);
        assert_eq!(zz_cov(2, 3, 1.0).unwrap(), 8.0);
        assert_eq!(zz_cov(1, 1, 2.5).unwrap(), 2.5);
        assert!(zz_cov(3, 2, 1.0).is_err());
        assert!(yz_moments(0, &st).is_err());
        let st = WalkState::new(0.5, -1.0, 1.0).unwrap();
        let m = yz_moments(4, &st).unwrap();
        assert_eq!((m.mean_y, m.mean_z), (0.5, 1.0));
    }

    #[test]
    fn moments_match_brute_force() {
        for n in 1..=50usize {
            let m = yz_moments(n, &WalkState::origin(1.0)).unwrap();
            let vz: f64 = (1..=n).map(|k| ((n - k + 1) * (n - k + 1)) as f64).sum();
            let cyz: f64 = (1..=n).map(|k| (n - k + 1) as f64).sum();
            assert_eq!(m.var_z, vz);
            assert_eq!(m.cov_yz, cyz);
            assert_eq!(m.var_y, n as f64);
            for i in 1..=n {
                assert_eq!(zz_cov(i, n, 1.0).unwrap(), brute_zz(i, n));
            }
        }
    }

    #[test]
    fn free_path_increments() {
        let pot = PotentialSpec::gaussian(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let st = WalkState::new(0.3, 1.0, 1.0).unwrap();
        let (ys, zs) = sample_free_path(10, &st, &pot, &mut rng);
        assert!((zs[0] - 1.0 - ys[0]).abs() < 1e-15);
        for k in 1..10 {
            assert!((zs[k] - zs[k - 1] - ys[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn free_path_variance_of_z3() {
        let pot = PotentialSpec::gaussian(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let st = WalkState::origin(1.0);
        let n = 100_000;
        let (mut s2, mut syz) = (0.0, 0.0);
        for _ in 0..n {
            let (ys, zs) = sample_free_path(3, &st, &pot, &mut rng);
            s2 += zs[2] * zs[2];
            syz += zs[2] * ys[2];
        }
        assert!((s2 / n as f64 / 14.0 - 1.0).abs() < 0.02);
        assert!((syz / n as f64 / 6.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn bridge_fully_constrained() {
        let st = WalkState::origin(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = sample_bridge(2, &st, &[Pin { index: 1, value: 0.7 }], None, &mut rng).unwrap();
        assert_eq!(z[0], 0.7);
        let z = sample_bridge(2, &st, &[], Some(Terminal { y: 0.2, z: 0.5 }), &mut rng).unwrap();
        assert_eq!(z, vec![0.3, 0.5]);
    }

    #[test]
    fn bridge_rejects_conflicts() {
        let st = WalkState::origin(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pins = [Pin { index: 2, value: 1.0 }, Pin { index: 2, value: 2.0 }];
        assert!(sample_bridge(4, &st, &pins, None, &mut rng).is_err());
        assert!(sample_bridge(4, &st, &[Pin { index: 5, value: 0.0 }], None, &mut rng).is_err());
        assert!(sample_bridge(1, &st, &[], Some(Terminal { y: 0.0, z: 0.0 }), &mut rng).is_err());
    }

    #[test]
    fn bridge_moments_match_sampling() {
        let st = WalkState::new(0.4, 0.0, 1.0).unwrap();
        let pins = [Pin { index: 3, value: 1.5 }, Pin { index: 7, value: -2.0 }];
        let term = Some(Terminal { y: 0.5, z: 0.0 });
        let n = 12;
        let (mean, cov) = bridge_moments(n, &st, &pins, term).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let reps = 100_000;
        let mut m1 = vec![0.0; n];
        let mut m2 = vec![0.0; n];
        for _ in 0..reps {
            let z = sample_bridge(n, &st, &pins, term, &mut rng).unwrap();
            for k in 0..n {
                m1[k] += z[k];
                m2[k] += z[k] * z[k];
            }
        }
        for k in 0..n {
            let mu = m1[k] / reps as f64;
            let var = m2[k] / reps as f64 - mu * mu;
            let se = (cov[(k, k)] / reps as f64).sqrt();
            assert!((mu - mean[k]).abs() <= 4.0 * se + 1e-9, "k={k} mu={mu} mean={}", mean[k]);
            if cov[(k, k)] > 1e-9 {
                assert!((var / cov[(k, k)] - 1.0).abs() < 0.03, "k={k}");
            } else {
                assert!(var < 1e-12);
            }
        }
        assert_eq!(mean[2], 1.5);
        assert!((mean[n - 1]).abs() < 1e-9);
        assert!((mean[n - 2] - (-0.5)).abs() < 1e-9);
    }

    #[test]
    fn terminal_bridge_agrees_with_general_conditioning() {
        let (l, y0, yl, zl) = (9usize, -0.7, 0.3, 0.0);
        let st = WalkState::new(y0, 0.0, 2.0).unwrap();
        let (mean, cov) = bridge_moments(l, &st, &[], Some(Terminal { y: yl, z: zl })).unwrap();
        let (am, av) = bridge_area_moments(l, y0, yl, zl, 2.0);
        let sum_mean: f64 = mean.iter().sum();
        let sum_var: f64 = cov.iter().sum();
        assert!((am - sum_mean).abs() < 1e-9);
        assert!((av - sum_var).abs() < 1e-8 * sum_var.max(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 50_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..reps {
            let z = sample_terminal_bridge(l, y0, yl, zl, 2f64.sqrt(), &mut rng);
            assert_eq!(z[l - 1], zl);
            assert_eq!(z[l - 2], zl - yl);
            let a: f64 = z.iter().sum();
            s1 += a;
            s2 += a * a;
        }
        let mu = s1 / reps as f64;
        let var = s2 / reps as f64 - mu * mu;
        assert!((mu - am).abs() < 4.0 * (av / reps as f64).sqrt());
        assert!((var / av - 1.0).abs() < 0.03);
    }

    #[test]
    fn intermediate_state_matches_bridge_moments() {
        let (l, k, y0) = (12usize, 5usize, 0.4);
        let t = Terminal { y: -1.1, z: 0.0 };
        let st = WalkState::new(y0, 0.0, 1.0).unwrap();
        let (mean, cov) = bridge_moments(l, &st, &[], Some(t)).unwrap();
        // Y_k = Z_k - Z_{k-1}
        let mz = mean[k - 1];
        let my = mean[k - 1] - mean[k - 2];
        let vz = cov[(k - 1, k - 1)];
        let vy = cov[(k - 1, k - 1)] + cov[(k - 2, k - 2)] - 2.0 * cov[(k - 1, k - 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reps = 100_000;
        let (mut sy, mut sz, mut syy, mut szz) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..reps {
            let (y, z) = sample_bridge_state(k, l, y0, t, 1.0, &mut rng);
            sy += y;
            sz += z;
            syy += y * y;
            szz += z * z;
        }
        let r = reps as f64;
        assert!((sy / r - my).abs() < 4.0 * (vy / r).sqrt());
        assert!((sz / r - mz).abs() < 4.0 * (vz / r).sqrt());
        assert!(((syy / r - (sy / r).powi(2)) / vy - 1.0).abs() < 0.03);
        assert!(((szz / r - (sz / r).powi(2)) / vz - 1.0).abs() < 0.03);
    }

    #[test]
    fn midpoint_variance_of_long_bridge() {
        // (Z_{l-1}, Z_l) = (0, 0) rescales to the integrated Brownian bridge
        let l = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let reps = 100_000;
        let mut s2 = 0.0;
        for _ in 0..reps {
            let z = sample_terminal_bridge(l, 0.0, 0.0, 0.0, 1.0, &mut rng);
            s2 += z[l / 2 - 1] * z[l / 2 - 1];
        }
        let v = s2 / reps as f64 / (l as f64).powi(3);
        assert!((v * 192.0 - 1.0).abs() < 0.03, "v*192 = {}", v * 192.0);
    }

    #[test]
    fn brascamp_lieb_exact() {
        use rand::seq::index::sample;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(2..=32usize);
            let k = rng.random_range(0..n);
            let idx = sample(&mut rng, n, k);
            let pins: Vec<Pin> = idx.iter().map(|i| Pin { index: i + 1, value: 0.0 }).collect();
            let (_, cov) = bridge_moments(n, &WalkState::origin(1.0), &pins, None).unwrap();
            for i in 0..n {
                let kf = (i + 1) as f64;
                let bound = kf * (kf + 1.0) * (2.0 * kf + 1.0) / 6.0;
                assert!(cov[(i, i)] <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn local_limit_constants() {
        assert!((local_limit_density(0.0, 0.0) - 3f64.sqrt() / PI).abs() < 1e-15);
        assert_eq!(local_limit_density(0.4, -0.2), local_limit_density(-0.4, 0.2));
        let inner = |y: f64| crate::quad::integrate(|z| local_limit_density(y, z), -6.0, 6.0, 24, 16);
        let total = crate::quad::integrate(inner, -8.0, 8.0, 32, 16);
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn conditioned_bm_constants() {
        let (a, cv) = conditioned_bm_cov();
        assert_eq!(a[0][0], 1.0 / 20.0);
        assert_eq!(a[1][2], 0.5);
        assert!((cv - 1.0 / 720.0).abs() < 1e-12);
        assert_eq!(phi_of_t(0.0), 0.5);
        assert!((phi_of_t(1.0 / 720f64.sqrt()) - 0.158655).abs() < 1e-6);
        assert!((phi_of_t(0.03) + phi_of_t(-0.03) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn conditioned_ibm_variances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid: Vec<f64> = (1..=512).map(|i| i as f64 / 513.0).collect();
        let mid = [0.5];
        let reps = 100_000;
        let (mut v_mid, mut v_int, mut m_mid) = (0.0, 0.0, 0.0);
        for _ in 0..reps {
            let (_, i) = sample_conditioned_ibm(&mid, &mut rng).unwrap();
            v_mid += i[0] * i[0];
            m_mid += i[0];
            let (_, ig) = sample_conditioned_ibm(&grid, &mut rng).unwrap();
            let h = 1.0 / 513.0;
            let trap: f64 = ig.iter().sum::<f64>() * h;
            v_int += trap * trap;
        }
        let r = reps as f64;
        assert!((v_mid / r * 192.0 - 1.0).abs() < 0.03);
        assert!((v_int / r * 720.0 - 1.0).abs() < 0.03);
        assert!((m_mid / r).abs() < 3.0 * (1.0 / 192.0 / r).sqrt());
    }
}
