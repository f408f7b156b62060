//! Renewal and hit tables built from a [`DiscreteKernel`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cdq::{convolve, solve, LagKernel, ScalarLags};
use super::kernel::{DiscreteKernel, GridSpec};
use crate::error::{Error, Result};

/// Jumps of length at least 2 of the folded kernel, tilted by `e^{θn}`.
struct LongJumps<'a>(&'a DiscreteKernel, f64);

impl LagKernel for LongJumps<'_> {
    fn dim(&self) -> usize {
        self.0.grid.folded_states()
    }
    fn row(&self, x: usize, n: usize, out: &mut [f64]) {
        if n < 2 {
            out.fill(0.0);
        } else {
            self.0.folded_row_damped(x, n, self.0.f - self.1, out);
        }
    }
}

/// Scalar renewal data of the adjacent-contact process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenewalTables {
    /// `q[n]`, `q[0] = 0`.
    pub q: Vec<f64>,
    /// `u[n]`, `u[0] = 1`.
    pub u: Vec<f64>,
    /// Prefix sums of `u`.
    pub u_cum: Vec<f64>,
    /// Median of `n² e^{Fn} q(n)` over the last quartile of `n`.
    pub c_eps: f64,
}

/// Solves the renewal equation `u(n) = Σ q(m) u(n-m)` up to `n_limit` and
/// estimates the tail constant with tilt `f`.
pub fn renewal_tables(q: &[f64], n_limit: usize, f: f64) -> RenewalTables {
    let mut qq = vec![0.0; n_limit + 1];
    for (n, v) in q.iter().enumerate().take(n_limit + 1).skip(1) {
        qq[n] = *v;
    }
    let mut u = vec![0.0; n_limit + 1];
    u[0] = 1.0;
    solve(&ScalarLags(&qq), &mut u);
    let mut u_cum = Vec::with_capacity(u.len());
    let mut acc = 0.0;
    for x in &u {
        acc += x;
        u_cum.push(acc);
    }
    let c_eps = tail_constant(&qq, f);
    RenewalTables { q: qq, u, u_cum, c_eps }
}

/// Median of `n² e^{fn} q(n)` over `n` in the last quartile of the support.
pub fn tail_constant(q: &[f64], f: f64) -> f64 {
    let last = q.len().saturating_sub(1);
    if last < 4 {
        return f64::NAN;
    }
    let mut vals: Vec<f64> =
        (last - last / 4..=last).map(|n| (n * n) as f64 * (f * n as f64).exp() * q[n]).collect();
    vals.sort_by(f64::total_cmp);
    vals[vals.len() / 2]
}

/// Step law `q(n) = P(χ_1 = n)` for `n <= n_max`.
pub fn step_law_q(kernel: &DiscreteKernel, n_max: usize) -> Result<Vec<f64>> {
    let theta = kernel.block_decay()?;
    let (g, d) = block_tables(kernel, n_max, theta);
    Ok(untilt(g.iter().step_by(d).copied(), theta))
}

fn untilt(xs: impl Iterator<Item = f64>, f: f64) -> Vec<f64> {
    xs.enumerate().map(|(n, x)| x * (-f * n as f64).exp()).collect()
}

/// `e^{θr} ĝ(x, r)`, where `ĝ(x, r)` is the weight of reaching `(r, atom)`
/// for the first time from folded state `x` with jumps of length at least 2
/// and a final unit jump. Time-major, `r = 0..=horizon`.
fn block_tables(kernel: &DiscreteKernel, horizon: usize, theta: f64) -> (Vec<f64>, usize) {
    kernel.warm();
    let d = kernel.grid.folded_states();
    let mut g = vec![0.0; (horizon + 1) * d];
    if horizon >= 1 {
        let mut row = vec![0.0; d];
        for x in 0..d {
            kernel.folded_row_damped(x, 1, kernel.f - theta, &mut row);
            g[d + x] = row[0];
        }
    }
    solve(&LongJumps(kernel, theta), &mut g);
    (g, d)
}

/// Tables shared by the contact samplers, prefix-consistent in the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HitTables {
    pub d: usize,
    pub horizon: usize,
    /// `e^{θr} ĝ(x, r)`, time-major `[r*d + x]`.
    pub ghat: Vec<f64>,
    /// Tilt `θ` applied to `ghat`, the decay rate of `ĝ`.
    pub theta: f64,
    pub renewal: RenewalTables,
    /// `h(x, r)`: weight of visiting `(r, atom)` from folded state `x`, time-major.
    pub h: Vec<f64>,
}

impl HitTables {
    /// Builds all tables for times `0..=horizon`.
    pub fn build(kernel: &DiscreteKernel, horizon: usize) -> Result<Self> {
        let theta = kernel.block_decay()?;
        let (ghat, d) = block_tables(kernel, horizon, theta);
        let q_tilted: Vec<f64> = ghat.iter().step_by(d).copied().collect();
        let q = untilt(q_tilted.iter().copied(), theta);
        let mut renewal = renewal_tables(&q, horizon, kernel.f);
        renewal.c_eps = tail_constant(&q_tilted, kernel.f - theta);
        let mut h = vec![0.0; (horizon + 1) * d];
        for r in 0..=horizon {
            h[r * d] = renewal.u[r];
        }
        for x in 1..d {
            let gx = untilt((0..=horizon).map(|r| ghat[r * d + x]), theta);
            let hx = convolve(&gx, &renewal.u, horizon + 1);
            for r in 0..=horizon {
                h[r * d + x] = hx[r];
            }
        }
        Ok(Self { d, horizon, ghat, theta, renewal, h })
    }

    /// Tilted block weight `e^{θr} ĝ(x, r)`.
    #[inline]
    pub fn g(&self, x: usize, r: usize) -> f64 {
        self.ghat[r * self.d + x]
    }

    #[inline]
    pub fn hit(&self, x: usize, r: usize) -> f64 {
        self.h[r * self.d + x]
    }

    /// `P_ε(A_N) = h(atom, N+1)`.
    pub fn partition(&self, n: usize) -> Result<f64> {
        self.check(n + 1)?;
        Ok(self.hit(0, n + 1))
    }

    pub fn check(&self, r: usize) -> Result<()> {
        if r > self.horizon {
            return Err(Error::TableLimit { requested: r, limit: self.horizon });
        }
        Ok(())
    }
}

/// `hit_tables(kernel, N)`: `h[x][r]` for `r = 0..=N+1`, indexed by folded state.
pub fn hit_tables(kernel: &DiscreteKernel, n: usize, limit: usize) -> Result<Vec<Vec<f64>>> {
    if n + 1 > limit {
        return Err(Error::TableLimit { requested: n + 1, limit });
    }
    let t = HitTables::build(kernel, n + 1)?;
    Ok((0..t.d).map(|x| (0..=n + 1).map(|r| t.hit(x, r)).collect()).collect())
}

const MAGIC: &[u8; 8] = b"PINLABT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheHeader {
    version: u32,
    eps: f64,
    eps_c: f64,
    f: f64,
    sigma2: f64,
    nmax: usize,
    grid: GridSpec,
    v: Vec<f64>,
    lambda: f64,
    horizon: usize,
    d: usize,
    theta: f64,
}

/// Content hash of the parameters that determine a kernel and its tables.
pub fn cache_key(eps: f64, sigma2: f64, grid: &GridSpec, nmax: usize, horizon: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"pinlab-tables-v1");
    for x in [eps, sigma2, grid.r] {
        h.update(x.to_le_bytes());
    }
    for x in [grid.m, nmax, horizon] {
        h.update((x as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("tables-{key}.bin"))
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if n > 1 << 32 {
        return Err(Error::Cache("array length out of range".into()));
    }
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    for c in buf.chunks_exact(8) {
        out.push(f64::from_le_bytes(c.try_into().expect("8 bytes")));
    }
    Ok(out)
}

/// Writes kernel and tables to `path`.
pub fn save(path: &Path, kernel: &DiscreteKernel, tables: &HitTables) -> Result<()> {
    let header = CacheHeader {
        version: 1,
        eps: kernel.eps,
        eps_c: kernel.eps_c,
        f: kernel.f,
        sigma2: kernel.sigma2,
        nmax: kernel.nmax,
        grid: kernel.grid.clone(),
        v: kernel.v.clone(),
        lambda: kernel.lambda,
        horizon: tables.horizon,
        d: tables.d,
        theta: tables.theta,
    };
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(MAGIC)?;
        let js = serde_json::to_vec(&header)?;
        w.write_all(&(js.len() as u64).to_le_bytes())?;
        w.write_all(&js)?;
        write_f64s(&mut w, &tables.ghat)?;
        write_f64s(&mut w, &tables.renewal.u)?;
        write_f64s(&mut w, &tables.h)?;
        w.flush()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Reads kernel and tables written by [`save`].
pub fn load(path: &Path) -> Result<(DiscreteKernel, HitTables)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Cache(format!("{} is not a table cache", path.display())));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if n > 1 << 24 {
        return Err(Error::Cache("header too large".into()));
    }
    let mut js = vec![0u8; n];
    r.read_exact(&mut js)?;
    let hd: CacheHeader = serde_json::from_slice(&js)?;
    if hd.version != 1 {
        return Err(Error::Cache(format!("unsupported cache version {}", hd.version)));
    }
    let ghat = read_f64s(&mut r)?;
    let u = read_f64s(&mut r)?;
    let h = read_f64s(&mut r)?;
    let len = hd.horizon + 1;
    if ghat.len() != len * hd.d || h.len() != len * hd.d || u.len() != len {
        return Err(Error::Cache("array sizes do not match the header".into()));
    }
    let kernel =
        DiscreteKernel::from_parts(hd.eps, hd.eps_c, hd.f, hd.sigma2, hd.nmax, hd.grid, hd.v, hd.lambda);
    let q_tilted: Vec<f64> = ghat.iter().step_by(hd.d).copied().collect();
    let q = untilt(q_tilted.iter().copied(), hd.theta);
    let mut u_cum = Vec::with_capacity(len);
    let mut acc = 0.0;
    for x in &u {
        acc += x;
        u_cum.push(acc);
    }
    let c_eps = tail_constant(&q_tilted, hd.f - hd.theta);
    let renewal = RenewalTables { q, u, u_cum, c_eps };
    Ok((kernel, HitTables { d: hd.d, horizon: hd.horizon, ghat, theta: hd.theta, renewal, h }))
}
