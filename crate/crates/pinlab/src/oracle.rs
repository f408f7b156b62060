//! Exact small-volume laws of the contact set, for checking samplers.
//!
//! A contact set is encoded as a bitmask over the interior sites
//! `1..N-1`, bit `i-1` for site `i`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::transfer::{DiscreteKernel, HitTables};
use crate::walk::zz_cov;

/// Largest volume enumerated.
pub const MAX_ENUM_N: usize = 16;

fn check_n(n: usize) -> Result<()> {
    if !(2..=MAX_ENUM_N).contains(&n) {
        return Err(invalid(format!("enumeration needs 2 <= N <= {MAX_ENUM_N}, got {n}")));
    }
    Ok(())
}

/// Sites of the bitmask, ascending.
pub fn sites(mask: usize, n: usize) -> Vec<usize> {
    (1..n).filter(|&i| mask >> (i - 1) & 1 == 1).collect()
}

/// Bitmask of the interior contacts in `tau`.
pub fn mask_of(tau: &[usize], n: usize) -> usize {
    tau.iter().filter(|&&t| t >= 1 && t < n).fold(0, |m, &t| m | 1 << (t - 1))
}

/// Density at the origin of `(Z_i)_{i ∈ idx}` for the integrated walk
/// started at `(0, 0)`.
fn density_at_zero(idx: &[usize], sigma2: f64) -> Result<f64> {
    let k = idx.len();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        let (i, j) = (idx[a].min(idx[b]), idx[a].max(idx[b]));
        zz_cov(i, j, sigma2).unwrap_or(f64::NAN)
    });
    let chol = cov.cholesky().ok_or_else(|| Error::Numeric("singular covariance".into()))?;
    let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Ok((-0.5 * (k as f64) * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet).exp())
}

/// Law of the contact set under `P_{ε,N}` with Gaussian steps of variance
/// `sigma2`: mask `A` has weight `ε^{|A|}` times the density at zero of
/// `(Z_i)_{i ∈ A ∪ {N, N+1}}`.
pub fn enumerate_contact_law(n: usize, eps: f64, sigma2: f64) -> Result<Vec<f64>> {
    check_n(n)?;
    if !(eps >= 0.0) || !(sigma2 > 0.0) {
        return Err(invalid("need eps >= 0 and sigma2 > 0"));
    }
    let mut w = Vec::with_capacity(1 << (n - 1));
    for mask in 0..1usize << (n - 1) {
        let mut idx = sites(mask, n);
        let k = idx.len();
        idx.extend([n, n + 1]);
        w.push(eps.powi(k as i32) * density_at_zero(&idx, sigma2)?);
    }
    normalize(w)
}

/// Law of the contact set implied by the discretized kernel: products of
/// folded rows along the contacts, ending with a unit jump to the atom.
pub fn kernel_contact_law(kernel: &DiscreteKernel, n: usize) -> Result<Vec<f64>> {
    check_n(n)?;
    let d = kernel.grid.folded_states();
    let rows: Vec<DMatrix<f64>> = (0..=n)
        .map(|len| {
            let mut m = DMatrix::zeros(d, d);
            if len > 0 {
                let mut row = vec![0.0; d];
                for x in 0..d {
                    kernel.folded_row(x, len, &mut row);
                    for y in 0..d {
                        m[(x, y)] = row[y];
                    }
                }
            }
            m
        })
        .collect();
    let mut w = Vec::with_capacity(1 << (n - 1));
    for mask in 0..1usize << (n - 1) {
        let mut v = DVector::zeros(d);
        v[0] = 1.0;
        let mut last = 0;
        for t in sites(mask, n).into_iter().chain([n]) {
            v = rows[t - last].transpose() * v;
            last = t;
        }
        let end: f64 = (0..d).map(|x| v[x] * rows[1][(x, 0)]).sum();
        w.push(end);
    }
    normalize(w)
}

/// `P_{ε,N}(τ ∩ [L, N-L] = ∅)` from the kernel and the hitting tables: the
/// last contact `a < L` is reached by forward products of kernel rows, the
/// first contact `b > N-L` is followed by `h(·, N+1-b)`.
pub fn bulk_free_probability(kernel: &DiscreteKernel, tables: &HitTables, n: usize, l: usize) -> Result<f64> {
    if l == 0 || 2 * l > n + 1 {
        return Err(invalid(format!("window {l} does not fit volume {n}")));
    }
    tables.check(n + 1)?;
    let d = tables.d;
    let mut row = vec![0.0; d];
    let mut fwd = vec![vec![0.0; d]; l];
    fwd[0][0] = 1.0;
    for a in 1..l {
        for a0 in 0..a {
            for x in 0..d {
                let w = fwd[a0][x];
                if w == 0.0 {
                    continue;
                }
                kernel.folded_row(x, a - a0, &mut row);
                for y in 0..d {
                    fwd[a][y] += w * row[y];
                }
            }
        }
    }
    let mut p = 0.0;
    for (a, fa) in fwd.iter().enumerate() {
        for b in (n - l + 1)..=n {
            for x in 0..d {
                if fa[x] == 0.0 {
                    continue;
                }
                kernel.folded_row(x, b - a, &mut row);
                p += fa[x] * (0..d).map(|y| row[y] * tables.hit(y, n + 1 - b)).sum::<f64>();
            }
        }
    }
    Ok(p / tables.partition(n)?)
}

fn normalize(mut w: Vec<f64>) -> Result<Vec<f64>> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numeric(format!("contact law has total weight {total}")));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Relative frequencies of the masks.
pub fn empirical_law(masks: &[usize], n: usize) -> Result<Vec<f64>> {
    check_n(n)?;
    if masks.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut c = vec![0.0; 1 << (n - 1)];
    for &m in masks {
        *c.get_mut(m).ok_or_else(|| invalid(format!("mask {m} out of range")))? += 1.0;
    }
    let total = masks.len() as f64;
    c.iter_mut().for_each(|x| *x /= total);
    Ok(c)
}

/// Total-variation distance `½ Σ |p - q|`.
pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("distributions differ in support size"));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}
