//! Online convolution `f(t) = a(t) + Σ_{n>=1} M(n) f(t-n)` for a
//! vector-valued sequence with matrix lags, by divide and conquer over
//! time with FFT block contributions.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::num_complex::Complex64;
use realfft::{RealFftPlanner, RealToComplex};

/// Lag matrices `M(n)`, `n >= 1`, of a fixed dimension.
pub trait LagKernel: Sync {
    fn dim(&self) -> usize;
    /// Row `x` of `M(n)`.
    fn row(&self, x: usize, n: usize, out: &mut [f64]);
}

/// Scalar lag sequence `q(n)` stored in a slice (`q[0]` ignored).
pub struct ScalarLags<'a>(pub &'a [f64]);

impl LagKernel for ScalarLags<'_> {
    fn dim(&self) -> usize {
        1
    }
    fn row(&self, _x: usize, n: usize, out: &mut [f64]) {
        out[0] = self.0.get(n).copied().unwrap_or(0.0);
    }
}

const BASE: usize = 32;
const DIRECT_OUTPUTS: usize = 32;
const CACHE_BYTES: usize = 160 << 20;

struct Solver<'a, K: LagKernel + ?Sized> {
    k: &'a K,
    d: usize,
    len: usize,
    /// `M(1..BASE)` row-major, `small[(n-1)*d*d + x*d + y]`.
    small: Vec<f64>,
    planner: RealFftPlanner<f64>,
    /// Per level: spectra `[(x*d + y) * (s/2+1) + k]`.
    spectra: Vec<Option<Arc<Vec<Complex64>>>>,
}

/// Solves in place; `f` is time-major (`f[t*d + x]`) and holds `a` on entry.
/// Final values are clamped at 0.
pub fn solve<K: LagKernel + ?Sized>(k: &K, f: &mut [f64]) {
    let d = k.dim();
    assert!(d > 0 && f.len() % d == 0);
    let len = f.len() / d;
    if len == 0 {
        return;
    }
    let mut small = vec![0.0; BASE * d * d];
    for n in 1..BASE {
        for x in 0..d {
            let o = (n - 1) * d * d + x * d;
            k.row(x, n, &mut small[o..o + d]);
        }
    }
    let top = len.next_power_of_two().max(BASE);
    let levels = top.trailing_zeros() as usize + 1;
    let mut s = Solver { k, d, len, small, planner: RealFftPlanner::new(), spectra: vec![None; levels] };
    s.rec(f, 0, top);
}

impl<K: LagKernel + ?Sized> Solver<'_, K> {
    fn rec(&mut self, f: &mut [f64], l: usize, r: usize) {
        if l >= self.len {
            return;
        }
        if r - l <= BASE {
            self.base(f, l, r.min(self.len));
            return;
        }
        let mid = l + (r - l) / 2;
        self.rec(f, l, mid);
        if mid < self.len {
            self.contribute(f, l, mid, r);
            self.rec(f, mid, r);
        }
    }

    fn base(&self, f: &mut [f64], l: usize, r: usize) {
        let d = self.d;
        for t in l..r {
            for j in l..t {
                let n = t - j;
                let m = &self.small[(n - 1) * d * d..n * d * d];
                let (head, tail) = f.split_at_mut(t * d);
                let src = &head[j * d..j * d + d];
                let dst = &mut tail[..d];
                for x in 0..d {
                    let row = &m[x * d..x * d + d];
                    let mut acc = 0.0;
                    for y in 0..d {
                        acc += row[y] * src[y];
                    }
                    dst[x] += acc;
                }
            }
            for v in &mut f[t * d..t * d + d] {
                if *v < 0.0 || !v.is_finite() {
                    *v = 0.0;
                }
            }
        }
    }

    /// Adds contributions of `f[l..mid)` to outputs `[mid, min(r, len))`.
    fn contribute(&mut self, f: &mut [f64], l: usize, mid: usize, r: usize) {
        let hi = r.min(self.len);
        if hi - mid <= DIRECT_OUTPUTS && hi < r {
            self.contribute_direct(f, l, mid, hi);
            return;
        }
        let d = self.d;
        let s = r - l;
        let half = mid - l;
        let nk = s / 2 + 1;
        let fwd = self.planner.plan_fft_forward(s);
        let inv = self.planner.plan_fft_inverse(s);
        // input spectra per column
        let src: Vec<Vec<Complex64>> = (0..d)
            .map(|y| {
                let mut buf = vec![0.0; s];
                for j in 0..half {
                    buf[j] = f[(l + j) * d + y];
                }
                let mut out = fwd.make_output_vec();
                fwd.process(&mut buf, &mut out).expect("fft length");
                out
            })
            .collect();
        let level = s.trailing_zeros() as usize;
        let cacheable = d * d * nk * 16 <= CACHE_BYTES;
        let spec = if cacheable {
            if self.spectra[level].is_none() {
                self.spectra[level] = Some(Arc::new(kernel_spectra(self.k, d, s, &fwd)));
            }
            self.spectra[level].clone()
        } else {
            None
        };
        let scale = 1.0 / s as f64;
        let rows: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|x| {
                let mut acc = vec![Complex64::new(0.0, 0.0); nk];
                match &spec {
                    Some(sp) => {
                        for y in 0..d {
                            let m = &sp[(x * d + y) * nk..(x * d + y + 1) * nk];
                            for ((a, mv), sv) in acc.iter_mut().zip(m).zip(&src[y]) {
                                *a += mv * sv;
                            }
                        }
                    }
                    None => {
                        let lag = lag_rows(self.k, x, d, s);
                        let mut buf = vec![0.0; s];
                        let mut out = fwd.make_output_vec();
                        for y in 0..d {
                            for n in 0..s {
                                buf[n] = lag[n * d + y];
                            }
                            fwd.process(&mut buf, &mut out).expect("fft length");
                            for ((a, mv), sv) in acc.iter_mut().zip(&out).zip(&src[y]) {
                                *a += mv * sv;
                            }
                        }
                    }
                }
                acc[0].im = 0.0;
                if s % 2 == 0 {
                    acc[nk - 1].im = 0.0;
                }
                let mut time = inv.make_output_vec();
                inv.process(&mut acc, &mut time).expect("fft length");
                time
            })
            .collect();
        for t in mid..hi {
            let tp = t - l;
            for x in 0..d {
                f[t * d + x] += rows[x][tp] * scale;
            }
        }
    }

    fn contribute_direct(&self, f: &mut [f64], l: usize, mid: usize, hi: usize) {
        let d = self.d;
        let mut row = vec![0.0; d];
        let mut add = vec![0.0; (hi - mid) * d];
        // lags n = t - j with t in [mid, hi), j in [l, mid)
        for n in 1..=(hi - 1 - l) {
            let t_lo = mid.max(l + n);
            let t_hi = hi.min(mid + n);
            if t_lo >= t_hi {
                continue;
            }
            for x in 0..d {
                self.k.row(x, n, &mut row);
                for t in t_lo..t_hi {
                    let j = t - n;
                    let src = &f[j * d..j * d + d];
                    let mut acc = 0.0;
                    for y in 0..d {
                        acc += row[y] * src[y];
                    }
                    add[(t - mid) * d + x] += acc;
                }
            }
        }
        for (i, a) in add.iter().enumerate() {
            f[mid * d + i] += a;
        }
    }
}

/// `lag[n*d + y] = M(n)[x, y]` for `n < s` (`n = 0` is zero).
fn lag_rows<K: LagKernel + ?Sized>(k: &K, x: usize, d: usize, s: usize) -> Vec<f64> {
    let mut lag = vec![0.0; s * d];
    for n in 1..s {
        k.row(x, n, &mut lag[n * d..n * d + d]);
    }
    lag
}

fn kernel_spectra<K: LagKernel + ?Sized>(k: &K, d: usize, s: usize, fwd: &Arc<dyn RealToComplex<f64>>) -> Vec<Complex64> {
    let nk = s / 2 + 1;
    let parts: Vec<Vec<Complex64>> = (0..d)
        .into_par_iter()
        .map(|x| {
            let lag = lag_rows(k, x, d, s);
            let mut out = Vec::with_capacity(d * nk);
            let mut buf = vec![0.0; s];
            let mut spec = fwd.make_output_vec();
            for y in 0..d {
                for n in 0..s {
                    buf[n] = lag[n * d + y];
                }
                fwd.process(&mut buf, &mut spec).expect("fft length");
                out.extend_from_slice(&spec);
            }
            out
        })
        .collect();
    parts.concat()
}

/// Linear convolution `c[t] = Σ_j a[j] b[t-j]` for `t < len`, clamped at 0.
pub fn convolve(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    if a.is_empty() || b.is_empty() || len == 0 {
        return vec![0.0; len];
    }
    let n = (a.len().min(len) + b.len().min(len)).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spec = |v: &[f64]| {
        let mut buf = vec![0.0; n];
        for (i, x) in v.iter().take(len).enumerate() {
            buf[i] = *x;
        }
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft length");
        out
    };
    let sa = spec(a);
    let sb = spec(b);
    let mut prod: Vec<Complex64> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
    prod[0].im = 0.0;
    let last = prod.len() - 1;
    prod[last].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut prod, &mut out).expect("fft length");
    out.truncate(len);
    out.resize(len, 0.0);
    out.iter().map(|v| (v / n as f64).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive<K: LagKernel>(k: &K, a: &[f64]) -> Vec<f64> {
        let d = k.dim();
        let len = a.len() / d;
        let mut f = a.to_vec();
        let mut row = vec![0.0; d];
        for t in 0..len {
            for n in 1..=t {
                for x in 0..d {
                    k.row(x, n, &mut row);
                    let mut acc = 0.0;
                    for y in 0..d {
                        acc += row[y] * f[(t - n) * d + y];
                    }
                    f[t * d + x] += acc;
                }
            }
        }
        f
    }

    struct Toy;
    impl LagKernel for Toy {
        fn dim(&self) -> usize {
            3
        }
        fn row(&self, x: usize, n: usize, out: &mut [f64]) {
            for (y, o) in out.iter_mut().enumerate() {
                let nf = n as f64;
                *o = 0.3 / (nf * nf) * (1.0 + 0.1 * x as f64) / (1.0 + 0.2 * y as f64) * if n == 1 && x == 2 { 0.0 } else { 1.0 };
            }
        }
    }

    #[test]
    fn matches_naive_vector() {
        for len in [1usize, 5, 33, 64, 100, 259, 300] {
            let d = 3;
            let mut a = vec![0.0; len * d];
            a[0] = 1.0;
            if len > 1 {
                a[d + 2] = 0.5;
            }
            let expect = naive(&Toy, &a);
            let mut f = a.clone();
            solve(&Toy, &mut f);
            for (i, (x, y)) in f.iter().zip(&expect).enumerate() {
                assert!((x - y).abs() < 1e-13 * y.abs().max(1e-3), "len={len} i={i} {x} {y}");
            }
        }
    }

    #[test]
    fn geometric_renewal() {
        // q(n) = 2^-n gives u(n) = 1/2 for n >= 1
        let q: Vec<f64> = (0..2000).map(|n| if n == 0 { 0.0 } else { 0.5f64.powi(n as i32) }).collect();
        let mut u = vec![0.0; 2000];
        u[0] = 1.0;
        solve(&ScalarLags(&q), &mut u);
        assert_eq!(u[0], 1.0);
        assert!(u[1..].iter().all(|&x| (x - 0.5).abs() < 1e-13));
    }

    #[test]
    fn convolution_small() {
        let c = convolve(&[1.0, 2.0, 3.0], &[0.5, 0.25], 5);
        let expect = [0.5, 1.25, 2.0, 0.75, 0.0];
        for (x, y) in c.iter().zip(expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
