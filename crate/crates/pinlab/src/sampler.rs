//! Samplers for the pinning law in finite volume and for the infinite-volume
//! law: Markov renewal contact chains filled with Gaussian bridge excursions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{ContactStructure, FieldPath, PotentialSpec};
use crate::renewal::sample_conditioned_renewal;
use crate::transfer::{DiscreteKernel, HitTables, Jump};
use crate::walk::{
    bridge_area_moments, sample_bridge_state, sample_free_path, sample_terminal_bridge, Terminal, WalkState,
};

/// Contact epochs `τ_k` with the grid state of `J_k` (0 is the atom).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactChain {
    pub tau: Vec<usize>,
    pub states: Vec<usize>,
}

impl ContactChain {
    fn start() -> Self {
        Self { tau: vec![0], states: vec![0] }
    }

    fn push(&mut self, t: usize, s: usize) {
        self.tau.push(t);
        self.states.push(s);
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.tau.iter().copied().zip(self.states.iter().copied()).collect()
    }
}

/// How the finite-volume contact chain is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainMethod {
    /// Adjacent contacts from the renewal tables, then the jumps inside each block.
    #[default]
    Blocks,
    /// Jump by jump, weighting with the hit tables.
    Hits,
}

/// Picks an index with probability proportional to `w`.
fn pick<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut t = rng.random::<f64>() * total;
    let mut last = None;
    for (i, &x) in w.iter().enumerate() {
        if x > 0.0 {
            last = Some(i);
            if t < x {
                return Some(i);
            }
            t -= x;
        }
    }
    last
}

/// Chain under `P_ε(· | A_N)` drawn jump by jump: from `(m, x)` the next
/// jump `(n, y)` has weight `K(x, dy, n) h(y, N+1-m-n)`.
pub fn sample_contact_chain<R: Rng + ?Sized>(
    kernel: &DiscreteKernel,
    tables: &HitTables,
    n: usize,
    rng: &mut R,
) -> Result<ContactChain> {
    let end = n + 1;
    tables.check(end)?;
    if !(tables.hit(0, end) > 0.0) {
        return Err(Error::Numeric(format!("h(0, {end}) underflows")));
    }
    let grid = &kernel.grid;
    let d = tables.d;
    let mut row = vec![0.0; d];
    let mut w = vec![0.0; d];
    let mut chain = ContactChain::start();
    let (mut m, mut s) = (0usize, 0usize);
    while m < end {
        let r = end - m;
        let fx = grid.fold(s);
        let target = rng.random::<f64>() * tables.hit(fx, r);
        let mut acc = 0.0;
        let mut chosen = None;
        for step in 1..=r {
            kernel.folded_row(fx, step, &mut row);
            let mass: f64 = (0..d).map(|f| row[f] * tables.hit(f, r - step)).sum();
            if mass > 0.0 {
                chosen = Some(step);
                acc += mass;
                if acc > target {
                    break;
                }
            }
        }
        let step = chosen.ok_or_else(|| Error::Numeric("no admissible jump".into()))?;
        kernel.folded_row(fx, step, &mut row);
        for f in 0..d {
            w[f] = row[f] * tables.hit(f, r - step);
        }
        let f = pick(&w, rng).ok_or_else(|| Error::Numeric("no admissible target".into()))?;
        let positive = rng.random::<f64>() < kernel.positive_share(s, f, step);
        m += step;
        s = grid.unfold(f, positive);
        chain.push(m, s);
    }
    Ok(chain)
}

/// Jump lengths `2, t-1, 3, t-2, …` of a block with `t` steps left.
fn interleaved(t: usize) -> impl Iterator<Item = usize> {
    let (mut lo, mut hi) = (2usize, t.saturating_sub(1));
    let mut from_low = true;
    std::iter::from_fn(move || {
        if lo > hi {
            return None;
        }
        let n = if from_low {
            lo += 1;
            lo - 1
        } else {
            hi -= 1;
            hi + 1
        };
        from_low = !from_low;
        Some(n)
    })
}

/// Appends the jumps of one block: from the atom at `start` to the first
/// return to the atom at `start + len`.
pub fn sample_block<R: Rng + ?Sized>(
    kernel: &DiscreteKernel,
    tables: &HitTables,
    start: usize,
    len: usize,
    chain: &mut ContactChain,
    rng: &mut R,
) -> Result<()> {
    tables.check(len)?;
    let grid = &kernel.grid;
    let d = tables.d;
    let rate = kernel.f - tables.theta;
    let mut row = vec![0.0; d];
    let mut w = vec![0.0; d];
    let (mut m, mut s, mut t) = (start, 0usize, len);
    while t > 1 {
        let fx = grid.fold(s);
        let target = rng.random::<f64>() * tables.g(fx, t);
        let mut acc = 0.0;
        let mut chosen = None;
        for n in interleaved(t) {
            kernel.folded_row_damped(fx, n, rate, &mut row);
            let mass: f64 = (1..d).map(|f| row[f] * tables.g(f, t - n)).sum();
            if mass > 0.0 {
                chosen = Some(n);
                acc += mass;
                if acc > target {
                    break;
                }
            }
        }
        let n = chosen.ok_or_else(|| Error::Numeric(format!("block of length {t} has no admissible jump")))?;
        kernel.folded_row_damped(fx, n, rate, &mut row);
        w[0] = 0.0;
        for f in 1..d {
            w[f] = row[f] * tables.g(f, t - n);
        }
        let f = pick(&w, rng).ok_or_else(|| Error::Numeric("no admissible target".into()))?;
        let positive = rng.random::<f64>() < kernel.positive_share(s, f, n);
        m += n;
        t -= n;
        s = grid.unfold(f, positive);
        chain.push(m, s);
    }
    if t != 1 {
        return Err(Error::Numeric(format!("block overshoot at {m}")));
    }
    chain.push(m + 1, 0);
    Ok(())
}

/// Chain under `P_ε(· | A_N)` drawn block by block: adjacent contacts from
/// the `u`-ratio rule, then the jumps inside each block.
pub fn sample_contact_chain_blocks<R: Rng + ?Sized>(
    kernel: &DiscreteKernel,
    tables: &HitTables,
    n: usize,
    rng: &mut R,
) -> Result<ContactChain> {
    tables.check(n + 1)?;
    let chi = sample_conditioned_renewal(&tables.renewal.q, &tables.renewal.u, n, rng)?;
    let mut chain = ContactChain::start();
    for w in chi.windows(2) {
        sample_block(kernel, tables, w[0], w[1] - w[0], &mut chain, rng)?;
    }
    Ok(chain)
}

/// Interior `(Z_1, …, Z_{l-1})` under `P^{(-a,0)}(· | Z_{l-1} = b, Z_l = 0)`.
pub fn sample_excursion<R: Rng + ?Sized>(
    l: usize,
    a: f64,
    b: f64,
    pot: &PotentialSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !pot.is_gaussian() {
        return Err(invalid("excursions are only available for the Gaussian potential"));
    }
    if l == 0 {
        return Err(invalid("excursion length must be at least 1"));
    }
    if l == 1 {
        if b != 0.0 {
            return Err(Error::InconsistentConstraints(format!("a unit excursion needs b = 0, got {b}")));
        }
        return Ok(Vec::new());
    }
    let mut z = sample_terminal_bridge(l, -a, -b, 0.0, pot.sigma(), rng);
    z.truncate(l - 1);
    Ok(z)
}

/// Field and contact structure of one finite-volume sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PinningSample {
    pub field: FieldPath,
    pub contacts: ContactStructure,
    pub chain: ContactChain,
}

/// Fills the excursions of a chain ending with `N, N+1`.
pub fn fill_chain<R: Rng + ?Sized>(
    chain: &ContactChain,
    kernel: &DiscreteKernel,
    n: usize,
    pot: &PotentialSpec,
    rng: &mut R,
) -> Result<PinningSample> {
    let k = chain.tau.len();
    if k < 3 || chain.tau[k - 1] != n + 1 || chain.tau[k - 2] != n || chain.states[k - 1] != 0 {
        return Err(Error::InconsistentConstraints("chain must end with N and N+1 at the atom".into()));
    }
    let mut interior = vec![0.0; n.saturating_sub(1)];
    for i in 1..k - 1 {
        let (t0, t1) = (chain.tau[i - 1], chain.tau[i]);
        let a = kernel.grid.value(chain.states[i - 1]);
        let b = kernel.grid.value(chain.states[i]);
        let exc = sample_excursion(t1 - t0, a, b, pot, rng)?;
        for (j, z) in exc.into_iter().enumerate() {
            interior[t0 + j] = z;
        }
    }
    let field = FieldPath::from_interior(n, &interior)?;
    let tau: Vec<usize> = chain.tau.iter().copied().filter(|&t| t <= n).collect();
    let contacts = ContactStructure::from_tau(&field, tau);
    Ok(PinningSample { field, contacts, chain: chain.clone() })
}

/// Exact sample of `P_{ε,N}` up to the grid discretization of `J`.
pub fn sample_pinning_path<R: Rng + ?Sized>(
    n: usize,
    kernel: &DiscreteKernel,
    tables: &HitTables,
    pot: &PotentialSpec,
    method: ChainMethod,
    rng: &mut R,
) -> Result<PinningSample> {
    if n < 1 {
        return Err(invalid("volume must be at least 1"));
    }
    let chain = match method {
        ChainMethod::Blocks => sample_contact_chain_blocks(kernel, tables, n, rng)?,
        ChainMethod::Hits => sample_contact_chain(kernel, tables, n, rng)?,
    };
    fill_chain(&chain, kernel, n, pot, rng)
}

/// Exact sample of the free bridge `P_{0,N}`.
pub fn sample_free_pinning_path<R: Rng + ?Sized>(n: usize, pot: &PotentialSpec, rng: &mut R) -> Result<FieldPath> {
    if !pot.is_gaussian() {
        return Err(invalid("the free bridge is only available for the Gaussian potential"));
    }
    if n < 1 {
        return Err(invalid("volume must be at least 1"));
    }
    let z = sample_terminal_bridge(n + 1, 0.0, 0.0, 0.0, pot.sigma(), rng);
    FieldPath::from_interior(n, &z[..n - 1])
}

/// Prefix `φ_0, …, φ_N` of a sample of the infinite-volume law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixSample {
    pub values: Vec<f64>,
    /// Contacts in `[0, N]`.
    pub tau: Vec<usize>,
    /// Adjacent contacts in `[0, N]`.
    pub chi: Vec<usize>,
    /// Whether the chain was killed before passing `N`.
    pub terminated: bool,
    /// Jumps drawn, including the last one.
    pub jumps: usize,
}

/// Runs the unconditioned Markov renewal chain until it passes `N` or is
/// killed, and fills the field up to `N`.
pub fn sample_infinite_volume_prefix<R: Rng + ?Sized>(
    n: usize,
    kernel: &DiscreteKernel,
    pot: &PotentialSpec,
    rng: &mut R,
) -> Result<PrefixSample> {
    if !pot.is_gaussian() {
        return Err(invalid("the prefix sampler is only available for the Gaussian potential"));
    }
    let sigma = pot.sigma();
    let mut values = vec![0.0; n + 1];
    let mut tau = vec![0usize];
    let mut chi = vec![0usize];
    let (mut m, mut s) = (0usize, 0usize);
    let mut jumps = 0;
    let mut terminated = false;
    while m < n {
        jumps += 1;
        let a = kernel.grid.value(s);
        match kernel.sample_jump(s, rng) {
            Jump::Killed => {
                terminated = true;
                let (_, zs) = sample_free_path(n - m, &WalkState { a: -a, b: 0.0, sigma2: sigma * sigma }, pot, rng);
                for (i, z) in zs.into_iter().enumerate() {
                    values[m + 1 + i] = z;
                }
                break;
            }
            Jump::To { n: step, state } => {
                let b = kernel.grid.value(state);
                let left = n - m;
                let t = Terminal { y: -b, z: 0.0 };
                if step <= left {
                    let exc = sample_excursion(step, a, b, pot, rng)?;
                    for (i, z) in exc.into_iter().enumerate() {
                        values[m + 1 + i] = z;
                    }
                    m += step;
                    s = state;
                    tau.push(m);
                    if step == 1 {
                        chi.push(m);
                    }
                } else if step <= 2 * left + 64 {
                    let zs = sample_terminal_bridge(step, -a, t.y, t.z, sigma, rng);
                    for i in 1..=left {
                        values[m + i] = zs[i - 1];
                    }
                    break;
                } else {
                    let (yk, zk) = sample_bridge_state(left, step, -a, t, sigma, rng);
                    let zs = sample_terminal_bridge(left, -a, yk, zk, sigma, rng);
                    for i in 1..=left {
                        values[m + i] = zs[i - 1];
                    }
                    break;
                }
            }
        }
    }
    Ok(PrefixSample { values, tau, chi, terminated, jumps })
}

/// Signed area and length of the first adjacent-contact block under the
/// infinite-volume law, with O(1) cost per excursion; `None` if the chain
/// is killed first.
pub fn sample_first_block_area<R: Rng + ?Sized>(
    kernel: &DiscreteKernel,
    rng: &mut R,
) -> Option<(f64, usize)> {
    let mut s = 0usize;
    let mut area = 0.0;
    let mut len = 0usize;
    loop {
        let a = kernel.grid.value(s);
        match kernel.sample_jump(s, rng) {
            Jump::Killed => return None,
            Jump::To { n, state } => {
                len = len.saturating_add(n);
                if n == 1 {
                    return Some((area, len));
                }
                let b = kernel.grid.value(state);
                let (mean, var) = bridge_area_moments(n, -a, -b, 0.0, kernel.sigma2);
                let g: f64 = rng.sample(StandardNormal);
                area += mean + var.sqrt() * g;
                s = state;
            }
        }
    }
}

/// Signed and absolute areas of the first block conditioned on `χ_1 = n`.
pub fn sample_block_area<R: Rng + ?Sized>(
    n: usize,
    kernel: &DiscreteKernel,
    tables: &HitTables,
    pot: &PotentialSpec,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(invalid("block length must be at least 1"));
    }
    let mut chain = ContactChain::start();
    sample_block(kernel, tables, 0, n, &mut chain, rng)?;
    let (mut a, mut abs) = (0.0, 0.0);
    for i in 1..chain.tau.len() {
        let l = chain.tau[i] - chain.tau[i - 1];
        let ja = kernel.grid.value(chain.states[i - 1]);
        let jb = kernel.grid.value(chain.states[i]);
        for z in sample_excursion(l, ja, jb, pot, rng)? {
            a += z;
            abs += z.abs();
        }
    }
    Ok((a, abs))
}
