//! Markov renewal description of the contact set: kernel, eigenproblem and tables.

pub mod cdq;
mod kernel;
mod tables;

pub use kernel::{
    build_operator, critical_epsilon, free_energy, lambda_of, leading_eigen, tail_sum, w_kernel,
    w_kernel_bivariate, w_limit, DiscreteKernel, GridSpec, Jump, WCoeffs, DEFAULT_M, DEFAULT_NMAX,
    DEFAULT_R_SIGMAS,
};
pub use tables::{
    cache_key, cache_path, hit_tables, load, renewal_tables, save, step_law_q, tail_constant, HitTables,
    RenewalTables,
};

use std::path::Path;

use crate::error::Result;
use crate::model::PotentialSpec;

/// `K^ε` on the given grid.
pub fn markov_kernel(eps: f64, grid: &GridSpec, pot: &PotentialSpec, nmax: usize) -> Result<DiscreteKernel> {
    let eps_c = critical_epsilon(grid, pot, nmax)?;
    DiscreteKernel::build(eps, eps_c, grid.clone(), pot, nmax)
}

/// Kernel with a known `ε_c` and tables up to `horizon`, read from or written
/// to `cache_dir` when given.
pub fn kernel_and_tables(
    eps: f64,
    eps_c: f64,
    grid: &GridSpec,
    pot: &PotentialSpec,
    nmax: usize,
    horizon: usize,
    cache_dir: Option<&Path>,
) -> Result<(DiscreteKernel, HitTables)> {
    let path = cache_dir.map(|d| cache_path(d, &cache_key(eps, pot.sigma2, grid, nmax, horizon)));
    if let Some(p) = &path {
        if p.exists() {
            match load(p) {
                Ok(hit) => {
                    hit.0.warm();
                    return Ok(hit);
                }
                Err(e) => eprintln!("cache {} unusable ({e}); rebuilding", p.display()),
            }
        }
    }
    let kernel = DiscreteKernel::build(eps, eps_c, grid.clone(), pot, nmax)?;
    let tables = HitTables::build(&kernel, horizon)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        save(p, &kernel, &tables)?;
    }
    Ok((kernel, tables))
}
