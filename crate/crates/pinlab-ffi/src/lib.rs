//! C interface to the pinlab core.
//!
//! Every function returns a [`PinlabStatus`]; on failure the message is
//! available from [`pinlab_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pinlab::lab::{run_with_threads, ExperimentConfig, RunReport};
use pinlab::model::PotentialSpec;
use pinlab::rng::seed_stream;
use pinlab::sampler::{sample_pinning_path, ChainMethod};
use pinlab::transfer::{critical_epsilon, kernel_and_tables, DiscreteKernel, GridSpec, HitTables};
use pinlab::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PinlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    IndexOutOfRange = 3,
    NotNormalized = 4,
    InconsistentConstraints = 5,
    NoConvergence = 6,
    Bracketing = 7,
    TableLimit = 8,
    TooFewSamples = 9,
    Numeric = 10,
    Config = 11,
    Cache = 12,
    Io = 13,
    Json = 14,
    BufferTooSmall = 15,
    Utf8 = 16,
    Panic = 17,
}

impl From<&Error> for PinlabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::IndexOutOfRange { .. } => Self::IndexOutOfRange,
            Error::InvalidParameter(_) => Self::InvalidParameter,
            Error::NotNormalized(_) => Self::NotNormalized,
            Error::InconsistentConstraints(_) => Self::InconsistentConstraints,
            Error::NoConvergence(_) => Self::NoConvergence,
            Error::Bracketing(_) => Self::Bracketing,
            Error::TableLimit { .. } => Self::TableLimit,
            Error::TooFewSamples { .. } => Self::TooFewSamples,
            Error::Numeric(_) => Self::Numeric,
            Error::Config { .. } => Self::Config,
            Error::Cache(_) => Self::Cache,
            Error::Io(_) => Self::Io,
            Error::Json(_) => Self::Json,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: PinlabStatus, msg: impl Into<String>) -> PinlabStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (PinlabStatus, String)>) -> PinlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PinlabStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, m),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PinlabStatus::Panic, msg)
        }
    }
}

fn lift(e: Error) -> (PinlabStatus, String) {
    ((&e).into(), e.to_string())
}

fn null(what: &str) -> (PinlabStatus, String) {
    (PinlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PinlabStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| (PinlabStatus::Utf8, format!("{what}: {e}")))
}

/// Message of the last failure on this thread; empty after a success.
/// Valid until the next pinlab call on the same thread.
#[no_mangle]
pub extern "C" fn pinlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pinlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Pinning kernel, its hit tables and the step potential.
pub struct PinlabKernel {
    kernel: DiscreteKernel,
    tables: HitTables,
    pot: PotentialSpec,
}

/// Critical pinning strength for Gaussian steps of standard deviation `sigma`
/// on a grid of `grid_m` nodes with jumps up to `nmax`.
///
/// # Safety
/// `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pinlab_critical_epsilon(sigma: f64, grid_m: usize, nmax: usize, out: *mut f64) -> PinlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let pot = PotentialSpec::gaussian(sigma).map_err(lift)?;
        let grid = GridSpec::new(GridSpec::default_for(&pot).r, grid_m).map_err(lift)?;
        *out = critical_epsilon(&grid, &pot, nmax).map_err(lift)?;
        Ok(())
    })
}

/// Builds the kernel at `eps_rel · ε_c` with tables up to `horizon`.
/// `cache_dir` may be null.
///
/// # Safety
/// `out` must be valid for a write; `cache_dir` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pinlab_kernel_new(
    sigma: f64,
    eps_rel: f64,
    grid_m: usize,
    nmax: usize,
    horizon: usize,
    cache_dir: *const c_char,
    out: *mut *mut PinlabKernel,
) -> PinlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if !(eps_rel > 0.0) {
            return Err((PinlabStatus::InvalidParameter, "eps_rel must be positive".into()));
        }
        let dir = if cache_dir.is_null() { None } else { Some(PathBuf::from(str_arg(cache_dir, "cache_dir")?)) };
        let pot = PotentialSpec::gaussian(sigma).map_err(lift)?;
        let grid = GridSpec::new(GridSpec::default_for(&pot).r, grid_m).map_err(lift)?;
        let ec = critical_epsilon(&grid, &pot, nmax).map_err(lift)?;
        let (kernel, tables) =
            kernel_and_tables(eps_rel * ec, ec, &grid, &pot, nmax, horizon, dir.as_deref()).map_err(lift)?;
        *out = Box::into_raw(Box::new(PinlabKernel { kernel, tables, pot }));
        Ok(())
    })
}

/// # Safety
/// `k` must be null or a handle from [`pinlab_kernel_new`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn pinlab_kernel_free(k: *mut PinlabKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Pinning strength, critical strength and free energy of the kernel.
/// Any output pointer may be null.
///
/// # Safety
/// `k` must be a live handle; non-null outputs must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pinlab_kernel_info(
    k: *const PinlabKernel,
    eps: *mut f64,
    eps_c: *mut f64,
    free_energy: *mut f64,
) -> PinlabStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernel"))?;
        for (p, v) in [(eps, k.kernel.eps), (eps_c, k.kernel.eps_c), (free_energy, k.kernel.f)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Probability that the infinite-volume chain has adjacent contacts at `N` and `N+1`.
///
/// # Safety
/// `k` must be a live handle and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pinlab_kernel_partition(k: *const PinlabKernel, n: usize, out: *mut f64) -> PinlabStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = k.tables.partition(n).map_err(lift)?;
        Ok(())
    })
}

/// Samples replica `index` of the pinned field on `[0, N]` and writes
/// `φ_0, …, φ_N` to `values` (length at least `N + 1`). `contacts`, if not
/// null, receives the number of contacts in `[1, N]`.
///
/// # Safety
/// `k` must be a live handle; `values` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pinlab_sample_path(
    k: *const PinlabKernel,
    n: usize,
    seed: u64,
    index: u64,
    values: *mut f64,
    len: usize,
    contacts: *mut usize,
) -> PinlabStatus {
    guard(|| {
        let k = k.as_ref().ok_or_else(|| null("kernel"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        if len < n + 1 {
            return Err((PinlabStatus::BufferTooSmall, format!("need {} values, got {len}", n + 1)));
        }
        let mut rng = seed_stream(seed, "ffi/path", index);
        let s = sample_pinning_path(n, &k.kernel, &k.tables, &k.pot, ChainMethod::Blocks, &mut rng).map_err(lift)?;
        let out = std::slice::from_raw_parts_mut(values, n + 1);
        for (i, v) in out.iter_mut().enumerate() {
            *v = s.field.at(i);
        }
        if !contacts.is_null() {
            *contacts = s.contacts.ell_n;
        }
        Ok(())
    })
}

/// Finished experiment: criteria, CSV and summary.
pub struct PinlabReport {
    report: RunReport,
    csv: CString,
    summary: CString,
    names: Vec<CString>,
}

/// Runs the experiment described by a JSON configuration without writing
/// files. `threads` of 0 uses all cores.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pinlab_run(config_json: *const c_char, threads: usize, out: *mut *mut PinlabReport) -> PinlabStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = ExperimentConfig::from_json(str_arg(config_json, "config_json")?).map_err(lift)?;
        let report = run_with_threads(&cfg, (threads > 0).then_some(threads)).map_err(lift)?;
        let text = |s: String| CString::new(s).map_err(|e| (PinlabStatus::Utf8, e.to_string()));
        let summary = serde_json::to_string(&report.summary).map_err(|e| lift(e.into()))?;
        let names = report.criteria.iter().map(|c| text(c.name.clone())).collect::<Result<_, _>>()?;
        *out = Box::into_raw(Box::new(PinlabReport {
            csv: text(report.csv.clone())?,
            summary: text(summary)?,
            names,
            report,
        }));
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a handle from [`pinlab_run`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_free(r: *mut PinlabReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Number of criteria; 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_criteria(r: *const PinlabReport) -> usize {
    r.as_ref().map_or(0, |r| r.report.criteria.len())
}

/// Criterion `i`: name (owned by the report), measured value and verdict.
/// Any output pointer may be null.
///
/// # Safety
/// `r` must be a live handle; non-null outputs must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_criterion(
    r: *const PinlabReport,
    i: usize,
    name: *mut *const c_char,
    value: *mut f64,
    pass: *mut bool,
) -> PinlabStatus {
    guard(|| {
        let r = r.as_ref().ok_or_else(|| null("report"))?;
        let c = r.report.criteria.get(i).ok_or_else(|| {
            (PinlabStatus::IndexOutOfRange, format!("criterion {i} of {}", r.report.criteria.len()))
        })?;
        if !name.is_null() {
            *name = r.names[i].as_ptr();
        }
        if !value.is_null() {
            *value = c.value;
        }
        if !pass.is_null() {
            *pass = c.pass;
        }
        Ok(())
    })
}

/// Whether every criterion passed; false for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_passed(r: *const PinlabReport) -> bool {
    r.as_ref().is_some_and(|r| r.report.passed())
}

/// `results.csv` contents, owned by the report; null for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_csv(r: *const PinlabReport) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.csv.as_ptr())
}

/// Compact `summary.json`, owned by the report; null for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pinlab_report_summary(r: *const PinlabReport) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.summary.as_ptr())
}
