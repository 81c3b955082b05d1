//! C interface to `dupsista`.
//!
//! Objects cross the boundary as opaque handles created by `ds_*_new`-style
//! functions and released with the matching `ds_*_free`. Every fallible call
//! returns a [`DsStatus`]; on failure `ds_last_error()` describes the cause
//! for the calling thread. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use dupsista::complexity::total_complexity;
use dupsista::model::{make_problem, mse, MseMode, Problem, SignalModel};
use dupsista::num::{Matrix, Rng, StreamRole};
use dupsista::sketch::{build_sketched_system, make_sketch, SketchKind, SketchedSystem};
use dupsista::solver::{default_schedule, run, ParamSchedule, Retain, Variant};
use dupsista::{Error, ParamsFile};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    MissingSketch = 4,
    Diverged = 5,
    Io = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsSketchKind {
    Gaussian = 0,
    Count = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsVariantKind {
    Ista = 0,
    SketchedIsta = 1,
    Psista = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsMseMode {
    PerElement = 0,
    Total = 1,
}

/// Operation counts for one `(n, m, l, P, T)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DsComplexity {
    pub o_ista: u64,
    pub o_sketch: u64,
    pub n_ista: u64,
    pub n_sketch: u64,
    pub c_psista: u64,
    pub c_ista: u64,
    /// Percentage of the dense total in tenths, rounded half-up.
    pub percent_tenths: u64,
}

/// A measurement problem `y = A x⋆ + w`.
pub struct DsProblem {
    inner: Problem,
}

/// Precomputed `SA` and `Sy` for one problem.
pub struct DsSketched {
    inner: SketchedSystem,
}

/// Per-iteration step sizes and thresholds.
pub struct DsSchedule {
    inner: ParamSchedule,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DsStatus {
    match e {
        Error::DimensionMismatch { .. } => DsStatus::DimensionMismatch,
        Error::InvalidArgument(_) | Error::NotSymmetric(_) => DsStatus::InvalidArgument,
        Error::MissingSketch(_) => DsStatus::MissingSketch,
        Error::Diverged { .. } => DsStatus::Diverged,
        Error::Config(_) => DsStatus::Config,
        Error::Io(_) => DsStatus::Io,
    }
}

struct Failure(DsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DsStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            DsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            DsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn variant_of(kind: DsVariantKind, period: usize) -> Variant {
    match kind {
        DsVariantKind::Ista => Variant::Ista,
        DsVariantKind::SketchedIsta => Variant::SketchedIsta,
        DsVariantKind::Psista => Variant::Psista { period },
    }
}

/// Message for the last failed call on this thread; empty after a success.
///
/// The pointer stays valid until the next `ds_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Draws `A` (N(0,1) entries), a Bernoulli–Gaussian `x⋆` and noise of variance `sigma2`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ds_problem_generate(
    seed: u64,
    m: usize,
    n: usize,
    sigma2: f64,
    p_nonzero: f64,
    out: *mut *mut DsProblem,
) -> DsStatus {
    guard(|| {
        let model = SignalModel::new(n, p_nonzero)?;
        let mut rng = Rng::substream(seed, 0, StreamRole::Matrix);
        let inner = make_problem(&mut rng, m, n, sigma2, &model)?;
        store(out, DsProblem { inner })
    })
}

/// Builds a problem from `a` (`m*n`, row-major), `x_star` (`n`) and `noise` (`m`).
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_problem_from_arrays(
    a: *const f64,
    m: usize,
    n: usize,
    x_star: *const f64,
    noise: *const f64,
    sigma2: f64,
    out: *mut *mut DsProblem,
) -> DsStatus {
    guard(|| {
        let len = m
            .checked_mul(n)
            .ok_or_else(|| Failure(DsStatus::InvalidArgument, "m*n overflows".into()))?;
        let a = Matrix::new(m, n, slice(a, len, "a")?.to_vec())?;
        let x = slice(x_star, n, "x_star")?.to_vec();
        let w = slice(noise, m, "noise")?.to_vec();
        let inner = Problem::from_parts(Arc::new(a), x, w, sigma2)?;
        store(out, DsProblem { inner })
    })
}

/// # Safety
/// `problem` must be a live handle; `m` and `n` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ds_problem_dims(problem: *const DsProblem, m: *mut usize, n: *mut usize) -> DsStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        if m.is_null() || n.is_null() {
            return Err(null("dimension output"));
        }
        *m = p.inner.m();
        *n = p.inner.n();
        Ok(())
    })
}

/// Copies `x⋆` into `buf` (capacity `len`).
///
/// # Safety
/// `problem` must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_problem_x_star(problem: *const DsProblem, buf: *mut f64, len: usize) -> DsStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        copy_out(p.inner.x_star(), buf, len)
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if len < src.len() {
        return Err(Failure(
            DsStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    if buf.is_null() {
        return Err(null("output buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// # Safety
/// `problem` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ds_problem_free(problem: *mut DsProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Draws an `l x m` sketch from `seed` and precomputes `SA`, `Sy` for `problem`.
///
/// # Safety
/// `problem` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_sketched_build(
    problem: *const DsProblem,
    kind: DsSketchKind,
    l: usize,
    seed: u64,
    out: *mut *mut DsSketched,
) -> DsStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let kind = match kind {
            DsSketchKind::Gaussian => SketchKind::Gaussian,
            DsSketchKind::Count => SketchKind::Count,
        };
        let mut rng = Rng::substream(seed, 0, StreamRole::Sketch);
        let sketch = make_sketch(kind, &mut rng, l, p.inner.m())?;
        let inner = build_sketched_system(Arc::new(sketch), &p.inner)?;
        store(out, DsSketched { inner })
    })
}

/// # Safety
/// As for [`ds_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn ds_sketched_free(sketched: *mut DsSketched) {
    if !sketched.is_null() {
        drop(Box::from_raw(sketched));
    }
}

/// `η_t = λ_t = 1/λ_max(AᵀA)` for `t = 1..T`.
///
/// # Safety
/// `problem` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_default(
    problem: *const DsProblem,
    t: usize,
    out: *mut *mut DsSchedule,
) -> DsStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let inner = default_schedule(p.inner.a(), t)?;
        store(out, DsSchedule { inner })
    })
}

/// # Safety
/// `etas` and `lambdas` must hold `t` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_from_arrays(
    etas: *const f64,
    lambdas: *const f64,
    t: usize,
    out: *mut *mut DsSchedule,
) -> DsStatus {
    guard(|| {
        let inner = ParamSchedule::new(slice(etas, t, "etas")?.to_vec(), slice(lambdas, t, "lambdas")?.to_vec())?;
        store(out, DsSchedule { inner })
    })
}

/// Reads the schedule from a parameter file written by `dupsista train`.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_load(path: *const c_char, out: *mut *mut DsSchedule) -> DsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(DsStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let inner = ParamsFile::load(Path::new(path))?.schedule()?;
        store(out, DsSchedule { inner })
    })
}

/// Number of iterations `T`; 0 for a null handle.
///
/// # Safety
/// `schedule` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_len(schedule: *const DsSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.inner.len())
}

/// Copies step sizes and thresholds into buffers of capacity `len`.
///
/// # Safety
/// `schedule` must be live; each buffer must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_get(
    schedule: *const DsSchedule,
    etas: *mut f64,
    lambdas: *mut f64,
    len: usize,
) -> DsStatus {
    guard(|| {
        let s = handle(schedule, "schedule")?;
        copy_out(s.inner.etas(), etas, len)?;
        copy_out(s.inner.lambdas(), lambdas, len)
    })
}

/// # Safety
/// As for [`ds_problem_free`].
#[no_mangle]
pub unsafe extern "C" fn ds_schedule_free(schedule: *mut DsSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Runs the solver and writes the final iterate `x^(T+1)` into `out` (capacity `out_len >= n`).
///
/// `sketched` may be null for variants that never take a sketched step.
///
/// # Safety
/// Handles must be live (or null where allowed); `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ds_run(
    kind: DsVariantKind,
    period: usize,
    problem: *const DsProblem,
    sketched: *const DsSketched,
    schedule: *const DsSchedule,
    out: *mut f64,
    out_len: usize,
) -> DsStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let s = handle(schedule, "schedule")?;
        let sk = sketched.as_ref().map(|h| &h.inner);
        let variant = variant_of(kind, period);
        variant.validate()?;
        let traj = run(variant, &p.inner, sk, &s.inner, Retain::FinalOnly)?;
        copy_out(traj.final_iterate(), out, out_len)
    })
}

/// # Safety
/// Both arrays must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_mse(
    x_hat: *const f64,
    x_star: *const f64,
    len: usize,
    mode: DsMseMode,
    out: *mut f64,
) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output"));
        }
        let mode = match mode {
            DsMseMode::PerElement => MseMode::PerElement,
            DsMseMode::Total => MseMode::Total,
        };
        *out = mse(slice(x_hat, len, "x_hat")?, slice(x_star, len, "x_star")?, mode)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ds_total_complexity(
    n: u64,
    m: u64,
    l: u64,
    period: u64,
    t: u64,
    out: *mut DsComplexity,
) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output"));
        }
        let r = total_complexity(n, m, l, period, t)?;
        *out = DsComplexity {
            o_ista: r.o_ista,
            o_sketch: r.o_sketch,
            n_ista: r.n_ista,
            n_sketch: r.n_sketch,
            c_psista: r.c_psista,
            c_ista: r.c_ista,
            percent_tenths: r.percent_tenths(),
        };
        Ok(())
    })
}
