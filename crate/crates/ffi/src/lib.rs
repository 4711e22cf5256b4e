//! C ABI for `phreg`.
//!
//! Objects are opaque heap handles released with the matching `*_free`
//! function. Every fallible call returns a [`PhregStatus`]; on failure the
//! message is available from [`phreg_last_error`] on the same thread.
//! Matrices cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use phreg::analysis::{
    analyze_pencil, check_derivative_condition, check_proportional_condition,
    check_rank_feasibility, completely_observable,
};
use phreg::regularize::{
    regularize_combined, regularize_derivative, regularize_derivative_with_rank,
    regularize_proportional, FeedbackSynthesis, SynthesisOptions,
};
use phreg::sysmodel::{random_ph_system, validate_ph};
use phreg::{DescriptorSystem, Error, Matrix, PhRealization, RankTolerance};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A solvability condition fails or the target rank is infeasible.
    Unsolvable = 3,
    /// The synthesized closed loop did not pass verification.
    VerificationFailed = 4,
    /// A numerical factorization failed.
    Numerical = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PhregMode {
    Proportional = 0,
    Derivative = 1,
    /// Derivative feedback with a prescribed rank of the closed-loop `E`.
    DerivativeRank = 2,
    /// Derivative and proportional feedback with a prescribed rank.
    Combined = 3,
}

/// Opaque descriptor system `(E, A, B, C)`.
pub struct PhregSystem(DescriptorSystem);

/// Opaque port-Hamiltonian realization `(J, R, Q, G, P)`.
pub struct PhregRealization(PhRealization);

/// Opaque synthesis result.
pub struct PhregSynthesis {
    syn: FeedbackSynthesis,
    n: usize,
    m: usize,
}

/// Pencil and solvability analysis. Counts that do not apply are `-1`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PhregAnalysis {
    pub regular: bool,
    pub index: i64,
    pub rank_e: i64,
    pub finite_eig_count: i64,
    pub proportional_condition: bool,
    pub derivative_condition: bool,
    pub completely_observable: bool,
    pub mu: i64,
    /// Feasible ranks for derivative feedback are `lo..=hi`, restricted to
    /// `n - r` even when `parity` is set.
    pub feasible_lo: i64,
    pub feasible_hi: i64,
    pub parity: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PhregSynthesisInfo {
    pub n: u64,
    pub m: u64,
    pub achieved_rank: i64,
    pub index: i64,
    pub regular: bool,
    pub has_k: bool,
    pub has_f: bool,
    /// `1` preserved, `0` violated, `-1` not checked (no realization).
    pub ph_preserved: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (PhregStatus, String);

fn status_of(e: &Error) -> PhregStatus {
    match e {
        Error::ProportionalConditionFailed { .. }
        | Error::DerivativeConditionFailed { .. }
        | Error::NotObservable(_)
        | Error::RankInfeasible { .. }
        | Error::ParityViolated { .. }
        | Error::SynthesisExhausted { .. }
        | Error::SingularPencil => PhregStatus::Unsolvable,
        Error::VerificationFailed(_) => PhregStatus::VerificationFailed,
        Error::SingularBlock { .. } | Error::SchurFailed => PhregStatus::Numerical,
        _ => PhregStatus::InvalidArgument,
    }
}

fn lib(e: Error) -> Failure {
    (status_of(&e), e.to_string())
}

/// Runs `f`, records any error or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PhregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PhregStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PhregStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((PhregStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `data` must point to `rows * cols` readable doubles when both are
/// nonzero.
unsafe fn read_matrix(
    data: *const f64,
    rows: usize,
    cols: usize,
    name: &str,
) -> Result<Matrix, Failure> {
    let len = rows.checked_mul(cols).ok_or((
        PhregStatus::InvalidArgument,
        format!("{name}: size overflow"),
    ))?;
    if len == 0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    non_null(data, name)?;
    let s = std::slice::from_raw_parts(data, len);
    Ok(Matrix::from_row_slice(rows, cols, s))
}

/// # Safety
/// `out` must point to `m.len()` writable doubles when `m` is nonempty.
unsafe fn write_matrix(m: &Matrix, out: *mut f64) {
    if m.is_empty() {
        return;
    }
    let s = std::slice::from_raw_parts_mut(out, m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            s[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

fn tolerance(rel_tol: f64) -> Result<RankTolerance, Failure> {
    let d = RankTolerance::default();
    let rel = if rel_tol > 0.0 { rel_tol } else { d.relative };
    RankTolerance::new(rel, d.absolute).map_err(lib)
}

fn count(v: Option<usize>) -> i64 {
    v.map_or(-1, |x| x as i64)
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn phreg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn phreg_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version string contains NUL"),
        };
    VERSION.as_ptr()
}

/// Creates a system from row-major `E`, `A` (`n x n`), `B` (`n x m`) and
/// `C` (`m x n`).
///
/// # Safety
/// Each matrix pointer must reference the stated number of doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_system_new(
    n: usize,
    m: usize,
    e: *const f64,
    a: *const f64,
    b: *const f64,
    c: *const f64,
    out: *mut *mut PhregSystem,
) -> PhregStatus {
    guard(|| {
        non_null(out, "out")?;
        let sys = DescriptorSystem::new(
            read_matrix(e, n, n, "E")?,
            read_matrix(a, n, n, "A")?,
            read_matrix(b, n, m, "B")?,
            read_matrix(c, m, n, "C")?,
        )
        .map_err(lib)?;
        *out = Box::into_raw(Box::new(PhregSystem(sys)));
        Ok(())
    })
}

/// # Safety
/// `sys` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn phreg_system_free(sys: *mut PhregSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Dimensions of a system.
///
/// # Safety
/// `sys` must be a live handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_system_dims(
    sys: *const PhregSystem,
    n: *mut usize,
    m: *mut usize,
) -> PhregStatus {
    guard(|| {
        non_null(sys, "sys")?;
        non_null(n, "n")?;
        non_null(m, "m")?;
        *n = (*sys).0.n();
        *m = (*sys).0.m();
        Ok(())
    })
}

/// Creates a realization from row-major `J`, `R`, `Q` (`n x n`) and `G`,
/// `P` (`n x m`). `p` may be null for `P = 0`.
///
/// # Safety
/// Non-null pointers must reference the stated number of doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_realization_new(
    n: usize,
    m: usize,
    j: *const f64,
    r: *const f64,
    q: *const f64,
    g: *const f64,
    p: *const f64,
    out: *mut *mut PhregRealization,
) -> PhregStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = if p.is_null() {
            Matrix::zeros(n, m)
        } else {
            read_matrix(p, n, m, "P")?
        };
        let real = PhRealization::new(
            read_matrix(j, n, n, "J")?,
            read_matrix(r, n, n, "R")?,
            read_matrix(q, n, n, "Q")?,
            read_matrix(g, n, m, "G")?,
            p,
        )
        .map_err(lib)?;
        *out = Box::into_raw(Box::new(PhregRealization(real)));
        Ok(())
    })
}

/// # Safety
/// `real` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn phreg_realization_free(real: *mut PhregRealization) {
    if !real.is_null() {
        drop(Box::from_raw(real));
    }
}

/// Deterministic random port-Hamiltonian system and its realization.
///
/// # Safety
/// `out_sys` and `out_real` must be writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_generate(
    n: usize,
    m: usize,
    rank_e: usize,
    rank_r: usize,
    seed: u64,
    singular_q: bool,
    out_sys: *mut *mut PhregSystem,
    out_real: *mut *mut PhregRealization,
) -> PhregStatus {
    guard(|| {
        non_null(out_sys, "out_sys")?;
        non_null(out_real, "out_real")?;
        if singular_q && n < 2 {
            return Err((
                PhregStatus::InvalidArgument,
                "singular Q needs n >= 2".into(),
            ));
        }
        let (sys, real) = random_ph_system(n, m, rank_e, rank_r, seed, singular_q).map_err(lib)?;
        *out_sys = Box::into_raw(Box::new(PhregSystem(sys)));
        *out_real = Box::into_raw(Box::new(PhregRealization(real)));
        Ok(())
    })
}

/// Checks the port-Hamiltonian identities at residual tolerance `tol`
/// (`<= 0` selects `1e-8`).
///
/// # Safety
/// `sys` and `real` must be live handles and `verdict` writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_validate(
    sys: *const PhregSystem,
    real: *const PhregRealization,
    tol: f64,
    verdict: *mut bool,
) -> PhregStatus {
    guard(|| {
        non_null(sys, "sys")?;
        non_null(real, "real")?;
        non_null(verdict, "verdict")?;
        let tol = if tol > 0.0 { tol } else { 1e-8 };
        let rep = validate_ph(&(*sys).0, &(*real).0, tol).map_err(lib)?;
        *verdict = rep.verdict;
        Ok(())
    })
}

/// Regularity, index and solvability conditions at relative rank
/// tolerance `rel_tol` (`<= 0` selects the default).
///
/// # Safety
/// `sys` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_analyze(
    sys: *const PhregSystem,
    rel_tol: f64,
    out: *mut PhregAnalysis,
) -> PhregStatus {
    guard(|| {
        non_null(sys, "sys")?;
        non_null(out, "out")?;
        let s = &(*sys).0;
        let tol = tolerance(rel_tol)?;
        let rep = analyze_pencil(&s.e, &s.a, &tol).map_err(lib)?;
        let mut res = PhregAnalysis {
            regular: rep.regular,
            index: count(rep.index),
            rank_e: rep.rank_e as i64,
            finite_eig_count: count(rep.finite_eig_count),
            proportional_condition: check_proportional_condition(s, &tol).holds,
            derivative_condition: check_derivative_condition(s, &tol).holds,
            completely_observable: completely_observable(s, &tol),
            mu: -1,
            feasible_lo: -1,
            feasible_hi: -1,
            parity: false,
        };
        if res.completely_observable {
            let v = check_rank_feasibility(s, s.n(), &tol).map_err(lib)?;
            res.mu = count(v.rank("mu"));
            if let Some((lo, hi)) = v.feasible_rank_range {
                res.feasible_lo = lo as i64;
                res.feasible_hi = hi as i64;
            }
            res.parity = v.parity_constraint == Some(true);
        }
        *out = res;
        Ok(())
    })
}

/// Synthesizes feedback. `real` may be null; then the closed loop is not
/// checked for port-Hamiltonian structure. `rank` is used only by the
/// rank-prescribing modes.
///
/// # Safety
/// `sys` must be a live handle, `real` null or a live handle, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_regularize(
    sys: *const PhregSystem,
    real: *const PhregRealization,
    mode: PhregMode,
    rank: usize,
    seed: u64,
    rel_tol: f64,
    out: *mut *mut PhregSynthesis,
) -> PhregStatus {
    guard(|| {
        non_null(sys, "sys")?;
        non_null(out, "out")?;
        let s = &(*sys).0;
        let real = real.as_ref().map(|r| &r.0);
        let opts = SynthesisOptions {
            tol: tolerance(rel_tol)?,
            seed,
            ..SynthesisOptions::default()
        };
        let syn = match mode {
            PhregMode::Proportional => regularize_proportional(s, real, &opts),
            PhregMode::Derivative => regularize_derivative(s, real, &opts),
            PhregMode::DerivativeRank => regularize_derivative_with_rank(s, real, rank, &opts),
            PhregMode::Combined => regularize_combined(s, real, rank, &opts),
        }
        .map_err(lib)?;
        *out = Box::into_raw(Box::new(PhregSynthesis {
            syn,
            n: s.n(),
            m: s.m(),
        }));
        Ok(())
    })
}

/// # Safety
/// `syn` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn phreg_synthesis_free(syn: *mut PhregSynthesis) {
    if !syn.is_null() {
        drop(Box::from_raw(syn));
    }
}

/// Summary of a synthesis result.
///
/// # Safety
/// `syn` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn phreg_synthesis_info(
    syn: *const PhregSynthesis,
    out: *mut PhregSynthesisInfo,
) -> PhregStatus {
    guard(|| {
        non_null(syn, "syn")?;
        non_null(out, "out")?;
        let h = &*syn;
        let (s, v) = (&h.syn, &h.syn.verification);
        *out = PhregSynthesisInfo {
            n: h.n as u64,
            m: h.m as u64,
            achieved_rank: s.achieved_rank as i64,
            index: count(v.index),
            regular: v.regular,
            has_k: s.k.is_some(),
            has_f: s.f.is_some(),
            ph_preserved: v.ph_preserved.map_or(-1, i32::from),
        };
        Ok(())
    })
}

/// Copies the gains into row-major `m x m` buffers. A null buffer skips
/// that gain; an absent gain is written as zeros.
///
/// # Safety
/// `syn` must be a live handle; non-null buffers must hold `m * m`
/// doubles where `m` is the input dimension.
#[no_mangle]
pub unsafe extern "C" fn phreg_synthesis_gains(
    syn: *const PhregSynthesis,
    k: *mut f64,
    f: *mut f64,
) -> PhregStatus {
    guard(|| {
        non_null(syn, "syn")?;
        let h = &*syn;
        let s = &h.syn;
        let zero = Matrix::zeros(h.m, h.m);
        if !k.is_null() {
            write_matrix(s.k.as_ref().unwrap_or(&zero), k);
        }
        if !f.is_null() {
            write_matrix(s.f.as_ref().unwrap_or(&zero), f);
        }
        Ok(())
    })
}
