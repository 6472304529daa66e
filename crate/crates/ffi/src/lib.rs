//! C ABI for the thermoconv library.
//!
//! Matrices cross the boundary as row-major `double` arrays. Every function
//! returns a [`TcStatus`]; on failure the message is available from
//! [`tc_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use thermoconv::harness::{run_to_dir, ExperimentConfig};
use thermoconv::linalg::{expm, solve_lyapunov, GaussianState, RealMatrix, RealVector};
use thermoconv::ou::{thermo_report, BlockMatrix, OuEps};
use thermoconv::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    DimensionMismatch = 2,
    NotStable = 3,
    Singular = 4,
    InvalidArgument = 5,
    Config = 6,
    Io = 7,
    Numerical = 8,
    Panic = 9,
}

/// Thermodynamic functionals of one OU law at time `t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TcThermoReport {
    pub t: f64,
    pub free_energy: f64,
    pub dissipation: f64,
    pub sigma_hk: f64,
    pub sigma_ex: f64,
    pub sigma_total: f64,
}

/// Opaque handle to an ε-family OU member.
pub struct TcOu {
    inner: OuEps,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TcStatus {
    match e {
        Error::DimensionMismatch(_) => TcStatus::DimensionMismatch,
        Error::NotStable { .. } => TcStatus::NotStable,
        Error::SingularBlock { .. }
        | Error::SingularCovariance
        | Error::SingularA { .. }
        | Error::FastBlockNotPD { .. } => TcStatus::Singular,
        Error::InvalidBounds(_) | Error::EmptyGrid | Error::Overflow { .. } => TcStatus::InvalidArgument,
        Error::Config { .. } | Error::Json(_) => TcStatus::Config,
        Error::Io(_) => TcStatus::Io,
        Error::SimulationBlowup { .. }
        | Error::QuadratureDivergence { .. }
        | Error::SamplerNotConverged(_)
        | Error::DivergenceCheck { .. } => TcStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (TcStatus, String)>) -> TcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TcStatus::Panic
        }
    }
}

fn lift(e: Error) -> (TcStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (TcStatus, String) {
    (TcStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn matrix_in(data: *const f64, n: usize, name: &str) -> Result<RealMatrix, (TcStatus, String)> {
    if data.is_null() {
        return Err(null(name));
    }
    if n == 0 {
        return Err((TcStatus::DimensionMismatch, format!("`{name}` has zero dimension")));
    }
    let s = slice::from_raw_parts(data, n * n);
    Ok(RealMatrix::from_row_slice(n, n, s))
}

unsafe fn matrix_out(m: &RealMatrix, out: *mut f64) {
    let n = m.nrows();
    let dst = slice::from_raw_parts_mut(out, n * m.ncols());
    for i in 0..n {
        for j in 0..m.ncols() {
            dst[i * m.ncols() + j] = m[(i, j)];
        }
    }
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds the ε-member for the `dim × dim` matrix `b` with `dx` fast
/// coordinates. On success `*out` owns a handle released by [`tc_ou_free`].
///
/// # Safety
/// `b` must point to `dim*dim` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_ou_new(b: *const f64, dim: usize, dx: usize, eps: f64, out: *mut *mut TcOu) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = matrix_in(b, dim, "b")?;
        let block = BlockMatrix::new(m, dx).map_err(lift)?;
        let inner = OuEps::new(&block, eps).map_err(lift)?;
        *out = Box::into_raw(Box::new(TcOu { inner }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from [`tc_ou_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tc_ou_free(handle: *mut TcOu) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `handle` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_ou_dim(handle: *const TcOu, out: *mut usize) -> TcStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = h.inner.block.dim();
        Ok(())
    })
}

/// Writes the invariant covariance `Σᵉ` (row-major, `dim*dim`) to `out`.
///
/// # Safety
/// `handle` must be live and `out` must hold `dim*dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_ou_sigma(handle: *const TcOu, out: *mut f64) -> TcStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        matrix_out(&h.inner.sigma, out);
        Ok(())
    })
}

/// Functionals at time `t` of the law started from `N(mean, cov)`.
///
/// # Safety
/// `mean` must hold `dim` doubles, `cov` `dim*dim`, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_ou_thermo_report(
    handle: *const TcOu,
    mean: *const f64,
    cov: *const f64,
    t: f64,
    out: *mut TcThermoReport,
) -> TcStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if mean.is_null() {
            return Err(null("mean"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let d = h.inner.block.dim();
        let m = RealVector::from_column_slice(slice::from_raw_parts(mean, d));
        let c = matrix_in(cov, d, "cov")?;
        let rho0 = GaussianState::new(m, c).map_err(lift)?;
        let r = thermo_report(&h.inner, &rho0, t).map_err(lift)?;
        *out = TcThermoReport {
            t: r.t,
            free_energy: r.free_energy,
            dissipation: r.dissipation,
            sigma_hk: r.sigma_hk,
            sigma_ex: r.sigma_ex,
            sigma_total: r.sigma_total,
        };
        Ok(())
    })
}

/// Uniform curvature bound `ρ ≤ 0` of the OU family for `b`.
///
/// # Safety
/// `b` must point to `dim*dim` doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn tc_cd_rho(b: *const f64, dim: usize, dx: usize, out: *mut f64) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = matrix_in(b, dim, "b")?;
        let block = BlockMatrix::unchecked(m, dx).map_err(lift)?;
        *out = thermoconv::criteria::ou_cd_rho(&block).map_err(lift)?;
        Ok(())
    })
}

/// Solves `MX + XMᵀ = Q` for positively stable `M`.
///
/// # Safety
/// `m`, `q` and `out` must each hold `n*n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_solve_lyapunov(m: *const f64, q: *const f64, n: usize, out: *mut f64) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mm = matrix_in(m, n, "m")?;
        let qq = matrix_in(q, n, "q")?;
        let x = solve_lyapunov(&mm, &qq).map_err(lift)?;
        matrix_out(&x, out);
        Ok(())
    })
}

/// `exp(tM)`.
///
/// # Safety
/// `m` and `out` must each hold `n*n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_expm(m: *const f64, n: usize, t: f64, out: *mut f64) -> TcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mm = matrix_in(m, n, "m")?;
        let x = expm(&mm, t).map_err(lift)?;
        matrix_out(&x, out);
        Ok(())
    })
}

/// Runs the experiment described by the JSON `config` and writes its CSV
/// and JSON under `out_dir`. `*pass` receives 1 if every required verdict
/// holds and 0 otherwise.
///
/// # Safety
/// `config` and `out_dir` must be NUL-terminated UTF-8; `pass` writable.
#[no_mangle]
pub unsafe extern "C" fn tc_run_experiment(config: *const c_char, out_dir: *const c_char, pass: *mut i32) -> TcStatus {
    guard(|| {
        if config.is_null() {
            return Err(null("config"));
        }
        if out_dir.is_null() {
            return Err(null("out_dir"));
        }
        if pass.is_null() {
            return Err(null("pass"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| (TcStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
        let dir = CStr::from_ptr(out_dir)
            .to_str()
            .map_err(|_| (TcStatus::InvalidArgument, "out_dir is not UTF-8".to_string()))?;
        let cfg = ExperimentConfig::from_json(text).map_err(lift)?;
        let outcome = run_to_dir(&cfg, Path::new(dir)).map_err(lift)?;
        *pass = i32::from(outcome.pass);
        Ok(())
    })
}
