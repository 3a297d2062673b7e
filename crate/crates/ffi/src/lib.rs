//! C ABI over chaoswave: opaque handles, status codes and a thread-local error message.
//!
//! Every function returns a [`CwStatus`]; outputs go through caller-provided
//! pointers. Handles are released with the matching `*_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use chaoswave::cli::{self, Command};
use chaoswave::kernels;
use chaoswave::noise::GridSpec;
use chaoswave::solver::{self, ChaosCoefficients, SolverGrid, DEFAULT_SUBNODES};
use chaoswave::{CovarianceModel, Error, RunConfig, SpatialMode};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Numerical = 3,
    Budget = 4,
    Unsupported = 5,
    Io = 6,
    AssertionFailed = 7,
    Panic = 8,
}

/// Covariance model handle.
pub struct CwModel(CovarianceModel);

/// Discretized solver handle (grid, noise factors and Green weights).
pub struct CwSolver(SolverGrid);

/// Projected chaos coefficients at one point.
pub struct CwChaos(ChaosCoefficients);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwAlpha {
    pub value: f64,
    pub std_error: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CwConstants {
    pub t_horizon: f64,
    pub big_gamma_t: f64,
    pub c0: f64,
    pub m_t: f64,
    pub m_t_prime: f64,
    pub c_t: f64,
    pub c_t_prime: f64,
    pub c_t_dprime: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CwStatus {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::NotPsd { .. } | Error::KernelSingularity(_) | Error::DensitySingularity => {
            CwStatus::InvalidParameter
        }
        Error::Budget(_) => CwStatus::Budget,
        Error::Unsupported(_) | Error::NotAFunction => CwStatus::Unsupported,
        Error::Io(_) => CwStatus::Io,
        Error::Quadrature(_) | Error::EnergyDivergence(_) | Error::NoAdmissibleM(_) => CwStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (CwStatus, String)>>(f: F) -> CwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CwStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(format!("panic: {msg}"));
            CwStatus::Panic
        }
    }
}

fn lift<T>(r: chaoswave::Result<T>) -> Result<T, (CwStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (CwStatus, String) {
    (CwStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CwStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CwStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (CwStatus::InvalidParameter, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `len`). Returns the full message length, 0 when there is none.
#[no_mangle]
pub unsafe extern "C" fn cw_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Builds a model; `white != 0` selects spatial white noise (then `alpha` is ignored).
#[no_mangle]
pub unsafe extern "C" fn cw_model_new(hurst: f64, alpha: f64, white: i32, out: *mut *mut CwModel) -> CwStatus {
    guard(|| {
        let out = as_mut(out, "out")?;
        let mode = if white != 0 { SpatialMode::White } else { SpatialMode::Riesz };
        let a = if white != 0 { 0.5 } else { alpha };
        let m = lift(CovarianceModel::new(hurst, a, mode))?;
        *out = Box::into_raw(Box::new(CwModel(m)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_model_free(model: *mut CwModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// α_n(t) for n ≤ 3 with its standard error (0 for deterministic routes).
#[no_mangle]
pub unsafe extern "C" fn cw_alpha(model: *const CwModel, n: usize, t: f64, out: *mut CwAlpha) -> CwStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let out = as_mut(out, "out")?;
        let a = lift(kernels::alpha_n(&m.0, n, t))?;
        *out = CwAlpha { value: a.value, std_error: a.std_error };
        Ok(())
    })
}

/// Γ_T, c₀, M_T, M_T′, C_T, C_T′ and C_T″ at horizon `t_horizon`.
#[no_mangle]
pub unsafe extern "C" fn cw_constants(model: *const CwModel, t_horizon: f64, out: *mut CwConstants) -> CwStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let out = as_mut(out, "out")?;
        let t = lift(kernels::constants_table(&m.0, t_horizon, None))?;
        *out = CwConstants {
            t_horizon: t.t_horizon,
            big_gamma_t: t.big_gamma_t,
            c0: t.c0,
            m_t: t.m_t,
            m_t_prime: t.m_t_prime,
            c_t: t.c_t,
            c_t_prime: t.c_t_prime,
            c_t_dprime: t.c_t_dprime,
        };
        Ok(())
    })
}

/// Discretizes [0, T]×[−L, L] into nt×nx cells for `model`.
#[no_mangle]
pub unsafe extern "C" fn cw_solver_new(
    model: *const CwModel,
    t_horizon: f64,
    half_width: f64,
    nt: usize,
    nx: usize,
    out: *mut *mut CwSolver,
) -> CwStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let out = as_mut(out, "out")?;
        let grid = lift(GridSpec::new(t_horizon, half_width, nt, nx))?;
        let sg = lift(SolverGrid::new(&m.0, &grid, DEFAULT_SUBNODES))?;
        *out = Box::into_raw(Box::new(CwSolver(sg)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_solver_free(solver: *mut CwSolver) {
    if !solver.is_null() {
        drop(Box::from_raw(solver));
    }
}

/// Number of noise cells (the length of one coordinate vector).
#[no_mangle]
pub unsafe extern "C" fn cw_solver_cells(solver: *const CwSolver, out: *mut usize) -> CwStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(solver, "solver")?.0.m();
        Ok(())
    })
}

/// Chaos coefficients of u_N(t, x) up to `order`.
#[no_mangle]
pub unsafe extern "C" fn cw_chaos_new(solver: *const CwSolver, t: f64, x: f64, order: usize, out: *mut *mut CwChaos) -> CwStatus {
    guard(|| {
        let sg = as_ref(solver, "solver")?;
        let out = as_mut(out, "out")?;
        let c = lift(sg.0.project_kernels(t, x, order))?;
        *out = Box::into_raw(Box::new(CwChaos(c)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn cw_chaos_free(chaos: *mut CwChaos) {
    if !chaos.is_null() {
        drop(Box::from_raw(chaos));
    }
}

/// E[u_N²] = 1 + Σ n!‖T_n‖².
#[no_mangle]
pub unsafe extern "C" fn cw_chaos_second_moment(chaos: *const CwChaos, out: *mut f64) -> CwStatus {
    guard(|| {
        *as_mut(out, "out")? = as_ref(chaos, "chaos")?.0.second_moment();
        Ok(())
    })
}

/// Var I_n for 1 ≤ n ≤ order.
#[no_mangle]
pub unsafe extern "C" fn cw_chaos_variance(chaos: *const CwChaos, n: usize, out: *mut f64) -> CwStatus {
    guard(|| {
        let c = &as_ref(chaos, "chaos")?.0;
        let out = as_mut(out, "out")?;
        if n == 0 || n > c.order {
            return Err((CwStatus::InvalidParameter, format!("order {n} outside 1..={}", c.order)));
        }
        *out = c.variance(n);
        Ok(())
    })
}

/// Evaluates u_N at the normal coordinates `zeta` (length = cells).
#[no_mangle]
pub unsafe extern "C" fn cw_chaos_evaluate(chaos: *const CwChaos, zeta: *const f64, len: usize, out: *mut f64) -> CwStatus {
    guard(|| {
        let c = &as_ref(chaos, "chaos")?.0;
        let out = as_mut(out, "out")?;
        if zeta.is_null() {
            return Err(null("zeta"));
        }
        if len != c.m {
            return Err((CwStatus::InvalidParameter, format!("zeta has length {len}, expected {}", c.m)));
        }
        *out = solver::sample_solution(c, std::slice::from_raw_parts(zeta, len)).0;
        Ok(())
    })
}

/// Writes `count` samples of u_N (sample indices 0..count of `seed`) to `out`.
#[no_mangle]
pub unsafe extern "C" fn cw_chaos_sample(chaos: *const CwChaos, seed: u64, count: usize, out: *mut f64) -> CwStatus {
    guard(|| {
        let c = &as_ref(chaos, "chaos")?.0;
        if count == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, count);
        for (d, s) in dst.iter_mut().zip(solver::sample_many(c, seed, count)) {
            *d = s.value;
        }
        Ok(())
    })
}

/// Runs a CLI subcommand on TOML config text (NULL or "" for the defaults) and stores the
/// process exit code it would return in `exit_code`.
#[no_mangle]
pub unsafe extern "C" fn cw_run_command(command: *const c_char, config_toml: *const c_char, exit_code: *mut i32) -> CwStatus {
    guard(|| {
        let code = as_mut(exit_code, "exit_code")?;
        let name = as_str(command, "command")?;
        let cmd: Command = lift(name.parse())?;
        let text = if config_toml.is_null() { "" } else { as_str(config_toml, "config_toml")? };
        let cfg = match RunConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => {
                *code = cli::error_exit_code(&e);
                return Err((status_of(&e), e.to_string()));
            }
        };
        match cli::run(cmd, &cfg) {
            Ok(o) => {
                *code = o.exit_code();
                if o.passed {
                    Ok(())
                } else {
                    Err((CwStatus::AssertionFailed, o.summary))
                }
            }
            Err(e) => {
                *code = cli::error_exit_code(&e);
                Err((status_of(&e), e.to_string()))
            }
        }
    })
}
