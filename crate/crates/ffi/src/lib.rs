//! C ABI over the allocation engine.
//!
//! Configurations and allocator states are opaque handles created and freed
//! through this interface. Every function returns a [`VanumStatus`]; on failure
//! the message is kept per thread and read back with
//! [`vanum_last_error_message`]. Panics never cross the boundary.
//!
//! Array arguments are caller-owned buffers of `n_users` doubles, where
//! `n_users` comes from [`vanum_config_n_users`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use vanum::avr::{avr_init, avr_step, AvrState};
use vanum::harness::{scenario, ExperimentConfig, Resolved};
use vanum::slot_solver::solve_optavr_with;
use vanum::stationary::solve_optstat;
use vanum::{Error, Theta};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VanumStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    /// A modelling assumption does not hold for the supplied data.
    Assumption = 4,
    NotConverged = 5,
    Numeric = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// A resolved configuration: universe, utilities, process and initial state.
pub struct VanumConfig {
    resolved: Resolved,
}

/// An online allocator bound to a configuration.
pub struct VanumAvr {
    resolved: Resolved,
    state: AvrState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> VanumStatus {
    match e {
        Error::Domain { .. } | Error::Invalid(_) => VanumStatus::InvalidArgument,
        Error::Assumption { .. } => VanumStatus::Assumption,
        Error::NotConverged { .. } => VanumStatus::NotConverged,
        Error::NonMonotone { .. } | Error::LeftDomain { .. } => VanumStatus::Numeric,
        Error::Config(_) => VanumStatus::Config,
        Error::Io(_) => VanumStatus::Io,
    }
}

struct Failure(VanumStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(VanumStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VanumStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VanumStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            VanumStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(VanumStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_slice<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn config_ref<'a>(cfg: *const VanumConfig) -> Result<&'a Resolved, Failure> {
    cfg.as_ref().map(|c| &c.resolved).ok_or_else(|| null("config"))
}

fn check_len(n: usize, want: usize) -> Result<(), Failure> {
    if n == want {
        Ok(())
    } else {
        Err(Failure(VanumStatus::InvalidArgument, format!("buffer length {n}, expected {want} users")))
    }
}

fn check_constraint(r: &Resolved, k: usize) -> Result<(), Failure> {
    if k < r.universe.len() {
        Ok(())
    } else {
        Err(Failure(
            VanumStatus::InvalidArgument,
            format!("constraint index {k} outside universe of {}", r.universe.len()),
        ))
    }
}

unsafe fn emit(out: *mut *mut VanumConfig, cfg: ExperimentConfig) -> Result<(), Failure> {
    let resolved = cfg.resolve()?;
    *out = Box::into_raw(Box::new(VanumConfig { resolved }));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL terminated, truncated to `len`).
/// Returns the full message length in bytes, excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn vanum_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn vanum_status_name(status: VanumStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        VanumStatus::Ok => b"ok\0",
        VanumStatus::NullPointer => b"null pointer\0",
        VanumStatus::InvalidArgument => b"invalid argument\0",
        VanumStatus::Config => b"config\0",
        VanumStatus::Assumption => b"assumption violated\0",
        VanumStatus::NotConverged => b"not converged\0",
        VanumStatus::Numeric => b"numeric failure\0",
        VanumStatus::Io => b"io\0",
        VanumStatus::BufferTooSmall => b"buffer too small\0",
        VanumStatus::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}

/// Parses and resolves a TOML experiment configuration.
#[no_mangle]
pub unsafe extern "C" fn vanum_config_from_toml(toml: *const c_char, out: *mut *mut VanumConfig) -> VanumStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(toml, "toml")?;
        emit(out, ExperimentConfig::from_toml(text)?)
    })
}

/// Resolves one of the built-in scenarios by name.
#[no_mangle]
pub unsafe extern "C" fn vanum_config_from_scenario(name: *const c_char, out: *mut *mut VanumConfig) -> VanumStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let cfg = scenario(name).ok_or_else(|| Failure(VanumStatus::Config, format!("unknown scenario {name:?}")))?;
        emit(out, cfg)
    })
}

/// Frees a configuration. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vanum_config_free(cfg: *mut VanumConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

#[no_mangle]
pub unsafe extern "C" fn vanum_config_n_users(cfg: *const VanumConfig, out: *mut usize) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.profile.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vanum_config_n_constraints(cfg: *const VanumConfig, out: *mut usize) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        *out.as_mut().ok_or_else(|| null("out"))? = r.universe.len();
        Ok(())
    })
}

/// Writes the configuration digest (64 hex characters plus NUL) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn vanum_config_digest(cfg: *const VanumConfig, buf: *mut c_char, len: usize) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len <= r.digest.len() {
            return Err(Failure(VanumStatus::BufferTooSmall, format!("digest needs {} bytes", r.digest.len() + 1)));
        }
        std::ptr::copy_nonoverlapping(r.digest.as_ptr().cast::<c_char>(), buf, r.digest.len());
        *buf.add(r.digest.len()) = 0;
        Ok(())
    })
}

/// Certified bounds of the constraint universe.
#[no_mangle]
pub unsafe extern "C" fn vanum_universe_bounds(
    cfg: *const VanumConfig,
    r_max: *mut f64,
    v_max: *mut f64,
    delta_feas: *mut f64,
) -> VanumStatus {
    guard(|| {
        let b = config_ref(cfg)?.universe.bounds();
        *r_max.as_mut().ok_or_else(|| null("r_max"))? = b.r_max;
        *v_max.as_mut().ok_or_else(|| null("v_max"))? = b.v_max;
        *delta_feas.as_mut().ok_or_else(|| null("delta_feas"))? = b.delta_feas;
        Ok(())
    })
}

/// Solves the slot program at `(m, v)` against constraint `constraint` and writes the allocation to `r_out`.
#[no_mangle]
pub unsafe extern "C" fn vanum_slot_solve(
    cfg: *const VanumConfig,
    constraint: usize,
    m: *const f64,
    v: *const f64,
    n_users: usize,
    r_out: *mut f64,
) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        check_len(n_users, r.profile.len())?;
        check_constraint(r, constraint)?;
        let theta = Theta::new(slice_arg(m, n_users, "m")?.to_vec(), slice_arg(v, n_users, "v")?.to_vec());
        let out = out_slice(r_out, n_users, "r_out")?;
        let sol = solve_optavr_with(&theta, r.universe.get(constraint), &r.profile, &r.slot_options())?;
        out.copy_from_slice(&sol.r_star);
        Ok(())
    })
}

/// Solves the stationary program and writes its fixed point `(m, v)` and objective.
#[no_mangle]
pub unsafe extern "C" fn vanum_stationary_solve(
    cfg: *const VanumConfig,
    n_users: usize,
    m_out: *mut f64,
    v_out: *mut f64,
    objective: *mut f64,
) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        check_len(n_users, r.profile.len())?;
        let m = out_slice(m_out, n_users, "m_out")?;
        let v = out_slice(v_out, n_users, "v_out")?;
        let obj = objective.as_mut().ok_or_else(|| null("objective"))?;
        let sol = solve_optstat(&r.universe, r.pi(), &r.profile, r.config.tolerances.solver)?;
        m.copy_from_slice(&sol.theta_pi.m);
        v.copy_from_slice(&sol.theta_pi.v);
        *obj = sol.objective;
        Ok(())
    })
}

/// Creates an allocator at the configuration's initial state.
#[no_mangle]
pub unsafe extern "C" fn vanum_avr_new(cfg: *const VanumConfig, out: *mut *mut VanumAvr) -> VanumStatus {
    guard(|| {
        let r = config_ref(cfg)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let state = avr_init(r.theta0.clone(), &r.profile)?;
        *out = Box::into_raw(Box::new(VanumAvr {
            resolved: r.clone(),
            state,
        }));
        Ok(())
    })
}

/// Frees an allocator. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn vanum_avr_free(avr: *mut VanumAvr) {
    if !avr.is_null() {
        drop(Box::from_raw(avr));
    }
}

/// Serves one slot under constraint `constraint`, writing the allocation to `r_out`.
/// On failure the allocator state is left unchanged.
#[no_mangle]
pub unsafe extern "C" fn vanum_avr_step(avr: *mut VanumAvr, constraint: usize, n_users: usize, r_out: *mut f64) -> VanumStatus {
    guard(|| {
        let a = avr.as_mut().ok_or_else(|| null("avr"))?;
        check_len(n_users, a.resolved.profile.len())?;
        check_constraint(&a.resolved, constraint)?;
        let out = out_slice(r_out, n_users, "r_out")?;
        let c = a.resolved.universe.get(constraint);
        let (alloc, next) = avr_step(&a.state, c, &a.resolved.profile, &a.resolved.slot_options())?;
        out.copy_from_slice(&alloc);
        a.state = next;
        Ok(())
    })
}

/// Current estimates `(m, v)` and the index of the next slot.
#[no_mangle]
pub unsafe extern "C" fn vanum_avr_theta(
    avr: *const VanumAvr,
    n_users: usize,
    m_out: *mut f64,
    v_out: *mut f64,
    next_slot: *mut u64,
) -> VanumStatus {
    guard(|| {
        let a = avr.as_ref().ok_or_else(|| null("avr"))?;
        check_len(n_users, a.resolved.profile.len())?;
        out_slice(m_out, n_users, "m_out")?.copy_from_slice(&a.state.theta.m);
        out_slice(v_out, n_users, "v_out")?.copy_from_slice(&a.state.theta.v);
        *next_slot.as_mut().ok_or_else(|| null("next_slot"))? = a.state.t;
        Ok(())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vanum_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
