//! C ABI for the microgrid simulator.
//!
//! A simulation is an opaque `MgSimulation*` created from TOML text or a
//! preset name and released with `mg_simulation_free`. Every fallible call
//! returns an `MgStatus`; on failure `mg_last_error` returns a message for
//! the calling thread, valid until that thread's next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use microgrid_core::config::{preset, SetupConfig};
use microgrid_core::sim::{Policy, Simulation};
use microgrid_core::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    BufferTooSmall = 4,
    Constraint = 5,
    Divergence = 6,
    Runtime = 7,
    Panic = 8,
}

/// Opaque simulation handle.
pub struct MgSimulation {
    sim: Simulation,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: MgStatus, msg: impl Into<String>) -> MgStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> MgStatus {
    match e {
        Error::Config { .. } => MgStatus::Config,
        Error::ConstraintViolation { .. } => MgStatus::Constraint,
        Error::Divergence(_) => MgStatus::Divergence,
        _ => MgStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MgStatus>) -> MgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(MgStatus::Panic, "internal panic"),
    }
}

fn core(e: Error) -> MgStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, MgStatus> {
    if s.is_null() {
        return Err(fail(MgStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(MgStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn handle<'a>(sim: *mut MgSimulation) -> Result<&'a mut MgSimulation, MgStatus> {
    sim.as_mut().ok_or_else(|| fail(MgStatus::NullPointer, "null simulation handle"))
}

unsafe fn create(config: SetupConfig, seed: u64, random: bool, out: *mut *mut MgSimulation) -> Result<(), MgStatus> {
    let policy = if random { Policy::UniformRandom } else { Policy::Learning };
    let sim = Simulation::with_policy(&config, seed, policy).map_err(core)?;
    *out = Box::into_raw(Box::new(MgSimulation { sim }));
    Ok(())
}

/// Creates a learning simulation from TOML setup text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_new(toml: *const c_char, seed: u64, out: *mut *mut MgSimulation) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(MgStatus::NullPointer, "null output pointer"));
        }
        *out = ptr::null_mut();
        let config = SetupConfig::from_toml(read_str(toml)?).map_err(core)?;
        create(config, seed, false, out)
    })
}

/// Creates a simulation from a shipped preset (`setup1`, `setup2`,
/// `setup3`). With `uniform_random` nonzero, agents act uniformly at
/// random and never learn.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_from_preset(
    name: *const c_char,
    seed: u64,
    uniform_random: i32,
    out: *mut *mut MgSimulation,
) -> MgStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(MgStatus::NullPointer, "null output pointer"));
        }
        *out = ptr::null_mut();
        let name = read_str(name)?;
        let config = preset(name).ok_or_else(|| fail(MgStatus::Config, format!("unknown preset {name:?}")))?;
        create(config, seed, uniform_random != 0, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_free(sim: *mut MgSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of microgrids, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_num_grids(sim: *const MgSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.sim.agents().len())
}

/// Iterations run so far, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_iteration(sim: *const MgSimulation) -> u64 {
    sim.as_ref().map_or(0, |s| s.sim.iteration())
}

/// Runs one iteration and writes each grid's reward into `rewards`, which
/// must hold at least `mg_simulation_num_grids` values. `rewards` may be
/// null when `len` is 0.
///
/// # Safety
/// `rewards` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_step(sim: *mut MgSimulation, rewards: *mut f64, len: usize) -> MgStatus {
    guard(|| {
        let s = handle(sim)?;
        let n = s.sim.agents().len();
        if len > 0 && rewards.is_null() {
            return Err(fail(MgStatus::NullPointer, "null reward buffer"));
        }
        if len != 0 && len < n {
            return Err(fail(MgStatus::BufferTooSmall, format!("need {n} reward slots, got {len}")));
        }
        let out = s.sim.step().map_err(core)?;
        if len != 0 {
            std::slice::from_raw_parts_mut(rewards, n).copy_from_slice(&out.rewards());
        }
        Ok(())
    })
}

/// Runs `iterations` more iterations without reporting rewards.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_run(sim: *mut MgSimulation, iterations: u64) -> MgStatus {
    guard(|| {
        let s = handle(sim)?;
        for _ in 0..iterations {
            s.sim.step().map_err(core)?;
        }
        Ok(())
    })
}

/// Battery level of every grid, same buffer rules as `mg_simulation_step`.
///
/// # Safety
/// `levels` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mg_simulation_batteries(sim: *const MgSimulation, levels: *mut i64, len: usize) -> MgStatus {
    guard(|| {
        let s = sim.as_ref().ok_or_else(|| fail(MgStatus::NullPointer, "null simulation handle"))?;
        let states = s.sim.states();
        if levels.is_null() {
            return Err(fail(MgStatus::NullPointer, "null battery buffer"));
        }
        if len < states.len() {
            return Err(fail(MgStatus::BufferTooSmall, format!("need {} slots, got {len}", states.len())));
        }
        let out = std::slice::from_raw_parts_mut(levels, states.len());
        for (o, st) in out.iter_mut().zip(states) {
            *o = st.battery;
        }
        Ok(())
    })
}

/// Message for the last failure on this thread, or null if none.
#[no_mangle]
pub extern "C" fn mg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
