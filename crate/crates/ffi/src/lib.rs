//! C ABI for the quadmpc toolkit: opaque config and controller handles,
//! status codes, and flat float arrays at the boundary. Every function is
//! safe to call with NULL pointers (it reports `NullPointer` instead of
//! crashing); handles must be freed with the matching `_free` function.

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use quadmpc::config::{apply_override, Config};
use quadmpc::dynamics::{Input4, State12};
use quadmpc::sim::{run_closed_loop, target_at};
use quadmpc::FlightController;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmpcStatus {
    Ok = 0,
    NullPointer = 1,
    Utf8Error = 2,
    InvalidConfig = 3,
    SimulationFailed = 4,
    InternalPanic = 5,
}

/// Opaque configuration handle.
pub struct QmpcConfig {
    inner: Config,
}

/// Opaque controller handle driving one closed loop.
pub struct QmpcController {
    inner: FlightController,
}

/// Metrics of one closed-loop run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QmpcRunMetrics {
    /// Cumulative absolute position error per axis [m * steps].
    pub total_err: [f64; 3],
    /// Smallest absolute position error per axis [m].
    pub min_err: [f64; 3],
    /// Earliest time with all three errors under the threshold [s];
    /// meaningful only when `has_flight_time` is true.
    pub flight_time: f64,
    pub has_flight_time: bool,
}

fn cstr_to_str<'a>(ptr: *const c_char) -> Result<&'a str, QmpcStatus> {
    if ptr.is_null() {
        return Err(QmpcStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| QmpcStatus::Utf8Error)
}

/// Allocate a config with the embedded defaults. Free with
/// `qmpc_config_free`.
#[no_mangle]
pub extern "C" fn qmpc_config_default() -> *mut QmpcConfig {
    Box::into_raw(Box::new(QmpcConfig {
        inner: Config::default(),
    }))
}

/// Load a config from a JSON file. On success writes a new handle to `out`.
#[no_mangle]
pub extern "C" fn qmpc_config_load(path: *const c_char, out: *mut *mut QmpcConfig) -> QmpcStatus {
    if out.is_null() {
        return QmpcStatus::NullPointer;
    }
    let path = match cstr_to_str(path) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Config::load(std::path::Path::new(path)) {
        Ok(cfg) => {
            unsafe { *out = Box::into_raw(Box::new(QmpcConfig { inner: cfg })) };
            QmpcStatus::Ok
        }
        Err(_) => QmpcStatus::InvalidConfig,
    }
}

/// Set one config key, e.g. key "controller.mode", value "\"LQR\"" or "LQR".
#[no_mangle]
pub extern "C" fn qmpc_config_set(
    cfg: *mut QmpcConfig,
    key: *const c_char,
    value: *const c_char,
) -> QmpcStatus {
    if cfg.is_null() {
        return QmpcStatus::NullPointer;
    }
    let (key, value) = match (cstr_to_str(key), cstr_to_str(value)) {
        (Ok(k), Ok(v)) => (k, v),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    let handle = unsafe { &mut *cfg };
    let mut doc = handle.inner.to_value();
    if apply_override(&mut doc, &format!("{key}={value}")).is_err() {
        return QmpcStatus::InvalidConfig;
    }
    match Config::from_value(doc) {
        Ok(updated) => {
            handle.inner = updated;
            QmpcStatus::Ok
        }
        Err(_) => QmpcStatus::InvalidConfig,
    }
}

/// Check every config invariant.
#[no_mangle]
pub extern "C" fn qmpc_config_validate(cfg: *const QmpcConfig) -> QmpcStatus {
    if cfg.is_null() {
        return QmpcStatus::NullPointer;
    }
    let handle = unsafe { &*cfg };
    match handle.inner.validate() {
        Ok(()) => QmpcStatus::Ok,
        Err(_) => QmpcStatus::InvalidConfig,
    }
}

/// Release a config handle. NULL is a no-op.
#[no_mangle]
pub extern "C" fn qmpc_config_free(cfg: *mut QmpcConfig) {
    if !cfg.is_null() {
        drop(unsafe { Box::from_raw(cfg) });
    }
}

/// Target position of the configured scenario at time `t`; writes 3 values.
#[no_mangle]
pub extern "C" fn qmpc_target_at(cfg: *const QmpcConfig, t: f64, out_pos: *mut f64) -> QmpcStatus {
    if cfg.is_null() || out_pos.is_null() {
        return QmpcStatus::NullPointer;
    }
    let handle = unsafe { &*cfg };
    let target = target_at(t, &handle.inner.scenario);
    let pos = target.position();
    unsafe {
        for i in 0..3 {
            *out_pos.add(i) = pos[i];
        }
    }
    QmpcStatus::Ok
}

/// Run the configured closed-loop scenario and fill `out` with its metrics.
#[no_mangle]
pub extern "C" fn qmpc_run_scenario(
    cfg: *const QmpcConfig,
    out: *mut QmpcRunMetrics,
) -> QmpcStatus {
    if cfg.is_null() || out.is_null() {
        return QmpcStatus::NullPointer;
    }
    let handle = unsafe { &*cfg };
    if handle.inner.validate().is_err() {
        return QmpcStatus::InvalidConfig;
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        run_closed_loop(&handle.inner.scenario, &handle.inner.run_config())
    }));
    match result {
        Ok(Ok(m)) => {
            unsafe {
                *out = QmpcRunMetrics {
                    total_err: m.total_err,
                    min_err: m.min_err,
                    flight_time: m.flight_time.unwrap_or(-1.0),
                    has_flight_time: m.flight_time.is_some(),
                };
            }
            QmpcStatus::Ok
        }
        Ok(Err(_)) => QmpcStatus::SimulationFailed,
        Err(_) => QmpcStatus::InternalPanic,
    }
}

/// Build a controller for the configured mode. Free with
/// `qmpc_controller_free`.
#[no_mangle]
pub extern "C" fn qmpc_controller_new(
    cfg: *const QmpcConfig,
    out: *mut *mut QmpcController,
) -> QmpcStatus {
    if cfg.is_null() || out.is_null() {
        return QmpcStatus::NullPointer;
    }
    let handle = unsafe { &*cfg };
    let rc = handle.inner.run_config();
    match FlightController::new(
        rc.mode,
        rc.params,
        rc.weights,
        rc.horizon,
        rc.bounds,
        rc.time_opt,
    ) {
        Ok(ctl) => {
            unsafe { *out = Box::into_raw(Box::new(QmpcController { inner: ctl })) };
            QmpcStatus::Ok
        }
        Err(_) => QmpcStatus::InvalidConfig,
    }
}

/// One controller step. `state` and `target` point at 12 doubles in the
/// order (x, y, z, phi, theta, psi, vx, vy, vz, p, q, r); writes 4 input
/// values. The handle keeps warm-start and rate-limit memory between calls.
#[no_mangle]
pub extern "C" fn qmpc_controller_step(
    ctl: *mut QmpcController,
    state: *const f64,
    target: *const f64,
    t_now: f64,
    out_input: *mut f64,
) -> QmpcStatus {
    if ctl.is_null() || state.is_null() || target.is_null() || out_input.is_null() {
        return QmpcStatus::NullPointer;
    }
    let handle = unsafe { &mut *ctl };
    let mut x = [0.0; 12];
    let mut r = [0.0; 12];
    unsafe {
        for i in 0..12 {
            x[i] = *state.add(i);
            r[i] = *target.add(i);
        }
    }
    let result = catch_unwind(AssertUnwindSafe(|| {
        handle
            .inner
            .step_to_point(&State12::from_array(x), &State12::from_array(r), t_now)
    }));
    match result {
        Ok(Ok(step)) => {
            let u: Input4 = step.u;
            unsafe {
                for i in 0..4 {
                    *out_input.add(i) = u[i];
                }
            }
            QmpcStatus::Ok
        }
        Ok(Err(_)) => QmpcStatus::SimulationFailed,
        Err(_) => QmpcStatus::InternalPanic,
    }
}

/// Release a controller handle. NULL is a no-op.
#[no_mangle]
pub extern "C" fn qmpc_controller_free(ctl: *mut QmpcController) {
    if !ctl.is_null() {
        drop(unsafe { Box::from_raw(ctl) });
    }
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn qmpc_status_message(status: QmpcStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        QmpcStatus::Ok => b"ok\0",
        QmpcStatus::NullPointer => b"null pointer argument\0",
        QmpcStatus::Utf8Error => b"string argument is not valid UTF-8\0",
        QmpcStatus::InvalidConfig => b"configuration is invalid\0",
        QmpcStatus::SimulationFailed => b"simulation or controller step failed\0",
        QmpcStatus::InternalPanic => b"internal panic\0",
    };
    msg.as_ptr() as *const c_char
}
