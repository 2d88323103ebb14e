//! C ABI over the planner: load a scenario, run the closed loop, read the
//! summary and trajectory, export artifacts.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a
//! [`SwarmcovStatus`]; the message of the last failure on the calling thread
//! is available from [`swarmcov_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use swarmcov::export;
use swarmcov::milp::SolverBackend;
use swarmcov::scenario::{Scenario, ScenarioError};
use swarmcov::sim::{self, SimulationConfig, SimulationLog, Termination};
use swarmcov::vehicle::{self, STATE_DIM};

/// Number of doubles written by [`swarmcov_run_state`].
pub const SWARMCOV_STATE_DIM: usize = 14;
const _: () = assert!(SWARMCOV_STATE_DIM == STATE_DIM);

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwarmcovStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidScenario = 5,
    Solver = 6,
    OutOfRange = 7,
    Unavailable = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwarmcovSolver {
    Fallback = 0,
    External = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwarmcovTermination {
    AllLanded = 0,
    StepCap = 1,
    Aborted = 2,
}

/// Run overrides; zero or negative fields keep the scenario's values.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SwarmcovRunOptions {
    pub solver: SwarmcovSolver,
    pub max_steps: usize,
    pub horizon: usize,
    /// Per-solve limit in seconds.
    pub time_limit: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SwarmcovSummary {
    pub steps: usize,
    pub termination: i32,
    pub waypoints: usize,
    pub waypoints_covered: usize,
    pub coverage: f64,
    pub all_landed: bool,
    pub infeasible_solves: usize,
    pub agents: usize,
    pub safety_violations: usize,
}

/// Opaque loaded scenario.
pub struct SwarmcovScenario {
    inner: Scenario,
}

/// Opaque finished run.
pub struct SwarmcovRun {
    log: SimulationLog,
    violations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: SwarmcovStatus, msg: impl Into<String>) -> SwarmcovStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> SwarmcovStatus) -> SwarmcovStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SwarmcovStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a str, SwarmcovStatus> {
    if p.is_null() {
        return Err(fail(SwarmcovStatus::NullArgument, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SwarmcovStatus::InvalidUtf8, "path is not valid UTF-8"))
}

fn scenario_status(e: &ScenarioError) -> SwarmcovStatus {
    match e {
        ScenarioError::Io { .. } => SwarmcovStatus::Io,
        ScenarioError::Parse { .. } => SwarmcovStatus::Parse,
        ScenarioError::Params { .. } | ScenarioError::Invalid(_) => SwarmcovStatus::InvalidScenario,
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn swarmcov_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Whether the external solver was compiled in.
#[no_mangle]
pub extern "C" fn swarmcov_external_available() -> bool {
    SolverBackend::External.is_available()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_scenario_load(path: *const c_char, out: *mut *mut SwarmcovScenario) -> SwarmcovStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwarmcovStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Scenario::load(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SwarmcovScenario { inner }));
                SwarmcovStatus::Ok
            }
            Err(e) => fail(scenario_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must come from [`swarmcov_scenario_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_scenario_free(scenario: *mut SwarmcovScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Count validation problems; the first one is also stored as the last error.
///
/// # Safety
/// `scenario` must be a live handle and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_scenario_validate(scenario: *const SwarmcovScenario, count: *mut usize) -> SwarmcovStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), count.is_null()) else {
            return fail(SwarmcovStatus::NullArgument, "null argument");
        };
        let problems = s.inner.validate();
        *count = problems.len();
        if let Some(first) = problems.first() {
            set_error(first.clone());
        }
        SwarmcovStatus::Ok
    })
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_scenario_agent_count(scenario: *const SwarmcovScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.agents.len())
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_scenario_waypoint_count(scenario: *const SwarmcovScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.inner.waypoints.len())
}

/// Options with every override disabled and the fallback solver.
#[no_mangle]
pub extern "C" fn swarmcov_run_options_default() -> SwarmcovRunOptions {
    SwarmcovRunOptions {
        solver: SwarmcovSolver::Fallback,
        max_steps: 0,
        horizon: 0,
        time_limit: 0.0,
        seed: 0,
    }
}

/// Run the closed loop. An aborted run still returns `Ok` with a handle;
/// check the summary's termination.
///
/// # Safety
/// `scenario` must be a live handle, `options` readable or null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_run(
    scenario: *const SwarmcovScenario,
    options: *const SwarmcovRunOptions,
    out: *mut *mut SwarmcovRun,
) -> SwarmcovStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(SwarmcovStatus::NullArgument, "null argument");
        };
        *out = ptr::null_mut();
        let opts = options.as_ref().copied().unwrap_or_else(|| swarmcov_run_options_default());
        let mut config = SimulationConfig::for_scenario(&s.inner);
        if opts.max_steps > 0 {
            config.max_steps = opts.max_steps;
        }
        if opts.horizon > 0 {
            config.horizon = opts.horizon;
        }
        if opts.time_limit > 0.0 {
            config.time_limit = Some(opts.time_limit);
        }
        config.seed = opts.seed;
        let backend = match opts.solver {
            SwarmcovSolver::Fallback => SolverBackend::Fallback,
            SwarmcovSolver::External => SolverBackend::External,
        };
        let solver = match backend.instantiate() {
            Ok(b) => b,
            Err(e) => return fail(SwarmcovStatus::Unavailable, e.to_string()),
        };
        match sim::run(&s.inner, &config, solver.as_ref()) {
            Ok(log) => {
                let violations = sim::check_safety(&s.inner, &log).len();
                if let Some(d) = &log.summary.diagnostic {
                    set_error(d.clone());
                }
                *out = Box::into_raw(Box::new(SwarmcovRun { log, violations }));
                SwarmcovStatus::Ok
            }
            Err(e) => fail(SwarmcovStatus::Solver, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must come from [`swarmcov_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_run_free(run: *mut SwarmcovRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_run_summary(run: *const SwarmcovRun, out: *mut SwarmcovSummary) -> SwarmcovStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(SwarmcovStatus::NullArgument, "null argument");
        };
        let s = &r.log.summary;
        let termination = match s.termination_reason {
            Termination::AllLanded => SwarmcovTermination::AllLanded,
            Termination::StepCap => SwarmcovTermination::StepCap,
            Termination::Aborted => SwarmcovTermination::Aborted,
        };
        *out = SwarmcovSummary {
            steps: s.steps,
            termination: termination as i32,
            waypoints: s.waypoints,
            waypoints_covered: s.waypoints_covered,
            coverage: s.coverage,
            all_landed: s.all_landed,
            infeasible_solves: s.infeasible_solves,
            agents: s.agents.len(),
            safety_violations: r.violations,
        };
        SwarmcovStatus::Ok
    })
}

/// Copy the 14 state components of `agent` after `step` (0 = initial state)
/// into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` must hold `SWARMCOV_STATE_DIM` doubles.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_run_state(run: *const SwarmcovRun, step: usize, agent: usize, out: *mut f64) -> SwarmcovStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(SwarmcovStatus::NullArgument, "null argument");
        };
        let state = if step == 0 {
            r.log.initial.get(agent).copied()
        } else {
            r.log
                .steps
                .get(step - 1)
                .and_then(|s| s.agents.iter().find(|a| a.agent == agent))
                .map(|a| a.state)
        };
        let Some(state) = state else {
            return fail(SwarmcovStatus::OutOfRange, format!("no state for agent {agent} at step {step}"));
        };
        let v = state.to_vector();
        std::slice::from_raw_parts_mut(out, STATE_DIM).copy_from_slice(v.as_slice());
        SwarmcovStatus::Ok
    })
}

/// Write the CSV/JSON artifacts into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_run_export(run: *const SwarmcovRun, dir: *const c_char) -> SwarmcovStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(SwarmcovStatus::NullArgument, "run is null");
        };
        let dir = match path_arg(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match export::write_all(&r.log, Path::new(dir)) {
            Ok(()) => SwarmcovStatus::Ok,
            Err(e) => fail(SwarmcovStatus::Io, e.to_string()),
        }
    })
}

/// Return threshold `DoD_r` for the given battery and cruise figures.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn swarmcov_return_threshold(
    dod_max: f64,
    p_dc_nom: f64,
    d_r_max: f64,
    v_cruise: f64,
    charge_capacity: f64,
    u_b_nom: f64,
    out: *mut f64,
) -> SwarmcovStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwarmcovStatus::NullArgument, "out is null");
        }
        match vehicle::return_threshold(dod_max, p_dc_nom, d_r_max, v_cruise, charge_capacity, u_b_nom) {
            Ok(v) => {
                *out = v;
                SwarmcovStatus::Ok
            }
            Err(e) => fail(SwarmcovStatus::OutOfRange, e.to_string()),
        }
    })
}
