//! C ABI over `taskalg`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `taskalg_*_new`/`_load`/`_from_json` call and released by the matching
//! `_free`. Fallible calls return a [`TaskalgStatus`]; on failure the
//! message is available from [`taskalg_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use taskalg::algebra::{compile, TaskKey, TaskLibrary};
use taskalg::formula::{Semantics, TaskSpec};
use taskalg::mdp::{barrier_env, example_env, parse_env, Cell, LabeledMdp};
use taskalg::penalty::{penalty_multiplier, PenaltyConfig};
use taskalg::persist::{load_table, save_table, StoredTable};
use taskalg::planner::{extract_policy, QTable};
use taskalg::runtime::{attach_classification, default_max_steps, report_json, rollout, PathClass, TrajectoryReport};
use taskalg::Error;

/// A labeled grid environment.
pub struct TaskalgEnv {
    mdp: LabeledMdp,
}

/// Trained task tables for one environment and penalty configuration.
pub struct TaskalgLibrary {
    lib: TaskLibrary,
}

/// A task table, trained or composed.
pub struct TaskalgTable {
    table: QTable,
}

/// One greedy run and, once classified, its class.
pub struct TaskalgReport {
    report: TrajectoryReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskalgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidEnvironment = 3,
    InvalidConfig = 4,
    Parse = 5,
    UnknownProposition = 6,
    EnvironmentDisconnected = 7,
    NonConvergence = 8,
    IncompatibleTables = 9,
    MissingTask = 10,
    Io = 11,
    Format = 12,
    Other = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskalgSemantics {
    MinimumViolation = 0,
    PrioritizedSafety = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskalgPathClass {
    Pure = 0,
    MinimumViolation = 1,
    PrioritizedSafety = 2,
    SafetyOnly = 3,
    Violating = 4,
    NonTerminating = 5,
}

impl From<PathClass> for TaskalgPathClass {
    fn from(c: PathClass) -> Self {
        match c {
            PathClass::Pure => TaskalgPathClass::Pure,
            PathClass::MinimumViolation => TaskalgPathClass::MinimumViolation,
            PathClass::PrioritizedSafety => TaskalgPathClass::PrioritizedSafety,
            PathClass::SafetyOnly => TaskalgPathClass::SafetyOnly,
            PathClass::Violating => TaskalgPathClass::Violating,
            PathClass::NonTerminating => TaskalgPathClass::NonTerminating,
        }
    }
}

impl From<TaskalgSemantics> for Semantics {
    fn from(s: TaskalgSemantics) -> Self {
        match s {
            TaskalgSemantics::MinimumViolation => Semantics::MinimumViolation,
            TaskalgSemantics::PrioritizedSafety => Semantics::PrioritizedSafety,
        }
    }
}

fn status_of(e: &Error) -> TaskalgStatus {
    match e {
        Error::InvalidEnvironment(_) => TaskalgStatus::InvalidEnvironment,
        Error::InvalidConfig(_) => TaskalgStatus::InvalidConfig,
        Error::Parse { .. } => TaskalgStatus::Parse,
        Error::UnknownProposition(_) => TaskalgStatus::UnknownProposition,
        Error::EnvironmentDisconnected(_) => TaskalgStatus::EnvironmentDisconnected,
        Error::NonConvergence { .. } => TaskalgStatus::NonConvergence,
        Error::IncompatibleTables(_) => TaskalgStatus::IncompatibleTables,
        Error::MissingTask(_) => TaskalgStatus::MissingTask,
        Error::Io(_) => TaskalgStatus::Io,
        Error::Format(_) | Error::Json(_) => TaskalgStatus::Format,
        _ => TaskalgStatus::Other,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(TaskalgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> TaskalgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TaskalgStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            TaskalgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(TaskalgStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(TaskalgStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure(TaskalgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure(TaskalgStatus::NullArgument, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(TaskalgStatus::NullArgument, "out is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn taskalg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by the library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn taskalg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses an environment from its JSON description.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_env_from_json(json: *const c_char, out: *mut *mut TaskalgEnv) -> TaskalgStatus {
    guard(|| {
        let mdp = parse_env(str_arg(json, "json")?)?;
        put(out, TaskalgEnv { mdp })
    })
}

/// One of the bundled environments: `"example"` or `"barrier"`.
///
/// # Safety
/// `name` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_env_builtin(name: *const c_char, out: *mut *mut TaskalgEnv) -> TaskalgStatus {
    guard(|| {
        let mdp = match str_arg(name, "name")? {
            "example" => example_env(),
            "barrier" => barrier_env(),
            other => return Err(Failure(TaskalgStatus::InvalidEnvironment, format!("no builtin environment `{other}`"))),
        };
        put(out, TaskalgEnv { mdp })
    })
}

/// # Safety
/// `env` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn taskalg_env_free(env: *mut TaskalgEnv) {
    release(env);
}

/// # Safety
/// `env` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn taskalg_env_dims(env: *const TaskalgEnv, width: *mut usize, height: *mut usize, regions: *mut usize) -> TaskalgStatus {
    guard(|| {
        let mdp = &ref_arg(env, "env")?.mdp;
        for (p, v) in [(width, mdp.width()), (height, mdp.height()), (regions, mdp.regions().len())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// The penalty multiplier derived from the environment.
///
/// # Safety
/// `env` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_penalty_multiplier(env: *const TaskalgEnv, out: *mut u32) -> TaskalgStatus {
    guard(|| {
        let c_p = penalty_multiplier(&ref_arg(env, "env")?.mdp)?.c_p;
        *mut_arg(out, "out")? = c_p;
        Ok(())
    })
}

/// An empty library with default step and goal rewards. `c_p == 0` derives
/// the multiplier from the environment.
///
/// # Safety
/// `env` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_library_new(env: *const TaskalgEnv, c_p: u32, out: *mut *mut TaskalgLibrary) -> TaskalgStatus {
    guard(|| {
        let mdp = &ref_arg(env, "env")?.mdp;
        let c_p = if c_p == 0 { penalty_multiplier(mdp)?.c_p } else { c_p };
        let cfg = PenaltyConfig::new(c_p);
        cfg.validate()?;
        put(out, TaskalgLibrary { lib: TaskLibrary::new(mdp, cfg) })
    })
}

/// # Safety
/// `lib` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn taskalg_library_free(lib: *mut TaskalgLibrary) {
    release(lib);
}

/// Value-iterates one task into the library. `key` is `p`, `not-p`,
/// `not-p+q`, `U`, `EMPTY`, or `basis` for the boundary tables and every
/// proposition. `k > 0` also trains safety slices.
///
/// # Safety
/// Handles must be live; `key` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn taskalg_library_train(
    lib: *mut TaskalgLibrary,
    env: *const TaskalgEnv,
    key: *const c_char,
    k: usize,
) -> TaskalgStatus {
    guard(|| {
        let lib = &mut mut_arg(lib, "lib")?.lib;
        let mdp = &ref_arg(env, "env")?.mdp;
        match str_arg(key, "key")? {
            "basis" => lib.train_positive_basis(mdp)?,
            key => {
                lib.train(mdp, key.parse()?, k)?;
            }
        }
        Ok(())
    })
}

/// Whether the library holds `key`.
///
/// # Safety
/// `lib` must be live; `key` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn taskalg_library_contains(lib: *const TaskalgLibrary, key: *const c_char, out: *mut bool) -> TaskalgStatus {
    guard(|| {
        let lib = &ref_arg(lib, "lib")?.lib;
        let key: TaskKey = str_arg(key, "key")?.parse()?;
        *mut_arg(out, "out")? = lib.contains(&key);
        Ok(())
    })
}

/// Composes `formula` from library tables without further training.
///
/// # Safety
/// `lib` must be live; `formula` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_compile(
    lib: *const TaskalgLibrary,
    formula: *const c_char,
    semantics: TaskalgSemantics,
    out: *mut *mut TaskalgTable,
) -> TaskalgStatus {
    guard(|| {
        let lib = &ref_arg(lib, "lib")?.lib;
        let task = TaskSpec::parse(str_arg(formula, "formula")?, semantics.into())?;
        let table = compile(&task, lib)?.table;
        put(out, TaskalgTable { table })
    })
}

/// # Safety
/// `table` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn taskalg_table_free(table: *mut TaskalgTable) {
    release(table);
}

/// Greedy value `max_a Q(cell, g, a)` of the first slice.
///
/// # Safety
/// `table` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_table_value(table: *const TaskalgTable, x: usize, y: usize, region: usize, out: *mut f64) -> TaskalgStatus {
    guard(|| {
        let t = &ref_arg(table, "table")?.table;
        if x >= t.width || y >= t.height || region >= t.regions {
            return Err(Failure(TaskalgStatus::InvalidEnvironment, format!("({x},{y}) region {region} is out of range")));
        }
        *mut_arg(out, "out")? = t.value(y * t.width + x, t.goal_index(region, 0));
        Ok(())
    })
}

/// # Safety
/// `table` must be live; `path` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn taskalg_table_save(table: *const TaskalgTable, path: *const c_char) -> TaskalgStatus {
    guard(|| {
        let t = &ref_arg(table, "table")?.table;
        save_table(Path::new(str_arg(path, "path")?), &StoredTable::new(t.clone(), None))?;
        Ok(())
    })
}

/// # Safety
/// `path` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_table_load(path: *const c_char, out: *mut *mut TaskalgTable) -> TaskalgStatus {
    guard(|| {
        let stored = load_table(Path::new(str_arg(path, "path")?))?;
        put(out, TaskalgTable { table: stored.table })
    })
}

/// Follows the table's greedy policy from `(x, y)`. `max_steps == 0` uses
/// the default bound for the table's multiplier.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_rollout(
    env: *const TaskalgEnv,
    table: *const TaskalgTable,
    x: usize,
    y: usize,
    max_steps: usize,
    out: *mut *mut TaskalgReport,
) -> TaskalgStatus {
    guard(|| {
        let mdp = &ref_arg(env, "env")?.mdp;
        let t = &ref_arg(table, "table")?.table;
        t.matches_env(mdp)?;
        let max_steps = if max_steps == 0 { default_max_steps(t.config.c_p, mdp) } else { max_steps };
        let report = rollout(mdp, &extract_policy(t), Cell::new(x, y), max_steps)?;
        put(out, TaskalgReport { report })
    })
}

/// # Safety
/// `report` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn taskalg_report_free(report: *mut TaskalgReport) {
    release(report);
}

/// # Safety
/// `report` must be live; out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn taskalg_report_summary(
    report: *const TaskalgReport,
    terminated: *mut bool,
    chatter: *mut bool,
    steps: *mut usize,
) -> TaskalgStatus {
    guard(|| {
        let r = &ref_arg(report, "report")?.report;
        if !terminated.is_null() {
            *terminated = r.terminated();
        }
        if !chatter.is_null() {
            *chatter = r.chatter;
        }
        if !steps.is_null() {
            *steps = r.actions.len();
        }
        Ok(())
    })
}

/// Classifies the run against `formula` and keeps the result on the report.
///
/// # Safety
/// Handles must be live; `formula` nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_report_classify(
    report: *mut TaskalgReport,
    env: *const TaskalgEnv,
    formula: *const c_char,
    semantics: TaskalgSemantics,
    out: *mut TaskalgPathClass,
) -> TaskalgStatus {
    guard(|| {
        let r = &mut mut_arg(report, "report")?.report;
        let mdp = &ref_arg(env, "env")?.mdp;
        let task = TaskSpec::parse(str_arg(formula, "formula")?, semantics.into())?;
        let class = attach_classification(mdp, r, &task)?;
        *mut_arg(out, "out")? = class.into();
        Ok(())
    })
}

/// The structured run report as JSON. Free with [`taskalg_string_free`].
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn taskalg_report_json(report: *const TaskalgReport, env: *const TaskalgEnv, out: *mut *mut c_char) -> TaskalgStatus {
    guard(|| {
        let r = &ref_arg(report, "report")?.report;
        let mdp = &ref_arg(env, "env")?.mdp;
        let text = serde_json::to_string(&report_json(mdp, r)).map_err(Error::from)?;
        let out = mut_arg(out, "out")?;
        *out = CString::new(text).expect("JSON has no interior nul").into_raw();
        Ok(())
    })
}
