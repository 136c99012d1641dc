//! C ABI over `ais-core`.
//!
//! Engines are opaque handles created by `ais_engine_new`/`ais_engine_open`
//! and released with `ais_engine_free`. Every fallible call returns an
//! `AisStatus`; on failure `ais_last_error_message` describes the error
//! for the calling thread. Strings handed out by the library are
//! NUL-terminated UTF-8 and must be released with `ais_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ais_core::agreement::{
    krippendorff_alpha, pairwise_agreement, proportion_significance, AgreementError, Dimension,
    RatingMatrix,
};
use ais_core::ingestion::IngestError;
use ais_core::model::{FlagReason, TaskKind};
use ais_core::workflow::{Engine, WorkflowConfig, WorkflowError};

/// Result codes. Negative values are errors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AisStatus {
    Ok = 0,
    /// `ais_engine_next_task` found no open assignment.
    NoTask = 1,
    NullArgument = -1,
    InvalidUtf8 = -2,
    InvalidArgument = -3,
    NotFound = -4,
    Conflict = -5,
    Rejected = -6,
    IngestFailed = -7,
    Io = -8,
    InsufficientData = -9,
    Panic = -99,
}

/// Opaque engine handle.
pub struct AisEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<Vec<u8>>) {
    let mut bytes = message.into();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(AisStatus);

impl From<WorkflowError> for Failure {
    fn from(e: WorkflowError) -> Self {
        use WorkflowError::*;
        let status = match &e {
            UnknownAnnotator(_) | UnknownDataset(_) | NoAssignment { .. } => AisStatus::NotFound,
            DuplicateRating { .. }
            | StageOrderViolation { .. }
            | AlreadyComplete { .. }
            | DuplicateTaskId(_) => AisStatus::Conflict,
            MissingJustification | PoolTooSmall { .. } | InvalidReplication => AisStatus::Rejected,
            Ingest(IngestError::Io(_)) | Store(_) | Io(_) => AisStatus::Io,
            Ingest(_) => AisStatus::IngestFailed,
        };
        set_error(e.to_string());
        Failure(status)
    }
}

impl From<AgreementError> for Failure {
    fn from(e: AgreementError) -> Self {
        set_error(e.to_string());
        Failure(match e {
            AgreementError::EmptyInput => AisStatus::InvalidArgument,
            _ => AisStatus::InsufficientData,
        })
    }
}

fn invalid(message: impl Into<Vec<u8>>) -> Failure {
    set_error(message);
    Failure(AisStatus::InvalidArgument)
}

/// Runs `f`, converting failures and panics into status codes.
fn guard<F: FnOnce() -> Result<AisStatus, Failure>>(f: F) -> AisStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status))) => status,
        Err(_) => {
            set_error("internal panic");
            AisStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        set_error(format!("`{name}` is null"));
        return Err(Failure(AisStatus::NullArgument));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("`{name}` is not valid UTF-8"));
        Failure(AisStatus::InvalidUtf8)
    })
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

unsafe fn engine_arg<'a>(p: *const AisEngine) -> Result<&'a Engine, Failure> {
    p.as_ref().map(|h| &h.engine).ok_or_else(|| {
        set_error("`engine` is null");
        Failure(AisStatus::NullArgument)
    })
}

fn check_out<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        set_error(format!("`{name}` is null"));
        return Err(Failure(AisStatus::NullArgument));
    }
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s)
        .expect("JSON output has no NUL bytes")
        .into_raw()
}

fn config(replication: u32, pilot: bool) -> WorkflowConfig {
    WorkflowConfig::with_replication(replication as usize).pilot(pilot)
}

fn parse_kind(kind: &str) -> Result<TaskKind, Failure> {
    kind.parse().map_err(|e| invalid(format!("{e}")))
}

/// Message of the last error on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ais_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ais_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates an in-memory engine.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_new(
    replication: u32,
    pilot: bool,
    out: *mut *mut AisEngine,
) -> AisStatus {
    guard(|| {
        check_out(out, "out")?;
        let engine = Engine::in_memory(config(replication, pilot))?;
        *out = Box::into_raw(Box::new(AisEngine { engine }));
        Ok(AisStatus::Ok)
    })
}

/// Opens (or creates) a durable engine in directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_open(
    dir: *const c_char,
    replication: u32,
    pilot: bool,
    out: *mut *mut AisEngine,
) -> AisStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        check_out(out, "out")?;
        let engine = Engine::open(Path::new(dir), config(replication, pilot))?;
        *out = Box::into_raw(Box::new(AisEngine { engine }));
        Ok(AisStatus::Ok)
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from `ais_engine_new`/`ais_engine_open` and not have
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_free(engine: *mut AisEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Imports task lines from `jsonl`. On success `*summary_json` receives
/// the import summary as JSON.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_import_jsonl(
    engine: *const AisEngine,
    jsonl: *const c_char,
    dataset_id: *const c_char,
    kind: *const c_char,
    summary_json: *mut *mut c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let jsonl = str_arg(jsonl, "jsonl")?;
        let dataset_id = str_arg(dataset_id, "dataset_id")?;
        let kind = parse_kind(str_arg(kind, "kind")?)?;
        check_out(summary_json, "summary_json")?;
        let summary = engine.import_reader(jsonl.as_bytes(), dataset_id, kind)?;
        *summary_json = into_c_string(serde_json::to_string(&summary).expect("serializable"));
        Ok(AisStatus::Ok)
    })
}

/// Imports the task file at `path`; see `ais_engine_import_jsonl`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_import_file(
    engine: *const AisEngine,
    path: *const c_char,
    dataset_id: *const c_char,
    kind: *const c_char,
    summary_json: *mut *mut c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let path = str_arg(path, "path")?;
        let dataset_id = str_arg(dataset_id, "dataset_id")?;
        let kind = parse_kind(str_arg(kind, "kind")?)?;
        check_out(summary_json, "summary_json")?;
        let summary = engine.import_dataset(Path::new(path), dataset_id, kind)?;
        *summary_json = into_c_string(serde_json::to_string(&summary).expect("serializable"));
        Ok(AisStatus::Ok)
    })
}

/// Assigns the dataset's unassigned tasks to `pool_len` annotators.
///
/// # Safety
/// `pool` must point to `pool_len` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_assign(
    engine: *const AisEngine,
    dataset_id: *const c_char,
    pool: *const *const c_char,
    pool_len: usize,
    seed: u64,
    created: *mut usize,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let dataset_id = str_arg(dataset_id, "dataset_id")?;
        if pool.is_null() && pool_len > 0 {
            set_error("`pool` is null");
            return Err(Failure(AisStatus::NullArgument));
        }
        let names = if pool_len == 0 {
            &[][..]
        } else {
            slice::from_raw_parts(pool, pool_len)
        };
        let pool = names
            .iter()
            .map(|&p| str_arg(p, "pool").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let n = engine.create_assignments(dataset_id, &pool, seed)?;
        if !created.is_null() {
            *created = n;
        }
        Ok(AisStatus::Ok)
    })
}

/// Fetches the annotator's next stage payload as JSON into `*payload_json`.
/// Returns `NoTask` (and stores null) when nothing is open.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_next_task(
    engine: *const AisEngine,
    annotator_id: *const c_char,
    payload_json: *mut *mut c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let annotator_id = str_arg(annotator_id, "annotator_id")?;
        check_out(payload_json, "payload_json")?;
        match engine.next_task(annotator_id)? {
            Some(p) => {
                *payload_json = into_c_string(serde_json::to_string(&p).expect("serializable"));
                Ok(AisStatus::Ok)
            }
            None => {
                *payload_json = ptr::null_mut();
                Ok(AisStatus::NoTask)
            }
        }
    })
}

/// Stage-1 answer. `justification` may be null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_submit_stage1(
    engine: *const AisEngine,
    annotator_id: *const c_char,
    task_id: *const c_char,
    interpretable: bool,
    justification: *const c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let annotator_id = str_arg(annotator_id, "annotator_id")?;
        let task_id = str_arg(task_id, "task_id")?;
        let justification = opt_str_arg(justification, "justification")?;
        engine.submit_stage1(annotator_id, task_id, interpretable, justification)?;
        Ok(AisStatus::Ok)
    })
}

/// Stage-2 answer. `justification` may be null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_submit_stage2(
    engine: *const AisEngine,
    annotator_id: *const c_char,
    task_id: *const c_char,
    ais: bool,
    justification: *const c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let annotator_id = str_arg(annotator_id, "annotator_id")?;
        let task_id = str_arg(task_id, "task_id")?;
        let justification = opt_str_arg(justification, "justification")?;
        engine.submit_stage2(annotator_id, task_id, ais, justification)?;
        Ok(AisStatus::Ok)
    })
}

/// Flags a task. `reason` is one of `missing_components`,
/// `malformed_text`, `underspecified_source`, `expert_knowledge_required`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_submit_flag(
    engine: *const AisEngine,
    annotator_id: *const c_char,
    task_id: *const c_char,
    reason: *const c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let annotator_id = str_arg(annotator_id, "annotator_id")?;
        let task_id = str_arg(task_id, "task_id")?;
        let reason: FlagReason = str_arg(reason, "reason")?
            .parse()
            .map_err(|e| invalid(format!("{e}")))?;
        engine.submit_flag(annotator_id, task_id, reason)?;
        Ok(AisStatus::Ok)
    })
}

/// Writes the dataset's ratings as rating lines into `*jsonl`.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ais_engine_export_ratings(
    engine: *const AisEngine,
    dataset_id: *const c_char,
    jsonl: *mut *mut c_char,
) -> AisStatus {
    guard(|| {
        let engine = engine_arg(engine)?;
        let dataset_id = str_arg(dataset_id, "dataset_id")?;
        check_out(jsonl, "jsonl")?;
        let mut out = Vec::new();
        engine.export_ratings(dataset_id, &mut out)?;
        *jsonl = into_c_string(String::from_utf8(out).expect("rating lines are utf-8"));
        Ok(AisStatus::Ok)
    })
}

/// Builds a yes/no matrix from a row-major `n_items x n_raters` grid where
/// 1 is yes, 0 is no and -1 is a missing cell.
unsafe fn grid_matrix(
    grid: *const i8,
    n_items: usize,
    n_raters: usize,
) -> Result<RatingMatrix, Failure> {
    let len = n_items.checked_mul(n_raters).ok_or_else(|| invalid("grid too large"))?;
    if grid.is_null() && len > 0 {
        set_error("`grid` is null");
        return Err(Failure(AisStatus::NullArgument));
    }
    let cells = if len == 0 { &[][..] } else { slice::from_raw_parts(grid, len) };
    let mut m = RatingMatrix::new(Dimension::Interpretability);
    for (k, &v) in cells.iter().enumerate() {
        let (i, r) = (k / n_raters, k % n_raters);
        match v {
            -1 => {}
            0 | 1 => m.insert(&i.to_string(), &r.to_string(), v == 1),
            _ => return Err(invalid(format!("cell ({i}, {r}) holds {v}; expected -1, 0 or 1"))),
        }
    }
    Ok(m)
}

/// Nominal Krippendorff's alpha of a yes/no grid (see `grid_matrix`).
///
/// # Safety
/// `grid` must point to `n_items * n_raters` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ais_krippendorff_alpha(
    grid: *const i8,
    n_items: usize,
    n_raters: usize,
    out: *mut f64,
) -> AisStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = krippendorff_alpha(&grid_matrix(grid, n_items, n_raters)?)?;
        Ok(AisStatus::Ok)
    })
}

/// Pooled pairwise agreement of a yes/no grid (see `grid_matrix`).
///
/// # Safety
/// `grid` must point to `n_items * n_raters` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ais_pairwise_agreement(
    grid: *const i8,
    n_items: usize,
    n_raters: usize,
    out: *mut f64,
) -> AisStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = pairwise_agreement(&grid_matrix(grid, n_items, n_raters)?)?;
        Ok(AisStatus::Ok)
    })
}

/// Two-sided permutation p-value for the difference of two proportions.
/// Outcomes are bytes; any nonzero byte is a success.
///
/// # Safety
/// `a` and `b` must point to `len_a` and `len_b` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ais_proportion_significance(
    a: *const u8,
    len_a: usize,
    b: *const u8,
    len_b: usize,
    iterations: u64,
    seed: u64,
    out: *mut f64,
) -> AisStatus {
    guard(|| {
        check_out(out, "out")?;
        let as_bools = |p: *const u8, len: usize, name: &str| -> Result<Vec<bool>, Failure> {
            if len == 0 {
                return Ok(Vec::new());
            }
            if p.is_null() {
                set_error(format!("`{name}` is null"));
                return Err(Failure(AisStatus::NullArgument));
            }
            Ok(slice::from_raw_parts(p, len).iter().map(|&x| x != 0).collect())
        };
        let a = as_bools(a, len_a, "a")?;
        let b = as_bools(b, len_b, "b")?;
        *out = proportion_significance(&a, &b, iterations, seed)?;
        Ok(AisStatus::Ok)
    })
}
