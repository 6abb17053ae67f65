//! Flat C interface over the library. Sessions are integer handles holding a
//! copied dataset, a configuration and, after training, a model.
//!
//! Return codes: `0` success, `-1` failure (message via [`last_error`]),
//! `-2` unknown or freed handle. Distinct handles may be used from different
//! threads; one handle must not be used concurrently.

use std::collections::HashMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use cellsvm::config::Config;
use cellsvm::dataio::Dataset;
use cellsvm::scenarios::{self, ScenarioKind, ScenarioSpec, TrainedModel};

pub const OK: i32 = 0;
pub const ERROR: i32 = -1;
pub const INVALID_HANDLE: i32 = -2;

struct Session {
    data: Dataset,
    config: Config,
    model: Option<TrainedModel>,
    last_error: String,
}

struct Registry {
    sessions: Mutex<HashMap<i64, Arc<Mutex<Session>>>>,
    next: AtomicI64,
    /// Messages for failures that have no session, e.g. a rejected create.
    global_error: Mutex<String>,
}

fn registry() -> &'static Registry {
    static REGISTRY: OnceLock<Registry> = OnceLock::new();
    REGISTRY.get_or_init(|| Registry {
        sessions: Mutex::new(HashMap::new()),
        next: AtomicI64::new(1),
        global_error: Mutex::new(String::new()),
    })
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn set_global_error(message: impl Into<String>) {
    *lock(&registry().global_error) = message.into();
}

fn session(handle: i64) -> Option<Arc<Mutex<Session>>> {
    lock(&registry().sessions).get(&handle).cloned()
}

/// Runs `f` on the session, storing any error message in it.
fn with_session<T>(handle: i64, fail: T, invalid: T, f: impl FnOnce(&mut Session) -> Result<T, String>) -> T {
    let Some(s) = session(handle) else {
        set_global_error(format!("invalid session handle {handle}"));
        return invalid;
    };
    let mut guard = lock(&s);
    match catch_unwind(AssertUnwindSafe(|| f(&mut guard))) {
        Ok(Ok(v)) => v,
        Ok(Err(message)) => {
            guard.last_error = message;
            fail
        }
        Err(_) => {
            guard.last_error = "internal error".into();
            fail
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a>(ptr: *const f64, len: i64) -> Result<&'a [f64], String> {
    if len < 0 {
        return Err("negative length".into());
    }
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err("null array".into());
    }
    Ok(std::slice::from_raw_parts(ptr, len as usize))
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn string<'a>(ptr: *const c_char) -> Result<&'a str, String> {
    if ptr.is_null() {
        return Err("null string".into());
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| "string is not UTF-8".into())
}

fn dataset(features: &[f64], labels: &[f64], n: i64, d: i64) -> Result<Dataset, String> {
    if n < 1 || d < 1 {
        return Err(format!("need n >= 1 and d >= 1, got n={n} d={d}"));
    }
    let (n, d) = (n as usize, d as usize);
    if features.len() != n * d {
        return Err(format!("feature array has {} values, expected n*d = {}", features.len(), n * d));
    }
    if labels.len() != n {
        return Err(format!("label array has {} values, expected n = {n}", labels.len()));
    }
    Dataset::new(features.to_vec(), labels.to_vec(), d).map_err(|e| e.to_string())
}

/// Copies an `n x d` row-major feature array and `n` labels into a new session.
/// Returns a handle `> 0`, or `-1`.
///
/// # Safety
/// Arrays must hold at least the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn session_create(
    features: *const f64,
    features_len: i64,
    labels: *const f64,
    labels_len: i64,
    n: i64,
    d: i64,
) -> i64 {
    let built = slice(features, features_len)
        .and_then(|f| Ok((f, slice(labels, labels_len)?)))
        .and_then(|(f, l)| dataset(f, l, n, d));
    match built {
        Ok(data) => {
            let reg = registry();
            let id = reg.next.fetch_add(1, Ordering::Relaxed);
            let s = Session {
                data,
                config: Config::default(),
                model: None,
                last_error: String::new(),
            };
            lock(&reg.sessions).insert(id, Arc::new(Mutex::new(s)));
            id
        }
        Err(message) => {
            set_global_error(message);
            ERROR as i64
        }
    }
}

/// Sets one configuration key; keys and values follow the CLI flags.
///
/// # Safety
/// `key` and `value` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn session_configure(handle: i64, key: *const c_char, value: *const c_char) -> i32 {
    with_session(handle, ERROR, INVALID_HANDLE, |s| {
        let (k, v) = (string(key)?, string(value)?);
        s.config.set(k, v).map_err(|e| e.to_string())?;
        Ok(OK)
    })
}

/// Trains the named scenario (`mc`, `ls`, `qt`, `ex`, `npl`, `binary`, `weighted_binary`, ...).
///
/// # Safety
/// `scenario` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn session_train(handle: i64, scenario: *const c_char) -> i32 {
    with_session(handle, ERROR, INVALID_HANDLE, |s| {
        let name = string(scenario)?;
        let kind = ScenarioKind::parse(name, s.config.mc_type).map_err(|e| e.to_string())?;
        let spec = ScenarioSpec::from_config(kind, &s.config);
        s.model = None;
        s.model = Some(scenarios::train(&spec, &s.data, &s.config).map_err(|e| e.to_string())?);
        Ok(OK)
    })
}

fn trained(s: &Session) -> Result<&TrainedModel, String> {
    s.model.as_ref().ok_or_else(|| "session is not trained".to_string())
}

/// Number of values `session_test` writes for `n_test` points: `n_test` times the output columns.
#[no_mangle]
pub extern "C" fn session_test_output_size(handle: i64, n_test: i64) -> i64 {
    with_session(handle, ERROR as i64, INVALID_HANDLE as i64, |s| {
        if n_test < 0 {
            return Err("negative test size".into());
        }
        Ok(n_test * trained(s)?.columns().len() as i64)
    })
}

/// Number of metric values `session_test` writes when labels are given.
#[no_mangle]
pub extern "C" fn session_metrics_size(handle: i64) -> i64 {
    with_session(handle, ERROR as i64, INVALID_HANDLE as i64, |s| {
        let model = trained(s)?;
        Ok(match model.scenario.kind {
            ScenarioKind::Quantile | ScenarioKind::Expectile => model.scenario.levels.len(),
            ScenarioKind::WeightedBinary => model.scenario.weights.len(),
            ScenarioKind::Npl => 2,
            _ => 1,
        } as i64)
    })
}

/// Predicts `n x d` test features into `out` (row-major, one row per point).
/// With labels, metrics are written into `metrics`; labels may be null.
///
/// # Safety
/// Arrays must hold at least the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn session_test(
    handle: i64,
    features: *const f64,
    features_len: i64,
    n: i64,
    d: i64,
    labels: *const f64,
    out: *mut f64,
    out_len: i64,
    metrics: *mut f64,
    metrics_len: i64,
) -> i32 {
    with_session(handle, ERROR, INVALID_HANDLE, |s| {
        let model = trained(s)?;
        let f = slice(features, features_len)?;
        let y = if labels.is_null() {
            vec![0.0; n.max(0) as usize]
        } else {
            slice(labels, n)?.to_vec()
        };
        let data = dataset(f, &y, n, d)?;
        let predictions = scenarios::predict(model, &data, model.config.threads).map_err(|e| e.to_string())?;
        let values: Vec<f64> = predictions.rows.concat();
        if out.is_null() || out_len < values.len() as i64 {
            return Err(format!("output buffer needs {} values", values.len()));
        }
        std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(&values);
        if !labels.is_null() {
            let m = scenarios::evaluate(&predictions, &y, model).map_err(|e| e.to_string())?;
            if metrics.is_null() || metrics_len < m.values.len() as i64 {
                return Err(format!("metrics buffer needs {} values", m.values.len()));
            }
            let dst = std::slice::from_raw_parts_mut(metrics, m.values.len());
            for (d, (_, v)) in dst.iter_mut().zip(&m.values) {
                *d = *v;
            }
        }
        Ok(OK)
    })
}

/// Releases a session. Its id is never handed out again.
#[no_mangle]
pub extern "C" fn session_free(handle: i64) -> i32 {
    match lock(&registry().sessions).remove(&handle) {
        Some(_) => OK,
        None => {
            set_global_error(format!("invalid session handle {handle}"));
            INVALID_HANDLE
        }
    }
}

/// Copies the last error message of `handle` (or the process-wide one for an
/// unknown handle) into `buf` as a NUL-terminated string, truncating to `buf_len`.
/// Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or writable for `buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn last_error(handle: i64, buf: *mut c_char, buf_len: i64) -> i64 {
    let message = match session(handle) {
        Some(s) => lock(&s).last_error.clone(),
        None => lock(&registry().global_error).clone(),
    };
    if !buf.is_null() && buf_len > 0 {
        let n = message.len().min(buf_len as usize - 1);
        std::ptr::copy_nonoverlapping(message.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
    message.len() as i64
}

/// Number of live sessions.
#[no_mangle]
pub extern "C" fn session_count() -> i64 {
    lock(&registry().sessions).len() as i64
}
