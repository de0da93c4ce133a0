//! C ABI over the capmatch labeler, metrics and batch runner.
//!
//! Every function returns a [`CapmatchStatus`]; on failure the message is
//! available from [`capmatch_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function. No panic
//! crosses the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use capmatch::aggregate::{marginal_consistency_check, top_k_average, Bin, ModelMetadata};
use capmatch::audit::{audit_identity_check, AuditFractions};
use capmatch::eval::{average_robustness, effective_robustness_ratio};
use capmatch::labeling::{
    CaptionRecord, ExclusionMode, FieldOrder, Labeler, MatchStrategy, StrategyKind, TermDictionary,
};
use capmatch::pipeline::{execute, RunConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapmatchStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    /// The quantity is not defined for the input (for example a zero base
    /// accuracy).
    Undefined = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapmatchStrategy {
    Strict = 0,
    SingleClass = 1,
    MultiClass = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapmatchExclusion {
    None = 0,
    PerClass = 1,
    GlobalDrop = 2,
}

/// A validated term dictionary.
pub struct CapmatchDictionary {
    inner: TermDictionary,
}

/// A dictionary bound to a strategy and exclusion mode.
pub struct CapmatchLabeler {
    dict: TermDictionary,
    strategy: MatchStrategy,
    exclusion: ExclusionMode,
    fields: FieldOrder,
}

/// Labels for one caption. `classes` is owned by the library; release it
/// with [`capmatch_labels_free`].
#[repr(C)]
pub struct CapmatchLabels {
    pub classes: *mut u32,
    pub len: usize,
    /// No label was assigned.
    pub dropped: bool,
    /// Global-drop mode only: the caption matched and leaves the corpus.
    pub filtered: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CapmatchStatus, String);

impl From<capmatch::Error> for Failure {
    fn from(e: capmatch::Error) -> Self {
        let status = match e {
            capmatch::Error::Io { .. } => CapmatchStatus::Io,
            _ => CapmatchStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CapmatchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CapmatchStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CapmatchStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CapmatchStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CapmatchStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn capmatch_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn capmatch_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn capmatch_dictionary_from_json(
    json: *const c_char,
    out: *mut *mut CapmatchDictionary,
) -> CapmatchStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let inner = TermDictionary::from_json(text)?;
        write_out(out, Box::into_raw(Box::new(CapmatchDictionary { inner })), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn capmatch_dictionary_from_path(
    path: *const c_char,
    out: *mut *mut CapmatchDictionary,
) -> CapmatchStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let inner = TermDictionary::from_path(path)?;
        write_out(out, Box::into_raw(Box::new(CapmatchDictionary { inner })), "out")
    })
}

/// Number of classes in the dictionary, 0 for a null handle.
///
/// # Safety
/// `dict` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn capmatch_dictionary_class_count(dict: *const CapmatchDictionary) -> usize {
    dict.as_ref().map_or(0, |d| d.inner.entries().len())
}

/// # Safety
/// `dict` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn capmatch_dictionary_free(dict: *mut CapmatchDictionary) {
    if !dict.is_null() {
        drop(Box::from_raw(dict));
    }
}

/// Builds a labeler from a dictionary; the dictionary handle stays owned by
/// the caller. `mc_cap` is used only by the multi-class strategy.
///
/// # Safety
/// `dict` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn capmatch_labeler_new(
    dict: *const CapmatchDictionary,
    strategy: CapmatchStrategy,
    mc_cap: usize,
    exclusion: CapmatchExclusion,
    out: *mut *mut CapmatchLabeler,
) -> CapmatchStatus {
    guard(|| {
        let dict = dict.as_ref().ok_or_else(|| null("dict"))?;
        let kind = match strategy {
            CapmatchStrategy::Strict => StrategyKind::Strict,
            CapmatchStrategy::SingleClass => StrategyKind::SingleClass,
            CapmatchStrategy::MultiClass => StrategyKind::MultiClass,
        };
        let exclusion = match exclusion {
            CapmatchExclusion::None => ExclusionMode::None,
            CapmatchExclusion::PerClass => ExclusionMode::PerClass,
            CapmatchExclusion::GlobalDrop => ExclusionMode::GlobalDrop,
        };
        let labeler = CapmatchLabeler {
            dict: dict.inner.clone(),
            strategy: MatchStrategy::new(kind, mc_cap.max(1))?,
            exclusion,
            fields: FieldOrder::default(),
        };
        write_out(out, Box::into_raw(Box::new(labeler)), "out")
    })
}

/// # Safety
/// `labeler` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn capmatch_labeler_free(labeler: *mut CapmatchLabeler) {
    if !labeler.is_null() {
        drop(Box::from_raw(labeler));
    }
}

fn labels_of(labeler: &CapmatchLabeler, record: &CaptionRecord) -> CapmatchLabels {
    let l = Labeler::new(&labeler.dict, labeler.strategy)
        .with_exclusion(labeler.exclusion)
        .with_fields(labeler.fields.clone());
    let labeled = l.label(record);
    let dropped = labeled.decision.dropped();
    let boxed = labeled.decision.labels.into_boxed_slice();
    let len = boxed.len();
    CapmatchLabels {
        classes: Box::into_raw(boxed).cast(),
        len,
        dropped,
        filtered: labeled.filtered,
    }
}

/// Labels one caption record given as a JSON object (sample_id plus any of
/// title, tags, description, alt_text).
///
/// # Safety
/// `labeler` must be a handle from this library, `record_json` a
/// NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn capmatch_label_record_json(
    labeler: *const CapmatchLabeler,
    record_json: *const c_char,
    out: *mut CapmatchLabels,
) -> CapmatchStatus {
    guard(|| {
        let labeler = labeler.as_ref().ok_or_else(|| null("labeler"))?;
        let text = str_arg(record_json, "record_json")?;
        let record: CaptionRecord = parse_json(text)?;
        write_out(out, labels_of(labeler, &record), "out")
    })
}

/// Labels a bare caption string, treated as a title.
///
/// # Safety
/// `labeler` must be a handle from this library, `caption` a NUL-terminated
/// string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn capmatch_label_text(
    labeler: *const CapmatchLabeler,
    caption: *const c_char,
    out: *mut CapmatchLabels,
) -> CapmatchStatus {
    guard(|| {
        let labeler = labeler.as_ref().ok_or_else(|| null("labeler"))?;
        let caption = str_arg(caption, "caption")?;
        let record = CaptionRecord::new("").with_title(caption);
        write_out(out, labels_of(labeler, &record), "out")
    })
}

/// Releases the class array of `labels` and resets it to empty.
///
/// # Safety
/// `labels` must be null or filled by this library.
#[no_mangle]
pub unsafe extern "C" fn capmatch_labels_free(labels: *mut CapmatchLabels) {
    if let Some(l) = labels.as_mut() {
        if !l.classes.is_null() {
            drop(Box::from_raw(ptr::slice_from_raw_parts_mut(l.classes, l.len)));
        }
        l.classes = ptr::null_mut();
        l.len = 0;
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure::from(capmatch::Error::from(e)))
}

/// Unweighted mean of shift accuracies in [0, 1].
///
/// # Safety
/// `values` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn capmatch_average_robustness(values: *const f64, len: usize, out: *mut f64) -> CapmatchStatus {
    guard(|| {
        let v = slice_arg(values, len, "values")?;
        write_out(out, average_robustness(v)?, "out")
    })
}

/// Average robustness divided by base accuracy; `Undefined` when the base
/// accuracy is not positive.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn capmatch_effective_robustness_ratio(
    avg_robustness: f64,
    base_accuracy: f64,
    out: *mut f64,
) -> CapmatchStatus {
    guard(|| match effective_robustness_ratio(avg_robustness, base_accuracy) {
        Some(r) => write_out(out, r, "out"),
        None => Err(Failure(
            CapmatchStatus::Undefined,
            format!("ratio undefined for base accuracy {base_accuracy}"),
        )),
    })
}

/// Mean of the `k` largest values.
///
/// # Safety
/// `values` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn capmatch_top_k_mean(values: *const f64, len: usize, k: usize, out: *mut f64) -> CapmatchStatus {
    guard(|| {
        let v = slice_arg(values, len, "values")?;
        let models: Vec<ModelMetadata> = v
            .iter()
            .enumerate()
            .map(|(i, &x)| ModelMetadata::new(format!("{i:020}")).with_metric("v", x))
            .collect();
        let bin = Bin {
            label: String::new(),
            members: (0..models.len()).collect(),
        };
        write_out(out, top_k_average(&models, &bin, "v", k)?.top_k_mean, "out")
    })
}

/// Whether two marginals of one grid share their mean within `tolerance`.
///
/// # Safety
/// `first`/`second` must point to `first_len`/`second_len` doubles;
/// `pass` must be valid; `difference` may be null.
#[no_mangle]
pub unsafe extern "C" fn capmatch_marginal_check(
    first: *const f64,
    first_len: usize,
    second: *const f64,
    second_len: usize,
    tolerance: f64,
    pass: *mut bool,
    difference: *mut f64,
) -> CapmatchStatus {
    guard(|| {
        let a = slice_arg(first, first_len, "first")?;
        let b = slice_arg(second, second_len, "second")?;
        let v = marginal_consistency_check(a, b, tolerance)?;
        if !difference.is_null() {
            difference.write(v.difference);
        }
        write_out(pass, v.pass, "pass")
    })
}

/// Whether utilization equals label accuracy times coverage within
/// `tolerance`.
///
/// # Safety
/// `consistent` must be valid; `residual` may be null.
#[no_mangle]
pub unsafe extern "C" fn capmatch_audit_identity(
    label_accuracy: f64,
    coverage: f64,
    utilization: f64,
    tolerance: f64,
    consistent: *mut bool,
    residual: *mut f64,
) -> CapmatchStatus {
    guard(|| {
        let v = audit_identity_check(
            AuditFractions {
                label_accuracy,
                coverage,
                utilization,
            },
            tolerance,
        );
        if !residual.is_null() {
            residual.write(v.residual);
        }
        write_out(consistent, v.consistent, "consistent")
    })
}

/// Runs a batch command from a JSON run config (the same fields as the
/// command-line config file, including `command`). `exit_code` receives 0,
/// 1 or 2 as the command-line tool would return.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `exit_code` valid.
#[no_mangle]
pub unsafe extern "C" fn capmatch_run_json(config_json: *const c_char, exit_code: *mut i32) -> CapmatchStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let config: RunConfig = parse_json(text)?;
        let outcome = execute(config);
        if let Some(e) = outcome.log.errors.first() {
            set_error(e.clone());
        }
        write_out(exit_code, outcome.exit.code(), "exit_code")
    })
}
