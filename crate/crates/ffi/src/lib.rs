//! C ABI for the rarft toolkit.
//!
//! Every function returns a [`RarftStatus`]. On failure the message is kept
//! in a thread-local slot and can be fetched with [`rarft_last_error`].
//! Strings returned through out-pointers are owned by the caller and must be
//! released with [`rarft_string_free`]. Handles are released with their
//! matching `*_free` function.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use rarft::domain::{validate_sample, GroundingSample, Segment};
use rarft::grpo::{run_simulation, ScenarioSpec, SimConfig, REFUSAL_SCENARIO};
use rarft::metrics::{aggregate_report, EvalOptions, PredictionRecord};
use rarft::providers::{EmbeddingProvider, HashEmbedder};
use rarft::reward::{format_reward, iou, total_reward, PairIndex, RewardOptions};
use rarft::template::extract_segment;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RarftStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    NotFound = 5,
    ProviderError = 6,
    EvaluationError = 7,
    IoError = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RarftRewardBreakdown {
    pub format: f64,
    pub refuse_iou: f64,
    pub explain: f64,
    pub correction: f64,
    pub total: f64,
}

/// Opaque embedding provider.
pub struct RarftEmbedder {
    inner: Arc<dyn EmbeddingProvider>,
}

/// Opaque validated dataset with its relevant/irrelevant pairing.
pub struct RarftDataset {
    samples: Vec<GroundingSample>,
    by_id: HashMap<String, usize>,
    pairs: PairIndex,
}

impl RarftDataset {
    fn new(samples: Vec<GroundingSample>) -> Result<Self, Failure> {
        let mut by_id = HashMap::new();
        for (i, s) in samples.iter().enumerate() {
            if by_id.insert(s.sample_id.clone(), i).is_some() {
                return Err(Failure(RarftStatus::ParseError, format!("duplicate sample id {}", s.sample_id)));
            }
        }
        let pairs = PairIndex::build(&samples);
        Ok(Self { samples, by_id, pairs })
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RarftStatus, String);

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RarftStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RarftStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            RarftStatus::Panic
        }
    }
}

fn fail<T>(status: RarftStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(RarftStatus::NullPointer, format!("{name} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RarftStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(RarftStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(RarftStatus::NullPointer, format!("{name} is null")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(RarftStatus::InvalidArgument, "result contains a NUL byte".into()))
}

/// Copy of the calling thread's last error message, or NULL if none.
/// Free with `rarft_string_free`.
#[no_mangle]
pub extern "C" fn rarft_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rarft_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Deterministic 256-dimensional feature-hashing embedder.
#[no_mangle]
pub extern "C" fn rarft_hash_embedder_new() -> *mut RarftEmbedder {
    Box::into_raw(Box::new(RarftEmbedder {
        inner: Arc::new(HashEmbedder::new()),
    }))
}

/// # Safety
/// `e` must be NULL or a handle from `rarft_hash_embedder_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rarft_embedder_free(e: *mut RarftEmbedder) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

fn parse_dataset(text: &str) -> Result<RarftDataset, Failure> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)
            .map_err(|e| Failure(RarftStatus::ParseError, format!("line {}: {e}", i + 1)))?;
        let sample = validate_sample(&record)
            .map_err(|e| Failure(RarftStatus::ParseError, format!("line {}: {e}", i + 1)))?;
        samples.push(sample);
    }
    RarftDataset::new(samples)
}

/// Parses dataset JSONL text into a new handle stored in `*out`.
///
/// # Safety
/// `jsonl` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_dataset_from_jsonl(jsonl: *const c_char, out: *mut *mut RarftDataset) -> RarftStatus {
    guard(|| {
        let text = read_str(jsonl, "jsonl")?;
        let out = out_ref(out, "out")?;
        *out = Box::into_raw(Box::new(parse_dataset(text)?));
        Ok(())
    })
}

/// Reads a dataset JSONL file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_dataset_load(path: *const c_char, out: *mut *mut RarftDataset) -> RarftStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        let out = out_ref(out, "out")?;
        let text = std::fs::read_to_string(Path::new(path))
            .map_err(|e| Failure(RarftStatus::IoError, format!("{path}: {e}")))?;
        *out = Box::into_raw(Box::new(parse_dataset(&text)?));
        Ok(())
    })
}

/// # Safety
/// `d` must be a live dataset handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn rarft_dataset_len(d: *const RarftDataset) -> usize {
    d.as_ref().map_or(0, |d| d.samples.len())
}

/// # Safety
/// `d` must be NULL or a dataset handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rarft_dataset_free(d: *mut RarftDataset) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// Scores `raw_output` against the sample `sample_id` of `dataset`.
///
/// # Safety
/// Handles must be live; strings NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_total_reward(
    dataset: *const RarftDataset,
    embedder: *const RarftEmbedder,
    sample_id: *const c_char,
    raw_output: *const c_char,
    strict_format_gating: bool,
    out: *mut RarftRewardBreakdown,
) -> RarftStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let e = handle(embedder, "embedder")?;
        let id = read_str(sample_id, "sample_id")?;
        let raw = read_str(raw_output, "raw_output")?;
        let out = out_ref(out, "out")?;
        let sample = d
            .by_id
            .get(id)
            .map(|&i| &d.samples[i])
            .ok_or_else(|| Failure(RarftStatus::NotFound, format!("unknown sample id {id}")))?;
        let refs = d
            .pairs
            .references(sample)
            .map_err(|err| Failure(RarftStatus::NotFound, err.to_string()))?;
        let b = total_reward(sample, &refs, raw, e.inner.as_ref(), RewardOptions { strict_format_gating })
            .map_err(|err| Failure(RarftStatus::ProviderError, err.to_string()))?;
        *out = RarftRewardBreakdown {
            format: b.format,
            refuse_iou: b.refuse_iou,
            explain: b.explain,
            correction: b.correction,
            total: b.total,
        };
        Ok(())
    })
}

/// # Safety
/// `raw_output` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_format_reward(raw_output: *const c_char, out: *mut f64) -> RarftStatus {
    guard(|| {
        let raw = read_str(raw_output, "raw_output")?;
        *out_ref(out, "out")? = format_reward(raw);
        Ok(())
    })
}

/// Extracts the first time span from answer text. `*found` is false when
/// the answer is a refusal.
///
/// # Safety
/// `answer` must be NUL-terminated; out-pointers writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_extract_segment(
    answer: *const c_char,
    found: *mut bool,
    start: *mut f64,
    end: *mut f64,
) -> RarftStatus {
    guard(|| {
        let answer = read_str(answer, "answer")?;
        let (found, start, end) = (out_ref(found, "found")?, out_ref(start, "start")?, out_ref(end, "end")?);
        match extract_segment(answer) {
            Some(seg) => {
                *found = true;
                *start = seg.start();
                *end = seg.end();
            }
            None => {
                *found = false;
                *start = 0.0;
                *end = 0.0;
            }
        }
        Ok(())
    })
}

/// Temporal IoU of `[s1, e1]` and `[s2, e2]`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_iou(s1: f64, e1: f64, s2: f64, e2: f64, out: *mut f64) -> RarftStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let a = Segment::new(s1, e1).map_err(|e| Failure(RarftStatus::InvalidArgument, e.to_string()))?;
        let b = Segment::new(s2, e2).map_err(|e| Failure(RarftStatus::InvalidArgument, e.to_string()))?;
        *out = iou(&a, &b);
        Ok(())
    })
}

/// Writes the group-normalized advantages of `rewards[0..n]` to `out[0..n]`.
///
/// # Safety
/// `rewards` must point to `n` readable values and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn rarft_normalize_advantages(rewards: *const f64, n: usize, out: *mut f64) -> RarftStatus {
    guard(|| {
        if rewards.is_null() || out.is_null() {
            return fail(RarftStatus::NullPointer, "rewards and out must be non-null");
        }
        let input = std::slice::from_raw_parts(rewards, n);
        let adv = rarft::grpo::normalize_advantages(input)
            .map_err(|e| Failure(RarftStatus::InvalidArgument, e.to_string()))?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&adv);
        Ok(())
    })
}

/// Computes RA-IoU, R@m and F1 for `outputs_jsonl` (lines of
/// `{"sample_id", "output"}`) without contacting any provider. The report
/// JSON is stored in `*report_json`.
///
/// # Safety
/// `dataset` must be live; `outputs_jsonl` NUL-terminated; `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_evaluate_offline(
    dataset: *const RarftDataset,
    outputs_jsonl: *const c_char,
    report_json: *mut *mut c_char,
) -> RarftStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let text = read_str(outputs_jsonl, "outputs_jsonl")?;
        let out = out_ref(report_json, "report_json")?;
        let mut preds = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: rarft::io::OutputRecord = serde_json::from_str(line)
                .map_err(|e| Failure(RarftStatus::ParseError, format!("line {}: {e}", i + 1)))?;
            preds.push(PredictionRecord::from_raw(rec.sample_id, rec.output));
        }
        let report = aggregate_report(&d.samples, &preds, None, EvalOptions::default())
            .map_err(|e| Failure(RarftStatus::EvaluationError, e.to_string()))?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        *out = to_c_string(json)?;
        Ok(())
    })
}

/// Runs the GRPO simulation on a scenario (TOML text, or NULL for the
/// bundled refusal scenario) with the hash embedder. `*converged` receives
/// the convergence verdict; when `trace_jsonl` is non-NULL it receives the
/// per-step trace.
///
/// # Safety
/// `scenario_toml` must be NULL or NUL-terminated; `converged` writable;
/// `trace_jsonl` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn rarft_simulate(
    scenario_toml: *const c_char,
    seed: u64,
    converged: *mut bool,
    trace_jsonl: *mut *mut c_char,
) -> RarftStatus {
    guard(|| {
        let text = if scenario_toml.is_null() {
            REFUSAL_SCENARIO
        } else {
            read_str(scenario_toml, "scenario_toml")?
        };
        let converged = out_ref(converged, "converged")?;
        let spec = ScenarioSpec::from_toml(text).map_err(|e| Failure(RarftStatus::ParseError, e.to_string()))?;
        let mut cfg = spec.sim.apply(SimConfig::default());
        cfg.seed = seed;
        let trace = run_simulation(&cfg, &spec, &HashEmbedder::new(), RewardOptions::default())
            .map_err(|e| Failure(RarftStatus::InvalidArgument, e.to_string()))?;
        *converged = trace.converged;
        if let Some(slot) = trace_jsonl.as_mut() {
            let mut buf = Vec::new();
            trace.write_jsonl(&mut buf).expect("write to memory");
            *slot = to_c_string(String::from_utf8(buf).expect("json is utf-8"))?;
        }
        Ok(())
    })
}
