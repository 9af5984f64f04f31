use std::ffi::{c_char, CStr, CString};
use std::ptr;

use rarft::domain::validate_sample;
use rarft::providers::HashEmbedder;
use rarft::reward::{PairIndex, RewardOptions};
use rarft_ffi::*;

const DATASET: &str = r#"{"sample_id":"s1","video_id":"v1","video_context":"a chef cooks pasta","query":"The chef is cooking pasta","relevance":"relevant","gt_segment":[4.0,8.0]}
{"sample_id":"s1-strong","video_id":"v1","video_context":"a chef cooks pasta","query":"The chef is cutting steaks","relevance":"irrelevant","difficulty":"strong","gt_refusal":"The chef cooks pasta; no steak is cut.","original_query":"The chef is cooking pasta","gt_categories":["Action/FineGrainedAction"]}
"#;

const GOOD: &str = "<think>the chef stirs a pot</think><answer>From 4 to 8 seconds.</answer><correct>The chef is cooking pasta</correct>";

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    rarft_string_free(p);
    s
}

unsafe fn dataset() -> *mut RarftDataset {
    let mut d = ptr::null_mut();
    assert_eq!(rarft_dataset_from_jsonl(c(DATASET).as_ptr(), &mut d), RarftStatus::Ok);
    d
}

#[test]
fn reward_matches_the_library() {
    unsafe {
        let d = dataset();
        assert_eq!(rarft_dataset_len(d), 2);
        let e = rarft_hash_embedder_new();
        let mut b = RarftRewardBreakdown::default();
        let st = rarft_total_reward(d, e, c("s1").as_ptr(), c(GOOD).as_ptr(), false, &mut b);
        assert_eq!(st, RarftStatus::Ok);

        let samples: Vec<_> = DATASET
            .lines()
            .map(|l| validate_sample(&serde_json::from_str(l).unwrap()).unwrap())
            .collect();
        let refs = PairIndex::build(&samples).references(&samples[0]).unwrap();
        let want = rarft::total_reward(&samples[0], &refs, GOOD, &HashEmbedder::new(), RewardOptions::default())
            .unwrap();
        assert_eq!(b.total, want.total);
        assert_eq!(b.refuse_iou, 1.0);
        assert!((b.format + b.refuse_iou + b.explain + b.correction - b.total).abs() < 1e-12);

        rarft_embedder_free(e);
        rarft_dataset_free(d);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let d = dataset();
        let e = rarft_hash_embedder_new();
        let mut b = RarftRewardBreakdown::default();
        let st = rarft_total_reward(d, e, c("nope").as_ptr(), c(GOOD).as_ptr(), false, &mut b);
        assert_eq!(st, RarftStatus::NotFound);
        assert!(take(rarft_last_error()).contains("nope"));

        let st = rarft_total_reward(ptr::null(), e, c("s1").as_ptr(), c(GOOD).as_ptr(), false, &mut b);
        assert_eq!(st, RarftStatus::NullPointer);

        let bad = [0xffu8, 0];
        let mut out = 0.0;
        assert_eq!(rarft_format_reward(bad.as_ptr().cast(), &mut out), RarftStatus::InvalidUtf8);

        let mut d2 = ptr::null_mut();
        assert_eq!(rarft_dataset_from_jsonl(c("{\"x\":1}").as_ptr(), &mut d2), RarftStatus::ParseError);
        assert!(d2.is_null());
        let mut d3 = ptr::null_mut();
        assert_eq!(rarft_dataset_load(c("/no/such/file").as_ptr(), &mut d3), RarftStatus::IoError);

        rarft_embedder_free(e);
        rarft_dataset_free(d);
        rarft_dataset_free(ptr::null_mut());
        rarft_string_free(ptr::null_mut());
    }
}

#[test]
fn small_helpers() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(rarft_format_reward(c(GOOD).as_ptr(), &mut v), RarftStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(rarft_iou(0.0, 10.0, 5.0, 15.0, &mut v), RarftStatus::Ok);
        assert!((v - 5.0 / 15.0).abs() < 1e-12);
        assert_eq!(rarft_iou(3.0, 1.0, 0.0, 1.0, &mut v), RarftStatus::InvalidArgument);

        let (mut found, mut s, mut t) = (false, 0.0, 0.0);
        let st = rarft_extract_segment(c("roughly 2.5 - 7 seconds").as_ptr(), &mut found, &mut s, &mut t);
        assert_eq!(st, RarftStatus::Ok);
        assert!(found);
        assert_eq!((s, t), (2.5, 7.0));
        rarft_extract_segment(c("not in this video").as_ptr(), &mut found, &mut s, &mut t);
        assert!(!found);

        let r = [1.0, 2.0, 3.0, 4.0];
        let mut a = [0.0; 4];
        assert_eq!(rarft_normalize_advantages(r.as_ptr(), 4, a.as_mut_ptr()), RarftStatus::Ok);
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        assert!(a[3] > a[0]);
    }
}

#[test]
fn offline_evaluation_report() {
    unsafe {
        let d = dataset();
        let outputs = format!(
            "{}\n{}\n",
            serde_json::json!({"sample_id": "s1", "output": GOOD}),
            serde_json::json!({"sample_id": "s1-strong", "output": "<think>x</think><answer>No steak here.</answer><correct>The chef is cooking pasta</correct>"}),
        );
        let mut out = ptr::null_mut();
        assert_eq!(rarft_evaluate_offline(d, c(&outputs).as_ptr(), &mut out), RarftStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["n_samples"], 2);
        assert_eq!(report["ra_miou"], 1.0);

        let mut out = ptr::null_mut();
        let missing = serde_json::json!({"sample_id": "s1", "output": GOOD}).to_string();
        assert_eq!(rarft_evaluate_offline(d, c(&missing).as_ptr(), &mut out), RarftStatus::EvaluationError);
        rarft_dataset_free(d);
    }
}

#[test]
fn simulation_converges_and_is_deterministic() {
    unsafe {
        let mut conv = false;
        let mut t1 = ptr::null_mut();
        assert_eq!(rarft_simulate(ptr::null(), 7, &mut conv, &mut t1), RarftStatus::Ok);
        assert!(conv);
        let mut t2 = ptr::null_mut();
        rarft_simulate(ptr::null(), 7, &mut conv, &mut t2);
        let (a, b) = (take(t1), take(t2));
        assert_eq!(a, b);
        assert!(a.lines().count() > 1);

        assert_eq!(rarft_simulate(ptr::null(), 7, &mut conv, ptr::null_mut()), RarftStatus::Ok);
        assert_eq!(
            rarft_simulate(c("name = 1").as_ptr(), 7, &mut conv, ptr::null_mut()),
            RarftStatus::ParseError
        );
    }
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/rarft.h");
    for name in [
        "rarft_last_error",
        "rarft_string_free",
        "rarft_hash_embedder_new",
        "rarft_dataset_from_jsonl",
        "rarft_dataset_load",
        "rarft_total_reward",
        "rarft_evaluate_offline",
        "rarft_simulate",
        "RARFT_STATUS_OK",
        "typedef struct RarftDataset RarftDataset",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
