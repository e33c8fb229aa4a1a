use std::ffi::{c_char, CStr, CString};
use std::ptr;

use perspectives_ffi::*;

const CBO_QUOTE: &str = "The Congressional Budget Office said in August that if the cost-sharing subsidies were cut off, premiums would shoot up 20 percent next year, and federal budget deficits would increase by $194 billion in the coming decade.";

fn config() -> CString {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/engine.toml");
    CString::new(path).unwrap()
}

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { persp_string_free(s) };
    out
}

fn last_error() -> Option<String> {
    let p = persp_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string())
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn engine_round_trip() {
    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { persp_engine_open(config().as_ptr(), &mut engine) }, PerspStatus::Ok);
    assert!(!engine.is_null());

    let mut json = ptr::null_mut();
    let text = c(CBO_QUOTE);
    assert_eq!(unsafe { persp_engine_suggest_json(engine, text.as_ptr(), &mut json) }, PerspStatus::Ok);
    let body: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
    let phrases: Vec<&str> = body["measurements"][0]["options"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["phrase"].as_str().unwrap())
        .collect();
    assert_eq!(
        phrases,
        [
            "about $600 per person in the US",
            "about 2 times the value of the net worth of Bill Gates",
            "about 4% of the United States Federal budget in 2020",
        ]
    );
    assert_eq!(last_error(), None);

    let blank = c("   ");
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { persp_engine_suggest_json(engine, blank.as_ptr(), &mut json) }, PerspStatus::InvalidArgument);
    assert!(json.is_null());
    assert!(last_error().is_some());

    unsafe { persp_engine_free(engine) };
    unsafe { persp_engine_free(ptr::null_mut()) };
}

#[test]
fn engine_is_shareable_across_threads() {
    let mut engine = ptr::null_mut();
    assert_eq!(unsafe { persp_engine_open(config().as_ptr(), &mut engine) }, PerspStatus::Ok);
    let addr = engine as usize;
    let outputs: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..8)
            .map(|_| {
                s.spawn(move || {
                    let text = c("It cost $2 billion.");
                    let mut json = ptr::null_mut();
                    let status = unsafe { persp_engine_suggest_json(addr as *const PerspEngine, text.as_ptr(), &mut json) };
                    assert_eq!(status, PerspStatus::Ok);
                    take(json)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    unsafe { persp_engine_free(engine) };
}

#[test]
fn open_reports_missing_config() {
    let mut engine = ptr::null_mut();
    let path = c("/nonexistent/engine.toml");
    let status = unsafe { persp_engine_open(path.as_ptr(), &mut engine) };
    assert_eq!(status, PerspStatus::Io);
    assert!(engine.is_null());
    assert!(last_error().unwrap().contains("No such file"));

    assert_eq!(unsafe { persp_engine_open(ptr::null(), &mut engine) }, PerspStatus::NullArgument);
    assert_eq!(unsafe { persp_engine_open(path.as_ptr(), ptr::null_mut()) }, PerspStatus::NullArgument);
}

#[test]
fn extract_counts_characters() {
    let text = c("Café owners paid $1.5 million.");
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { persp_extract_json(text.as_ptr(), &mut json) }, PerspStatus::Ok);
    let found: serde_json::Value = serde_json::from_str(&take(json)).unwrap();
    assert_eq!(found[0]["raw"], "$1.5 million");
    assert_eq!(found[0]["span"]["start"], 17);
    assert_eq!(found[0]["span"]["end"], 29);
    assert_eq!(found[0]["value"], "1500000");
}

#[test]
fn formatting_helpers() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { persp_per_capita(c("194e9").as_ptr(), 325_000_000, ptr::null(), &mut out) }, PerspStatus::Ok);
    assert_eq!(take(out), "about $600 per person in the US");

    let suffix = c("per resident");
    assert_eq!(unsafe { persp_per_capita(c("650000").as_ptr(), 1000, suffix.as_ptr(), &mut out) }, PerspStatus::Ok);
    assert_eq!(take(out), "about $650 per resident");

    let phrase = c("the United States military budget");
    let status = unsafe { persp_format_multiplier(c("100000000").as_ptr(), c("7e11").as_ptr(), phrase.as_ptr(), &mut out) };
    assert_eq!(status, PerspStatus::Ok);
    assert_eq!(take(out), "about 0.01% of the United States military budget");

    assert_eq!(unsafe { persp_round_sig(c("12345.678").as_ptr(), 2, &mut out) }, PerspStatus::Ok);
    assert_eq!(take(out), "12000");
    assert_eq!(unsafe { persp_round_sig(c("0.0012345").as_ptr(), 3, &mut out) }, PerspStatus::Ok);
    assert_eq!(take(out), "0.00123");
}

#[test]
fn bad_arguments_set_last_error() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { persp_round_sig(c("lots").as_ptr(), 2, &mut out) }, PerspStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().unwrap().contains("lots"));

    assert_eq!(unsafe { persp_per_capita(c("-5").as_ptr(), 10, ptr::null(), &mut out) }, PerspStatus::InvalidArgument);
    assert_eq!(unsafe { persp_per_capita(c("5").as_ptr(), 0, ptr::null(), &mut out) }, PerspStatus::InvalidArgument);

    let bad = [0xffu8, 0xfe, 0];
    let status = unsafe { persp_extract_json(bad.as_ptr().cast(), &mut out) };
    assert_eq!(status, PerspStatus::InvalidUtf8);

    assert_eq!(unsafe { persp_round_sig(c("5").as_ptr(), 2, &mut out) }, PerspStatus::Ok);
    assert_eq!(last_error(), None);
    unsafe { persp_string_free(out) };
    unsafe { persp_string_free(ptr::null_mut()) };
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(persp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_function() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/perspectives.h")).unwrap();
    for name in [
        "persp_engine_open",
        "persp_engine_free",
        "persp_engine_suggest_json",
        "persp_extract_json",
        "persp_per_capita",
        "persp_format_multiplier",
        "persp_round_sig",
        "persp_last_error",
        "persp_string_free",
        "persp_version",
        "typedef struct PerspEngine PerspEngine;",
        "PERSP_STATUS_DEGRADED = 1",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
