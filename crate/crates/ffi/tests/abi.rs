use std::ffi::{CStr, CString};
use std::fs;
use std::path::Path;
use std::process::Command;

use nms_disloc_ffi::*;

fn fixture_lines() -> Vec<CString> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/aapl_20160107_0948.csv");
    fs::read_to_string(path).unwrap().lines().map(|l| CString::new(l).unwrap()).collect()
}

fn last_error() -> String {
    let p = nms_last_error_message();
    assert!(!p.is_null());
    let text = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { nms_string_free(p) };
    text
}

#[test]
fn fixture_through_the_c_abi() {
    unsafe {
        let eng = nms_engine_new(false);
        for line in fixture_lines() {
            assert_eq!(nms_engine_push_line(eng, line.as_ptr()), NmsStatus::Ok);
        }
        let mut n = 0usize;
        assert_eq!(nms_engine_segment_count(eng, &mut n), NmsStatus::WrongState);
        assert_eq!(nms_engine_finish(eng, NMS_END_AT_LAST_EVENT), NmsStatus::Ok);
        assert_eq!(nms_engine_finish(eng, NMS_END_AT_LAST_EVENT), NmsStatus::WrongState);
        assert_eq!(nms_engine_segment_count(eng, &mut n), NmsStatus::Ok);
        assert_eq!(n, 2);

        let mut seg = NmsSegment::default();
        let offer = (0..n)
            .map(|i| {
                assert_eq!(nms_engine_segment(eng, i, &mut seg), NmsStatus::Ok);
                seg
            })
            .find(|s| s.side == 1)
            .unwrap();
        assert_eq!(offer.end_us - offer.start_us, 1863);
        assert_eq!(offer.max_mag_e4, 600);
        assert!(offer.actionable && !offer.large && !offer.truncated);
        assert_eq!(CStr::from_ptr(offer.symbol.as_ptr()).to_str().unwrap(), "AAPL");
        assert_eq!(nms_engine_segment(eng, n, &mut seg), NmsStatus::OutOfRange);

        let mut totals = NmsRocTotals::default();
        assert_eq!(nms_engine_roc_totals(eng, &mut totals), NmsStatus::Ok);
        assert_eq!(totals.trades, 97);
        assert_eq!(totals.net_roc_e4, 178_000);
        assert_eq!(totals.total_roc_e4, 418_000);
        nms_engine_free(eng);
    }
}

#[test]
fn thresholds_change_flags() {
    unsafe {
        let eng = nms_engine_new(true);
        assert_eq!(nms_engine_set_thresholds(eng, 5000, 100), NmsStatus::Ok);
        for line in fixture_lines() {
            assert_eq!(nms_engine_push_line(eng, line.as_ptr()), NmsStatus::Ok);
        }
        assert_eq!(nms_engine_finish(eng, NMS_END_AT_LAST_EVENT), NmsStatus::Ok);
        let mut seg = NmsSegment::default();
        assert_eq!(nms_engine_segment(eng, 0, &mut seg), NmsStatus::Ok);
        assert!(!seg.actionable);
        nms_engine_free(eng);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        assert_eq!(nms_engine_push_line(std::ptr::null_mut(), c"x".as_ptr()), NmsStatus::NullPointer);
        let eng = nms_engine_new(false);
        assert_eq!(nms_engine_push_line(eng, std::ptr::null()), NmsStatus::NullPointer);
        assert_eq!(nms_engine_push_line(eng, c"garbage".as_ptr()), NmsStatus::Parse);
        assert!(!last_error().is_empty());

        let lines = fixture_lines();
        assert_eq!(nms_engine_push_line(eng, lines[5].as_ptr()), NmsStatus::Ok);
        assert_eq!(nms_engine_push_line(eng, lines[1].as_ptr()), NmsStatus::OutOfOrder);
        assert!(last_error().contains("earlier"));

        let bad = [0xffu8, 0];
        assert_eq!(nms_engine_push_line(eng, bad.as_ptr().cast()), NmsStatus::InvalidUtf8);
        nms_engine_free(eng);
        nms_engine_free(std::ptr::null_mut());
        nms_string_free(std::ptr::null_mut());
    }
}

/// Compiles a C program against the generated header and static library.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target").join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = target.join("libnms_disloc_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    fs::write(
        &src,
        r#"#include <stdio.h>
#include "nms_disloc.h"
int main(int argc, char **argv) {
    NmsEngine *e = nms_engine_new(false);
    FILE *f = fopen(argv[1], "r");
    char line[512];
    while (fgets(line, sizeof line, f)) {
        if (nms_engine_push_line(e, line) != NMS_STATUS_OK) return 3;
    }
    fclose(f);
    if (nms_engine_finish(e, NMS_END_AT_LAST_EVENT) != NMS_STATUS_OK) return 4;
    size_t n = 0;
    nms_engine_segment_count(e, &n);
    NmsRocTotals t;
    nms_engine_roc_totals(e, &t);
    printf("%zu %lld\n", n, (long long)t.net_roc_e4);
    nms_engine_free(e);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let Ok(status) = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
    else {
        eprintln!("skipping: no C compiler");
        return;
    };
    assert!(status.success());
    let fixture = manifest.join("../core/tests/data/aapl_20160107_0948.csv");
    let out = Command::new(&exe).arg(fixture).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2 178000");
}
