use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nms-disloc"))
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/aapl_20160107_0948.csv").display().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn detect_writes_segments_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let status =
        bin().args(["detect", "--input", &fixture(), "--snapshots", "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    let segs = read(dir.path(), "segments.csv");
    let rows: Vec<&str> = segs.lines().skip(1).collect();
    assert!(rows.iter().any(|r| r.contains(",offer,") && r.contains(",1863,")), "{segs}");
    assert!(read(dir.path(), "histogram.csv").lines().count() > 1);
    assert!(read(dir.path(), "snapshots.csv").lines().count() > 1);
}

#[test]
fn roc_reports_net_and_total() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin().args(["roc", "--input", &fixture(), "--out"]).arg(dir.path()).status().unwrap();
    assert!(status.success());
    let agg = read(dir.path(), "aggregate.csv");
    assert!(agg.starts_with("row,statistic,value"));
    assert!(agg.lines().any(|l| l == "11,Net Opportunity Cost,17.80"), "{agg}");
    let trades = read(dir.path(), "trades_roc.csv");
    // One row per trade without a record, one per record otherwise.
    assert_eq!(trades.lines().count() - 1, 97 - 10 + 11);
}

#[test]
fn config_file_values_yield_to_explicit_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, format!("input = {}\nthreshold_us = 5000\n", fixture())).unwrap();
    let out = bin()
        .args(["stats", "--threshold-us", "100", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path(), "table1.csv").starts_with("row,statistic,value"));
    assert!(read(dir.path(), "table3.csv").lines().count() > 1);
    // The explicit threshold wins over the config file's.
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Duration > 100 us"), "{text}");
    assert!(!text.contains("Duration > 5000 us"), "{text}");
}

#[test]
fn simulate_then_detect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["simulate", "--seed", "3", "--orders", "2000", "--sip-processing-us", "20", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let events = dir.path().join("events.csv");
    assert!(read(dir.path(), "truth.csv").lines().count() > 1);
    let status = bin()
        .args(["--threads", "2", "detect", "--coalesce-us", "--input"])
        .arg(&events)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let usage = bin().args(["detect", "--no-such-flag"]).output().unwrap();
    assert_eq!(usage.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "ts_us,feed\nnot,a,record\n").unwrap();
    let data = bin().args(["detect", "--input"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(data.status.code(), Some(1));
}

#[test]
fn outputs_are_byte_identical_across_thread_counts() {
    let gen = tempfile::tempdir().unwrap();
    let status =
        bin().args(["simulate", "--seed", "11", "--orders", "4000", "--out"]).arg(gen.path()).status().unwrap();
    assert!(status.success());
    let events = gen.path().join("events.csv");
    let run = |threads: &str, cmd: &str| {
        let dir = tempfile::tempdir().unwrap();
        let status = bin()
            .args(["--threads", threads, cmd, "--input"])
            .arg(&events)
            .arg("--out")
            .arg(dir.path())
            .status()
            .unwrap();
        assert!(status.success());
        dir
    };
    for (cmd, files) in [
        ("detect", &["segments.csv", "histogram.csv"][..]),
        ("roc", &["trades_roc.csv", "aggregate.csv", "aggregate_by_key.csv"][..]),
        ("circle", &["nodes.csv", "edges.csv", "components.csv"][..]),
    ] {
        let a = run("1", cmd);
        let b = run("4", cmd);
        for f in files {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{cmd} {f}");
        }
    }
}
