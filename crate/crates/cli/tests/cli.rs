use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const LISTING: &str = include_str!("../../../queries/listing1.rq");

const SCENARIO: &str = r#"
name = "ferry"
seed = 11
run_length = "30m"

[query]
step = "5s"

[[zones]]
name = "town"
pixel_count = 40
origin = [30000, 113000]
columns = 8
density = 21
lost_ratio = 0.01

[[zones]]
name = "river"
pixel_count = 8
origin = [29990, 113000]
density = 0

[[incidents]]
lat_milli = 29990
lon_milli = 113004
phone_count = 60
start = "10m"
"#;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lost-silence"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Runs the ferry scenario into `dir/<name>` with extra flags.
fn run_ferry(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let config = write(dir, "ferry.toml", SCENARIO);
    let out = dir.join(name);
    let mut args = vec!["run", "--config", s(&config), "--out", s(&out)];
    args.extend_from_slice(extra);
    let result = cli(&args);
    assert!(result.status.success(), "{}", stderr(&result));
    out
}

#[test]
fn parse_query_prints_canonical_form() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "listing.rq", LISTING);
    let out = cli(&["parse-query", s(&path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("[RANGE 30m STEP 5s]"), "{text}");
    assert!(text.contains("HAVING (?counter > 10)"), "{text}");

    // The printed form parses back to itself.
    let again_path = write(dir.path(), "again.rq", &text);
    let again = cli(&["parse-query", s(&again_path)]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn parse_query_errors_carry_positions() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.rq", "");
    let out = cli(&["parse-query", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("1:1"), "{}", stderr(&out));

    let no_window = LISTING.replace(" [RANGE 30m STEP 5s]", "");
    let path = write(dir.path(), "nowindow.rq", &no_window);
    let out = cli(&["parse-query", s(&path)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("missing window"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write(dir.path(), "bad.toml", &format!("{SCENARIO}\nspeed_of_light = 3\n"));
    let out = cli(&["run", "--config", s(&config), "--out", s(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("speed_of_light"), "{}", stderr(&out));
}

#[test]
fn run_writes_artifacts_and_replay_matches() {
    let dir = TempDir::new().unwrap();
    let out = run_ferry(dir.path(), "a", &[]);
    for name in [
        "events.nt",
        "results.csv",
        "alerts.jsonl",
        "series.csv",
        "pixels.csv",
        "metrics.json",
        "config.resolved.toml",
        "query.rq",
        "blind_zones.csv",
        "manifest.json",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["fail_to_report"], 0);
    assert_eq!(metrics["incidents"][0]["peak_counter"], 60);
    let alerts = fs::read_to_string(out.join("alerts.jsonl")).unwrap();
    assert!(!alerts.is_empty());

    let replayed = dir.path().join("replayed.jsonl");
    let result = cli(&[
        "replay",
        "--log",
        s(&out.join("events.nt")),
        "--query",
        s(&out.join("query.rq")),
        "--alerts",
        s(&replayed),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert_eq!(fs::read_to_string(&replayed).unwrap(), alerts);

    // The resolved config reproduces the run.
    let again = dir.path().join("b");
    let result = cli(&[
        "run",
        "--config",
        s(&out.join("config.resolved.toml")),
        "--out",
        s(&again),
    ]);
    assert!(result.status.success(), "{}", stderr(&result));
    for name in ["events.nt", "alerts.jsonl", "metrics.json", "results.csv"] {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn global_mode_and_overrides() {
    let dir = TempDir::new().unwrap();
    let per_pixel = run_ferry(dir.path(), "pp", &[]);
    let global = run_ferry(dir.path(), "global", &["--query-mode", "global"]);
    assert_eq!(
        fs::read(per_pixel.join("alerts.jsonl")).unwrap(),
        fs::read(global.join("alerts.jsonl")).unwrap()
    );
    let coarse = run_ferry(dir.path(), "coarse", &["--step", "20s", "--seed", "12"]);
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(coarse.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["step_ms"], 20_000);
    assert_eq!(metrics["seed"], 12);
    let query = fs::read_to_string(coarse.join("query.rq")).unwrap();
    assert!(query.contains("STEP 20s"), "{query}");
}

#[test]
fn replay_respects_blind_zones_and_threshold() {
    let dir = TempDir::new().unwrap();
    let out = run_ferry(dir.path(), "a", &[]);
    let log = out.join("events.nt");

    let blind = write(dir.path(), "blind.csv", "lat_milli,lon_milli\n29990,113004\n");
    let result = cli(&["replay", "--log", s(&log), "--blind-zones", s(&blind)]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(result.stdout.is_empty(), "{}", String::from_utf8_lossy(&result.stdout));

    let strict = fs::read_to_string(out.join("query.rq"))
        .unwrap()
        .replace("(?counter > 10)", "(?counter > 500)");
    let query = write(dir.path(), "strict.rq", &strict);
    let result = cli(&["replay", "--log", s(&log), "--query", s(&query)]);
    assert!(result.status.success(), "{}", stderr(&result));
    assert!(result.stdout.is_empty());
}

#[test]
fn replay_reports_malformed_lines() {
    let dir = TempDir::new().unwrap();
    let log = write(
        dir.path(),
        "bad.nt",
        "# run_length_ms=10000\n<http://a> <http://b> <http://c> . # t=5\n<http://a> <http://b> oops # t=6\n",
    );
    let result = cli(&["replay", "--log", s(&log)]);
    assert_eq!(result.status.code(), Some(3));
    assert!(stderr(&result).contains("line 3"), "{}", stderr(&result));
}

#[test]
fn report_summarizes_a_run() {
    let dir = TempDir::new().unwrap();
    let out = run_ferry(dir.path(), "a", &[]);
    let result = cli(&["report", s(&out)]);
    assert!(result.status.success(), "{}", stderr(&result));
    let text = String::from_utf8(result.stdout).unwrap();
    assert!(text.contains("fail_to_report: 0"), "{text}");
    assert!(out.join("plots/series_29990_113004.dat").exists());

    let empty = TempDir::new().unwrap();
    let result = cli(&["report", s(empty.path())]);
    assert_eq!(result.status.code(), Some(3));
}
