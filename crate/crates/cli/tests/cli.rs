use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use interflow::config::RunConfig;
use interflow::features::{feature_dim, FeatureVector};
use interflow::pipeline::write_features_csv;

fn interflow(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interflow"))
        .args(args)
        .current_dir(dir)
        .env("INTERFLOW_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = interflow(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn suite(dir: &Path, per_profile: &str) -> PathBuf {
    ok(dir, &["synth", "--suite", "suite", "--per-profile", per_profile, "--seed", "5"]);
    dir.join("suite/manifest.csv")
}

fn toml_table(path: &Path) -> toml::Table {
    fs::read_to_string(path).unwrap().parse().unwrap()
}

#[test]
fn extract_train_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    suite(dir, "6");

    let out = ok(dir, &["extract", "--manifest", "suite/manifest.csv", "--features", "a.csv"]);
    assert!(stderr(&out).contains("feature dimension 132"), "{}", stderr(&out));
    ok(dir, &["extract", "--manifest", "suite/manifest.csv", "--features", "b.csv"]);
    let (a, b) = (fs::read_to_string(dir.join("a.csv")).unwrap(), fs::read_to_string(dir.join("b.csv")).unwrap());
    assert_eq!(a.replace("a.csv", ""), b.replace("b.csv", ""));
    let header = a.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("capture,chunk_start,label,f0,f1"));
    assert!(header.ends_with(",f131"));

    ok(dir, &["train", "--features", "a.csv", "--model", "out/model.json", "--n-trees", "40"]);
    let report = toml_table(&dir.join("out/train_report.toml"));
    let accuracy = report["metrics"]["accuracy"].as_float().unwrap();
    assert!(accuracy >= 0.9, "accuracy {accuracy}");

    ok(dir, &["train", "--features", "a.csv", "--model", "out2/model.json", "--n-trees", "40"]);
    let again = toml_table(&dir.join("out2/train_report.toml"));
    assert_eq!(report["metrics"], again["metrics"]);

    let out = ok(
        dir,
        &["predict", "--model", "out/model.json", "--capture", "suite/chatty-voip-like-000.pcap", "--out", "p.csv"],
    );
    assert!(stderr(&out).contains("predicted"));
    let text = fs::read_to_string(dir.join("p.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..3], &["capture", "chunk_start", "predicted"]);
    assert!(header[3..].iter().all(|h| h.starts_with("vote_")));
    let mut n = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[2], "chatty-voip-like");
        let total: f64 = fields[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        n += 1;
    }
    assert!(n > 0);

    ok(dir, &["predict", "--model", "out/model.json", "--features", "a.csv", "--out", "q.csv"]);

    let out = interflow(
        dir,
        &["predict", "--model", "out/model.json", "--capture", "suite/chatty-voip-like-000.pcap", "--signal-bins", "32"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("n_bins: 60 vs 32"), "{}", stderr(&out));
}

#[test]
fn train_reports_by_chunk_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = RunConfig::default();
    let rows: Vec<FeatureVector> = (0..100)
        .map(|i| FeatureVector {
            row: (0..feature_dim(config.n_bins)).map(|j| ((i * 7 + j) % 13) as f64 + (i % 3) as f64 * 10.0).collect(),
            label: format!("k{}", i % 3),
            capture: format!("c{}", i / 10),
            chunk_start: (i % 10) as f64 * 20.0,
        })
        .collect();
    let mut buf = Vec::new();
    write_features_csv(&mut buf, &rows, &config).unwrap();
    fs::write(dir.join("f.csv"), buf).unwrap();

    ok(
        dir,
        &["train", "--features", "f.csv", "--model", "m.json", "--split-mode", "by-chunk", "--split-ratio", "0.8", "--n-trees", "10"],
    );
    let report = toml_table(&dir.join("train_report.toml"));
    assert_eq!(report["n_train"].as_integer(), Some(80));
    assert_eq!(report["n_test"].as_integer(), Some(20));
    assert!(report["config"].get("window").is_some());
}

#[test]
fn manifest_failures_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    suite(dir, "1");
    let mut manifest = fs::read_to_string(dir.join("suite/manifest.csv")).unwrap();
    manifest.push_str("missing.pcap,ghost\n");
    fs::write(dir.join("suite/partial.csv"), manifest).unwrap();

    let out = ok(dir, &["extract", "--manifest", "suite/partial.csv", "--features", "f.csv"]);
    assert!(stderr(&out).contains("missing.pcap"));
    assert!(stderr(&out).contains("captures 3 "));

    fs::write(dir.join("none.csv"), "path,label\nnope.pcap,a\nalso-nope.pcap,b\n").unwrap();
    let out = interflow(dir, &["extract", "--manifest", "none.csv", "--features", "g.csv"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(dir.join("bad.csv"), "capture,chunk_start,label,f0,fx\nc,0,a,1,2\n").unwrap();
    let out = interflow(dir, &["train", "--features", "bad.csv", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("\"fx\""), "{}", stderr(&out));

    let out = interflow(dir, &["extract", "--manifest", "suite/manifest.csv", "--window", "10", "--overlap", "10"]);
    assert_eq!(out.status.code(), Some(2));

    let out = interflow(
        dir,
        &["grid", "--manifest", "suite/manifest.csv", "--windows", "10", "--overlaps", "30", "--report-dir", "g"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    suite(dir, "2");
    fs::write(dir.join("run.toml"), "window = 50.0\noverlap = 20.0\nn_bins = 16\n").unwrap();
    ok(
        dir,
        &["extract", "--config", "run.toml", "--overlap", "5", "--manifest", "suite/manifest.csv", "--features", "f.csv"],
    );
    let text = fs::read_to_string(dir.join("f.csv")).unwrap();
    let config_line = text.lines().find(|l| l.starts_with("# config ")).unwrap();
    let embedded: RunConfig = serde_json::from_str(&config_line["# config ".len()..]).unwrap();
    assert_eq!((embedded.window, embedded.overlap, embedded.n_bins), (50.0, 5.0, 16));

    fs::write(dir.join("typo.toml"), "windwo = 3\n").unwrap();
    let out = interflow(dir, &["extract", "--config", "typo.toml", "--manifest", "suite/manifest.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singleton_grid_matches_train_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    suite(dir, "4");
    let common = ["--window", "30", "--overlap", "10", "--n-trees", "25", "--seed", "9"];
    let mut args = vec!["extract", "--manifest", "suite/manifest.csv", "--features", "f.csv"];
    args.extend(common);
    ok(dir, &args);
    ok(dir, &["train", "--features", "f.csv", "--model", "m.json", "--n-trees", "25", "--seed", "9"]);
    let train = toml_table(&dir.join("train_report.toml"));

    let out = ok(
        dir,
        &[
            "grid", "--manifest", "suite/manifest.csv", "--windows", "30", "--overlaps", "10", "--report-dir", "g",
            "--n-trees", "25", "--seed", "9",
        ],
    );
    assert!(stderr(&out).contains("1 cells, 0 skipped"));
    let best = toml_table(&dir.join("g/best.toml"));
    assert_eq!(train["metrics"], best["metrics"]);
    let grid = fs::read_to_string(dir.join("g/grid.csv")).unwrap();
    assert_eq!(grid.lines().filter(|l| !l.starts_with('#')).count(), 2);
}

#[test]
fn synth_single_profile_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let profile = interflow::synth::TrafficProfile::builtin("bulk-download").unwrap();
    fs::write(dir.join("bulk.toml"), profile.to_toml()).unwrap();
    ok(dir, &["synth", "--profile", "bulk.toml", "--seed", "3", "--out", "a.pcap"]);
    ok(dir, &["synth", "--profile", "bulk-download", "--seed", "3", "--out", "b.pcap"]);
    assert_eq!(fs::read(dir.join("a.pcap")).unwrap(), fs::read(dir.join("b.pcap")).unwrap());
    let capture = interflow::ingest::parse_capture(&dir.join("a.pcap")).unwrap();
    assert!(!capture.packets.is_empty());

    let out = interflow(dir, &["synth", "--profile", "no-such-profile", "--out", "c.pcap"]);
    assert_eq!(out.status.code(), Some(2));
    let out = ok(dir, &["synth", "--list-profiles"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("bursty-web-like"));
}
