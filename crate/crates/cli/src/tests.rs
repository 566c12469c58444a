use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Exit code and stdout/stderr text of one invocation.
fn dlmac(args: &[&str]) -> (u8, String) {
    run(std::iter::once("dlmac").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Full-band raw capture: 2400..2482 MHz, quiet except a square wave on
/// channel 6's sub-bands.
fn write_raw(path: &Path, rows: usize) {
    let mut out = String::from("t_us");
    for j in 0..83 {
        write!(out, ",f{}", 2400 + j).unwrap();
    }
    out.push('\n');
    for l in 0..rows {
        write!(out, "{}", l * 100).unwrap();
        for j in 0..83 {
            let on = (2427..=2446).contains(&(2400 + j)) && (l / 20) % 2 == 1;
            write!(out, ",{}", if on { -60.0 } else { -100.0 }).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

#[test]
fn preprocess_fixture_channel_6() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let raw = fixture("raw_100.csv");
    for p in [&a, &b] {
        let out = dlmac(&["preprocess", "--raw", s(&raw), "--channel", "6", "--out", s(p)]);
        assert_eq!(out.0, 0, "{}", out.1);
    }
    // 100 samples of 100 us on 9 us slots
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count() - 1, 100 * 100 / 9);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let raw = fixture("raw_100.csv");
    let out = dlmac(&["preprocess", "--raw", s(&raw), "--channel", "14", "--out", "x.csv"]);
    assert_eq!(out.0, 2);
    assert_eq!(dlmac(&["simulate", "--policy", "aloha", "--out", "x"]).0, 2);
    assert_eq!(dlmac(&["frobnicate"]).0, 2);
    assert_eq!(dlmac(&["compare", "--out", "x"]).0, 2);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    let out = dlmac(&["preprocess", "--raw", s(&missing), "--channel", "6", "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.0, 1);
    let t = dir.path().join("t.bin");
    assert_eq!(dlmac(&["generate", "--out", s(&t), "--seconds", "0.01"]).0, 0);
    let out = dlmac(&["simulate", "--trace", s(&t), "--policy", "gopt", "--out", s(&dir.path().join("sim"))]);
    assert_eq!(out.0, 1);
    assert!(out.1.contains("too short"));
}

#[test]
fn label_train_simulate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    for (seed, name) in [("1", "a.bin"), ("2", "b.bin")] {
        let out = dlmac(&["generate", "--out", s(&p(name)), "--seconds", "1.5", "--jitter", "20", "--seed", seed]);
        assert_eq!(out.0, 0);
    }
    let out = dlmac(&["label", "--trace", s(&p("a.bin")), "--out", s(&p("a.csv")), "--stride", "100"]);
    assert_eq!(out.0, 0);
    let rows = std::fs::read_to_string(p("a.csv")).unwrap().lines().count() - 1;
    assert!(out.1.starts_with(&format!("{rows} examples")));

    let out = dlmac(&[
        "train", "--trace", s(&p("a.bin")), "--trace", s(&p("b.bin")), "--out", s(&p("m/model.bin")),
        "--epochs", "1", "--width-divisor", "8", "--stride", "64",
    ]);
    assert_eq!(out.0, 0, "{}", out.1);
    assert!(out.1.contains("val accuracy"));
    let history = std::fs::read_to_string(p("m/model.history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let no_model = dlmac(&["simulate", "--trace", s(&p("a.bin")), "--policy", "dl-mac", "--out", s(&p("x"))]);
    assert_eq!(no_model.0, 2);
    let out = dlmac(&[
        "simulate", "--trace", s(&p("a.bin")), "--policy", "dl-mac", "--model", s(&p("m/model.bin")),
        "--window", "0.25", "--lambda", "1.0", "--out", s(&p("sim")), "--event-log", s(&p("events.csv")),
    ]);
    assert_eq!(out.0, 0, "{}", out.1);
    let series = std::fs::read_to_string(p("sim/series.csv")).unwrap();
    assert!(series.starts_with("window,start_s,throughput_bps\n"));
    assert!(std::fs::read_to_string(p("sim/summary.toml")).unwrap().contains("mean_throughput"));
    assert!(std::fs::read_to_string(p("events.csv")).unwrap().contains("transmit"));
}

#[test]
fn simulate_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    assert_eq!(dlmac(&["generate", "--out", s(&t), "--seconds", "0.5"]).0, 0);
    let cfg = dir.path().join("sim.toml");
    std::fs::write(&cfg, format!("policy = \"csma-iwl\"\nmeasure_window_s = 0.1\ntrace = {:?}\n", s(&t))).unwrap();
    let out = dlmac(&["simulate", "--config", s(&cfg), "--seed", "4", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.0, 0, "{}", out.1);
    assert!(out.1.starts_with("csma-iwl"));
    std::fs::write(&cfg, "lamda = 1.0\n").unwrap();
    assert_eq!(dlmac(&["simulate", "--config", s(&cfg), "--out", "o"]).0, 2);
}

#[test]
fn generalization_over_all_channels() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    write_raw(&raw, 400);
    let out_dir = dir.path().join("gen");
    let mut args = vec!["compare", "--raw", s(&raw)];
    let channels: Vec<String> = (1..=13).map(|c| c.to_string()).collect();
    for c in &channels {
        args.extend(["--channel", c.as_str()]);
    }
    args.extend([
        "--policy", "gopt", "--policy", "csma-arf", "--runs", "2", "--lambda", "2.0", "--window", "0.005",
        "--out", s(&out_dir),
    ]);
    let out = dlmac(&args);
    assert_eq!(out.0, 0, "{}", out.1);
    let table = std::fs::read_to_string(out_dir.join("channels.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "eval,gopt_mean_bps,gopt_std_bps,csma-arf_mean_bps,csma-arf_std_bps");
    assert_eq!(lines.len(), 14);
    for (line, c) in lines[1..].iter().zip(1..) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[0], format!("ch{c}"));
        let gopt: f64 = cols[1].parse().unwrap();
        let arf: f64 = cols[3].parse().unwrap();
        assert!(gopt >= arf, "{line}");
    }
    assert!(out_dir.join("ch6/summary.csv").exists());
}
