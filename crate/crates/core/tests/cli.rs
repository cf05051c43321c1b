use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofdm-loading"))
        .args(args)
        .env_remove("OFDM_LOADING_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Field `name` of the result row printed by `load`.
fn row_field(out: &str, name: &str) -> String {
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    row[k].to_string()
}

#[test]
fn load_is_deterministic() {
    let a = bin(&["load", "--seed", "1", "--snr-db", "20"]);
    let b = bin(&["load", "--seed", "1", "--snr-db", "20"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(row_field(&stdout(&a), "case"), "PowerInactive");
}

#[test]
fn cap_binds_on_strong_channel() {
    let o = bin(&["load", "--pth", "1e-4", "--snr-db", "30"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(row_field(&out, "case"), "PowerActive");
    assert!(out.contains("power_ok            true"), "{out}");
    // the continuous solution sits on the cap
    let slack: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("power_slack_W"))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(slack.abs() < 1e-13, "{slack}");
}

#[test]
fn milliwatt_suffix_matches_watts() {
    let a = bin(&["load", "--pth", "0.1mW", "--snr-db", "30"]);
    let b = bin(&["load", "--pth", "1e-4", "--snr-db", "30"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(bin(&["load", "--alpha", "1.5"]).status.code(), Some(1));
    assert_eq!(bin(&["sweep", "--figure", "5"]).status.code(), Some(1));
    assert_eq!(bin(&["load", "--subcarriers", "0"]).status.code(), Some(1));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["--help"]).status.code(), Some(0));
}

#[test]
fn help_lists_defaults() {
    let out = stdout(&bin(&["load", "--help"]));
    for d in ["[default: 0.5]", "[default: 0.0001]", "[default: 128]", "[default: 100000]", "[default: 10000]"] {
        assert!(out.contains(d), "missing {d}");
    }
}

#[test]
fn selftest_passes_and_catches_corruption() {
    let ok = bin(&["selftest", "--quick"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    let bad = bin(&["selftest", "--quick", "--corrupt-jacobian"]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn sweep_writes_run_directory_with_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ofdm-loading"))
        .args(["sweep", "--kind", "alpha", "--grid", "0.3,0.7", "--trials", "3", "--subcarriers", "16"])
        .env("OFDM_LOADING_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let runs: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    let dir = &runs[0];
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("run-"));
    let cfg = std::fs::read_to_string(dir.join("run-config.txt")).unwrap();
    assert!(cfg.contains("kind = alpha"), "{cfg}");
    let agg = std::fs::read_to_string(dir.join("alpha_aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);

    // the echoed config reproduces the run
    let again = tmp.path().join("again");
    let o = Command::new(env!("CARGO_BIN_EXE_ofdm-loading"))
        .arg("--config")
        .arg(dir.join("run-config.txt"))
        .args(["sweep", "--run-dir"])
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(agg, std::fs::read_to_string(again.join("alpha_aggregate.csv")).unwrap());
}

#[test]
fn channel_dump_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = tmp.path().join("ch.csv");
    let d = dump.to_str().unwrap();
    let a = bin(&["load", "--seed", "3", "--trial", "2", "--dump-channel", d]);
    let b = bin(&["load", "--trial", "2", "--channel-file", d]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(row_field(&stdout(&a), "throughput_bits"), row_field(&stdout(&b), "throughput_bits"));
    assert_eq!(row_field(&stdout(&a), "case"), row_field(&stdout(&b), "case"));
}

#[test]
fn trace_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("trace.csv");
    let o = bin(&["load", "--subcarriers", "16", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.lines().count() > 2);
}
