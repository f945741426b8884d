use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conc-nls"))
        .args(args)
        .env("CONC_NLS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let v = run(&["--version"]);
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn malformed_arguments_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["spectrum", "--sigma", "abc"]).status.code(), Some(1));
    assert_eq!(run(&["dispersive", "--times", "1,-2"]).status.code(), Some(1));
}

#[test]
fn out_of_band_scan_exits_three() {
    let out = run(&["scan", "--sigma-min", "0.6", "--sigma-max", "0.9", "--steps", "4"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn simulate_outside_small_data_regime_exits_three_unless_forced() {
    let base = ["simulate", "--z0-re", "0.2", "--eps", "0.01"];
    assert_eq!(run(&base).status.code(), Some(3));
    // The smaller coupling keeps the frequency inside its validity band for this larger datum.
    let mut forced = base.to_vec();
    forced.extend(["--force", "--nu", "0.001"]);
    let out = run(&forced);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let eps_used = stdout_json(&out)["outputs"]["eps_used"].as_f64().unwrap();
    assert!((eps_used - 0.04).abs() < 1e-12);
}

#[test]
fn scan_table_is_deterministic_and_summary_is_written() {
    let dir = std::env::temp_dir().join(format!("conc-nls-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("scan.csv");
    let p = path.to_str().unwrap();
    let args = ["scan", "--sigma-min", "0.75", "--sigma-max", "0.9", "--steps", "4", "--out", p];
    assert_eq!(run(&args).status.code(), Some(0));
    let first = std::fs::read_to_string(&path).unwrap();
    assert_eq!(run(&args).status.code(), Some(0));
    assert_eq!(first, std::fs::read_to_string(&path).unwrap());

    let mut lines = first.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sigma,omega,xi,im_kappa,f_sigma,re_zp21_literal,re_zp21_bc,re_iK,im_K,fgr_abs,reason"
    );
    assert_eq!(lines.count(), 4);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("scan.csv.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "scan");
    assert_eq!(summary["outputs"]["rows"], 4);
    assert_eq!(summary["inputs"]["steps"], 4);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn table_on_stdout_moves_summary_to_stderr() {
    let out = run(&["kernel-check", "--sigma", "0.85"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).lines().next().unwrap().contains(','));
    let summary: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(summary["command"], "kernel-check");
}

#[test]
fn single_point_commands_report_json() {
    let s = stdout_json(&run(&["spectrum", "--sigma", "0.8"]));
    assert_eq!(s["command"], "spectrum");
    let f = stdout_json(&run(&["fgr", "--sigma", "0.8"]));
    assert!(f["outputs"].is_object());
}
