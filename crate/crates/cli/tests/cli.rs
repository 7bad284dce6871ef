use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shrinkerlab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shrinkerlab-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn deterministic(path: &PathBuf) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn spectrum_of_p_on_the_plane() {
    let json = scratch("spectrum.json");
    let csv = scratch("spectrum.csv");
    let o = run(&[
        "spectrum", "--model", "gaussian:2", "--degree", "6", "--op", "P", "--k", "12",
        "--json", json.to_str().unwrap(), "--emit-csv", csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("eigenvalue,residual,divf_norm\n"));
    assert_eq!(rows.lines().count(), 13);
    let v = deterministic(&json);
    let kernel = v["records"].as_array().unwrap().iter().find(|r| r["name"] == "spectrum/kernel_dimension").unwrap();
    assert_eq!(kernel["measured"], 3.0);
    assert_eq!(kernel["status"], "pass");
    assert!(v["records"].as_array().unwrap().iter().all(|r| !r["anchor"].as_str().unwrap().is_empty()));
}

#[test]
fn identities_with_a_small_step() {
    let o = run(&["identities", "--model", "gaussian:2", "--points", "20", "--step", "1e-3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("identities/simons_ric/analytic"));
}

#[test]
fn identities_on_tori_converge() {
    let o = run(&["identities", "--points", "5", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS identities/bochner_grad/order")));
}

#[test]
fn bad_configuration_exits_with_two() {
    for args in [
        vec!["spectrum", "--step", "0"],
        vec!["spectrum", "--model", "sphere:2"],
        vec!["spectrum", "--k", "500", "--degree", "2"],
        vec!["growth", "--window", "8,4"],
        vec!["variation", "--direction", "bend:x1"],
        vec!["gauge-fix", "--input", "/nonexistent/field"],
        vec!["run"],
    ] {
        let o = run(&args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run(&["spectrum", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn configuration_file_errors_name_the_line() {
    let cfg = scratch("bad.cfg");
    fs::write(&cfg, "command = spectrum\n# comment\nstep = -1\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn failed_checks_exit_with_one() {
    let cfg = scratch("tight.cfg");
    fs::write(&cfg, "command = spectrum\ndegree = 2\ntol.spectral = 1e-300\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL spectrum/symmetry") || l.starts_with("FAIL spectrum/eigen_residual")));
}

#[test]
fn flags_override_the_configuration_file() {
    let cfg = scratch("spectrum.cfg");
    let json = scratch("override.json");
    fs::write(&cfg, "command = spectrum\nop = drift\ndegree = 6\nk = 20\nseed = 18446744073709551615\n").unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap(), "--degree", "4", "--k", "15", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v = deterministic(&json);
    assert_eq!(v["config"]["degree"], 4);
    assert_eq!(v["config"]["op"], "drift");
    assert!(fs::read_to_string(&json).unwrap().contains("18446744073709551615"));
}

#[test]
fn reports_are_deterministic_apart_from_timing() {
    let json = scratch("det.json");
    let args = ["variation", "--seed", "11", "--json", json.to_str().unwrap()];
    assert_eq!(code(&run(&args)), 0);
    let a = deterministic(&json);
    let o = bin().args(args).env("RAYON_NUM_THREADS", "3").output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(a, deterministic(&json));
    assert!(fs::read_to_string(&json).unwrap().contains("\"timing\""));
}

#[test]
fn gauge_fix_round_trips_its_input() {
    let field = scratch("puregauge.field");
    let json = scratch("gauge.json");
    let o = run(&["gauge-fix", "--R", "8", "--iters", "6", "--write-input", field.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = run(&["gauge-fix", "--input", field.to_str().unwrap(), "--R", "8", "--iters", "6", "--json", json.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let v = deterministic(&json);
    let records = v["series"]["gauge_fix"]["records"].as_array().unwrap();
    assert!(records.len() >= 2);
    assert!(v["series"]["gauge_fix"]["stop"].get("plateau").is_some(), "{}", v["series"]["gauge_fix"]["stop"]);
}
