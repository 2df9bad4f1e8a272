//! End-to-end checks of the command-line interface: flags, config files,
//! output files, exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_nttgen")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nttgen_cli_{}_{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn nttgen")
}

fn run_env(args: &[&str], key: &str, value: &Path) -> Output {
    Command::new(bin()).args(args).env(key, value).output().expect("spawn nttgen")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn params_preset_and_export() {
    let dir = workdir("params");
    let out = run(&["params", "--scheme", "dilithium", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("q = 8380417"));
    assert!(text.contains("bits = 23"));
    assert!(text.contains("stages = 8"));
    let exported = std::fs::read_to_string(dir.join("dilithium_params.txt")).unwrap();
    assert_eq!(exported, text);
}

#[test]
fn params_toy_and_validation_failure() {
    let dir = workdir("toy");
    let out = run(&["params", "--q", "17", "--n", "8", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("psi = 3"));

    let out = run(&["params", "--q", "15", "--n", "8", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mcm_single_constants() {
    let dir = workdir("mcm");
    let out = run(&["mcm", "--const", "13", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("adders = 2"));
    assert!(dir.join("const_13.ag").exists());

    let out = run(&["mcm", "--const", "1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("adders = 0"));
}

#[test]
fn mcm_scheme_summary() {
    let dir = workdir("mcm_kyber");
    let out = run(&["mcm", "--scheme", "kyber", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("pairs = 896"));
    let summary = std::fs::read_to_string(dir.join("kyber_mcm_summary.txt")).unwrap();
    assert!(summary.lines().filter(|l| l.starts_with("stage ")).count() == 896);
    assert!(dir.join("kyber_graphs/mult2_r.ag").exists());
    assert!(dir.join("kyber_graphs/mult3_q.ag").exists());
    assert!(dir.join("kyber_graphs/inv_scale.ag").exists());

    // Totals reported must dominate: optimized at or below the CSD baseline.
    let csd: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("csd_adders = "))
        .unwrap()
        .parse()
        .unwrap();
    let opt: u64 = text
        .lines()
        .find_map(|l| l.strip_prefix("opt_adders = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(opt < csd);
}

#[test]
fn generate_toy_design() {
    let dir = workdir("gen");
    let out = run(&["generate", "--q", "17", "--n", "8", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("butterflies = 12"));
    let verilog = std::fs::read_to_string(dir.join("q17_ntt8.v")).unwrap();
    assert!(!verilog.contains('*'));
    assert!(verilog.contains("module q17_ntt8"));
    assert!(dir.join("q17_metrics.txt").exists());
}

#[test]
fn verify_is_deterministic_and_clean() {
    let dir = workdir("verify");
    let args =
        ["verify", "--q", "17", "--n", "8", "--trials", "64", "--seed", "42", "--out"];
    let out1 = run(&[&args[..], &[dir.to_str().unwrap()]].concat());
    assert!(out1.status.success(), "{}", String::from_utf8_lossy(&out1.stderr));
    let report1 = std::fs::read_to_string(dir.join("q17_verify.txt")).unwrap();
    let out2 = run(&[&args[..], &[dir.to_str().unwrap()]].concat());
    assert!(out2.status.success());
    let report2 = std::fs::read_to_string(dir.join("q17_verify.txt")).unwrap();
    assert_eq!(report1, report2, "same seed must give byte-identical reports");
    assert!(report1.contains("passed = true"));
    assert!(report1.contains("ii = 1"));
    assert!(dir.join("q17_vectors.txt").exists());
    assert!(dir.join("q17_expected_fwd.txt").exists());
    assert!(dir.join("q17_expected_inv.txt").exists());
}

#[test]
fn verify_catches_corrupted_verilog() {
    let dir = workdir("corrupt");
    let out = run(&["generate", "--q", "17", "--n", "8", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    let vpath = dir.join("q17_ntt8.v");

    // Untouched file passes.
    let out = run(&[
        "verify", "--q", "17", "--n", "8", "--trials", "8", "--out",
        dir.to_str().unwrap(), "--verilog", vpath.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // One flipped operator: nonzero exit.
    let text = std::fs::read_to_string(&vpath).unwrap();
    std::fs::write(&vpath, text.replacen(" + ", " - ", 1)).unwrap();
    let out = run(&[
        "verify", "--q", "17", "--n", "8", "--trials", "8", "--out",
        dir.to_str().unwrap(), "--verilog", vpath.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_with_flag_override() {
    let dir = workdir("config");
    let cfg = dir.join("job.cfg");
    std::fs::write(
        &cfg,
        format!("q = 17\nn = 8\nseed = 5\ntrials = 16\nout = {}\n", dir.display()),
    )
    .unwrap();
    let out = run(&["--config", cfg.to_str().unwrap(), "verify", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.join("q17_verify.txt")).unwrap();
    assert!(report.contains("seed = 7"), "flag must beat the config file");
    assert!(report.contains("trials = 16"));
}

#[test]
fn env_var_sets_output_directory() {
    let dir = workdir("env");
    let out = run_env(&["params", "--scheme", "kyber"], "NTTGEN_OUT", &dir);
    assert!(out.status.success());
    assert!(dir.join("kyber_params.txt").exists());
}
