//! Exercises the installed binary end to end: exit codes, stdout, and
//! generated files.

use std::process::{Command, Output};

fn corpus(name: &str) -> String {
    format!("{}/corpus/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn edbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edbc"))
        .args(args)
        .env_remove("EDBC_NO_CONTRACTS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_success_prints_result_and_exits_zero() {
    let o = edbc(&["run", &corpus("fib.edl"), "--entry", "fib/1", "--args", "10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "55\n");
}

#[test]
fn run_violation_reports_and_exits_one() {
    let o = edbc(&["run", &corpus("fib.edl"), "--entry", "fib/1", "--args", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(
        stderr(&o).trim(),
        "The precondition does not hold. Last call: fib:fib(-1)."
    );
}

#[test]
fn run_runtime_error_exits_two() {
    let o = edbc(&["run", &corpus("fib_plain.edl"), "--entry", "fib/1", "--args", "a"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error:"));
}

#[test]
fn run_usage_problems_exit_three() {
    // Wrong arity.
    let o = edbc(&["run", &corpus("fib.edl"), "--entry", "fib/2", "--args", "1"]);
    assert_eq!(o.status.code(), Some(3));
    // Unknown entry.
    let o = edbc(&["run", &corpus("fib.edl"), "--entry", "nope/0"]);
    assert_eq!(o.status.code(), Some(3));
    // Unreadable file.
    let o = edbc(&["run", "/definitely/missing.edl", "--entry", "f/0"]);
    assert_eq!(o.status.code(), Some(3));
    // Bad literal arguments.
    let o = edbc(&["run", &corpus("fib.edl"), "--entry", "fib/1", "--args", "X + 1"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn no_contracts_flag_and_env_var_skip_checks() {
    // fib(10) still works without contracts.
    let o = edbc(&[
        "run",
        &corpus("fib.edl"),
        "--entry",
        "fib/1",
        "--args",
        "10",
        "--no-contracts",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "55\n");

    // With checks disabled via the environment, a spec violation passes.
    let o = Command::new(env!("CARGO_BIN_EXE_edbc"))
        .args(["run", &corpus("spec_ret_bug.edl"), "--entry", "answer/1", "--args", "1"])
        .env("EDBC_NO_CONTRACTS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "wrong\n");
}

#[test]
fn instrument_prints_transformed_module() {
    let o = edbc(&["instrument", &corpus("fib.edl")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("-module(fib)."));
    assert!(out.contains("edbc_put_info"));
    assert!(out.contains("fib__edbc0"));
    // The printed module is itself loadable.
    let reparsed = edbc::parse_module(&out).unwrap();
    assert_eq!(reparsed.fundefs.len(), 4);
}

#[test]
fn doc_writes_markdown_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = edbc(&["doc", &corpus("fib.edl"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = std::fs::read_to_string(dir.path().join("fib.md")).unwrap();
    assert!(md.starts_with("# Module `fib`"));
    assert!(md.contains("## `fib/1`"));
    assert!(md.contains("Precondition"));
    assert!(md.contains("Decreases"));
}

#[test]
fn run_server_example_with_policy_flag() {
    for policy in ["fair", "resend"] {
        let o = edbc(&[
            "run",
            &corpus("driver.edl"),
            &corpus("selective_receive.edl"),
            "--entry",
            "test/1",
            "--args",
            policy,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let want: String = (0..10).map(|n| format!("result: {n}\n")).collect::<String>() + "ok\n";
        assert_eq!(stdout(&o), want, "policy {policy}");
    }
}
