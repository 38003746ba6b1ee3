use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

const QUADRATIC: &str = "(IMPLIES (= (+ (* A X X) (* B X) C) 0) (>= (- (* B B) (* 4 A C)) 0))";

fn psatz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psatz"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prove_writes_script_and_certificate_then_check_accepts_it() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "quad.lisp", QUADRATIC);
    let out_dir = dir.path().join("out");
    let out = psatz(&["prove", s(&file), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let script = std::fs::read_to_string(out_dir.join("quad.lisp")).unwrap();
    assert!(script.contains("(DEFTHM FINAL"));
    let cert = out_dir.join("quad.cert.json");
    assert!(cert.exists());

    let out = psatz(&["check", s(&file), "--cert", s(&cert)]);
    assert_eq!(out.status.code(), Some(0));

    // the same certificate says nothing about a different conjecture
    let other = write(dir.path(), "other.lisp", "(IMPLIES (= (+ (* A X X) C) 0) (>= (* B B) 0))");
    let out = psatz(&["check", s(&other), "--cert", s(&cert)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn never_overwrites_the_conjecture() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "quad.lisp", QUADRATIC);
    let out = psatz(&["prove", s(&file), "--out-dir", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(&file).unwrap(), QUADRATIC);
}

#[test]
fn emit_none_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "quad.lisp", QUADRATIC);
    let out_dir = dir.path().join("out");
    let out = psatz(&["prove", s(&file), "--emit", "none", "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!out_dir.exists());
}

#[test]
fn reads_the_conjecture_from_stdin() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_psatz"))
        .args(["parse", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(QUADRATIC.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("A B C X"), "{text}");
}

#[test]
fn malformed_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.lisp", "(IMPLIES (= X 0)");
    assert_eq!(psatz(&["prove", s(&bad)]).status.code(), Some(2));
    assert_eq!(psatz(&["parse", s(&bad)]).status.code(), Some(2));
    let missing = dir.path().join("missing.lisp");
    assert_eq!(psatz(&["prove", s(&missing)]).status.code(), Some(2));
    assert_eq!(psatz(&["prove", s(&bad), "--time-limit", "0"]).status.code(), Some(2));
}

#[test]
fn false_conjecture_finds_no_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "false.lisp", "(IMPLIES (>= X 0) (>= (- X 1) 0))");
    let out = psatz(&["prove", s(&file), "--emit", "none", "--time-limit", "20"]);
    assert!(matches!(out.status.code(), Some(1) | Some(3)));
}
