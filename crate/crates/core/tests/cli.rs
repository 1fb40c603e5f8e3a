use std::path::{Path, PathBuf};
use std::process::Command;

use clamp::cli;
use clamp::parser::parse_program;

fn corpus(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/corpus").join(rel)
}

fn temp_file(name: &str, contents: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("clamp-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn run(args: &[&str]) -> cli::Output {
    cli::main(std::iter::once("clamp").chain(args.iter().copied()))
}

#[test]
fn typecheck_prelude() {
    let out = run(&["typecheck", corpus("prelude.clamp").to_str().unwrap()]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(
        out.stdout,
        "fst :: Drop b => (a, b) -U> a\nconstU :: (Dup a, Drop a, Drop b) => a -U> b -U> a\nconstL :: Drop b => a -U> b -L> a\n"
    );
}

#[test]
fn run_noop() {
    let f = temp_file("noop.clamp", "main = ()\n");
    let out = run(&["run", f.to_str().unwrap()]);
    assert_eq!((out.code, out.stdout.as_str(), out.stderr.as_str()), (0, "()\nstore: {}\n", ""));
}

#[test]
fn duplicated_linear_closure_is_diagnosed() {
    let f = temp_file("bad.clamp", "main = let f = \\x -L> x in\n  (f (), f ())\n");
    let out = run(&["typecheck", f.to_str().unwrap()]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.is_empty());
    let prefix = format!("{}:2:3: error: ", f.display());
    assert!(out.stderr.starts_with(&prefix), "{}", out.stderr);
    assert!(out.stderr.contains("`Dup (a -L> a)`"), "{}", out.stderr);
}

#[test]
fn parse_errors_carry_positions() {
    let f = temp_file("syntax.clamp", "main = (\n");
    let out = run(&["typecheck", f.to_str().unwrap()]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.starts_with(&format!("{}:1:9: error: syntax error", f.display())), "{}", out.stderr);
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[]).code, 2);
    assert_eq!(run(&["frobnicate"]).code, 2);
    assert_eq!(run(&["run"]).code, 2);
    let f = corpus("run/noop.clamp");
    assert_eq!(run(&["run", f.to_str().unwrap(), "--step-limit", "0"]).code, 2);
    assert_eq!(run(&["ast", f.to_str().unwrap(), "--emit", "json"]).code, 2);
}

#[test]
fn missing_file_is_a_diagnostic() {
    let out = run(&["typecheck", "/nonexistent/file.clamp"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.starts_with("/nonexistent/file.clamp: error:"));
}

#[test]
fn run_options() {
    let f = corpus("run/weak_aliased.clamp");
    let f = f.to_str().unwrap();
    let traced = run(&["run", f, "--trace", "--checked"]);
    assert_eq!(traced.code, 0);
    assert_eq!(traced.stdout, std::fs::read_to_string(corpus("run/weak_aliased.trace")).unwrap());

    let limited = run(&["run", f, "--step-limit", "2"]);
    assert_eq!(limited.code, 1);
    assert!(limited.stderr.contains("step limit of 2 exceeded"), "{}", limited.stderr);

    let missing = run(&["run", f, "--entry", "nope"]);
    assert_eq!(missing.code, 1);
    assert!(missing.stderr.contains("no definition named `nope`"));
}

#[test]
fn entry_selection_and_monomorphism() {
    let f = temp_file("entries.clamp", "id = \\x -U> x\nother = id (new_w ())\nmain = ()\n");
    let f = f.to_str().unwrap();
    let out = run(&["run", f, "--entry", "other", "--checked"]);
    assert_eq!((out.code, out.stdout.as_str()), (0, "ℓ0\nstore: {ℓ0↦1 ()}\n"), "{}", out.stderr);
    let poly = run(&["run", f, "--entry", "id"]);
    assert_eq!(poly.code, 1);
    assert!(poly.stderr.contains("must be monomorphic"), "{}", poly.stderr);
}

#[test]
fn elaborate_shows_annotations_and_internal_form() {
    let out = run(&["elaborate", corpus("prelude.clamp").to_str().unwrap()]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("annotated: \\(x, y) -U> drop {y} in x"));
    assert!(out.stdout.contains("internal:  \\p#1 -U> let (x, y) = p#1 in drop y in x"));
}

#[test]
fn ast_emitters() {
    let f = corpus("prelude.clamp");
    let pretty = run(&["ast", f.to_str().unwrap(), "--emit", "pretty"]);
    assert_eq!(pretty.code, 0);
    let original = parse_program(&std::fs::read_to_string(&f).unwrap()).unwrap();
    assert_eq!(parse_program(&pretty.stdout).unwrap(), original);

    let tree = run(&["ast", f.to_str().unwrap(), "--emit", "tree"]);
    assert!(tree.stdout.starts_with("Definition fst @2:1\n  Lam -U> (x, y) @2:11\n    Var x @2:23\n"), "{}", tree.stdout);
}

#[test]
fn output_is_deterministic() {
    for args in [vec!["typecheck"], vec!["elaborate"], vec!["run", "--trace"], vec!["ast"]] {
        let f = corpus("run/closure_captures_weak.clamp");
        let mut full: Vec<&str> = args.clone();
        full.insert(1, f.to_str().unwrap());
        assert_eq!(run(&full), run(&full));
    }
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_clamp");
    let ok = Command::new(bin).args(["run", corpus("run/noop.clamp").to_str().unwrap()]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8(ok.stdout).unwrap(), "()\nstore: {}\n");
    let bad = Command::new(bin).args(["typecheck", corpus("reject/dup_strong_ref.clamp").to_str().unwrap()]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));
    assert!(!bad.stderr.is_empty());
    let usage = Command::new(bin).arg("--bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(2));
}
