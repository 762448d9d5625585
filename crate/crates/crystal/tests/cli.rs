use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn crystal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crystal")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn canonicalize_prints_metrics_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write(dir.path(), "s.grid", "crystal v1 1 2\n##\n");
    let trace = dir.path().join("s.jsonl");
    let frames = dir.path().join("frames");
    let out = crystal(&[
        "canonicalize",
        &grid,
        "--trace",
        trace.to_str().unwrap(),
        "--frames",
        frames.to_str().unwrap(),
        "--every",
        "10",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let keys: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap()).collect();
    assert_eq!(keys, ["n_atoms", "parallel_steps", "module_ops", "atom_ops", "levels"]);
    assert!(text.contains("n_atoms=2048"));
    let steps: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("parallel_steps="))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(fs::read_to_string(&trace).unwrap().lines().count(), steps);
    assert_eq!(fs::read_dir(&frames).unwrap().count(), (steps + 1).div_ceil(10));
    let verify = crystal(&["verify", &grid, trace.to_str().unwrap()]);
    assert_eq!(verify.status.code(), Some(0));
}

#[test]
fn reconfigure_trace_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.grid", "crystal v1 1 2\n##\n");
    let t = write(dir.path(), "t.grid", "crystal v1 2 1\n#\n#\n");
    let trace = dir.path().join("st.jsonl");
    let out = crystal(&["reconfigure", &s, &t, "--trace", trace.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(crystal(&["verify", &s, trace.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.grid", "crystal v1 2 2\n#.\n.#\n");
    let out = crystal(&["canonicalize", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    assert_eq!(crystal(&["canonicalize", "/nonexistent.grid"]).status.code(), Some(2));
    let one = write(dir.path(), "one.grid", "crystal v1 1 1\n#\n");
    let two = write(dir.path(), "two.grid", "crystal v1 1 2\n##\n");
    assert_eq!(crystal(&["reconfigure", &one, &two]).status.code(), Some(2));
}

#[test]
fn verify_rejects_illegal_step_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write(dir.path(), "s.grid", "crystal v1 1 1\n#\n");
    let trace = write(
        dir.path(),
        "t.jsonl",
        "{\"step\":0,\"tag\":\"x\",\"ops\":[{\"kind\":\"slide\",\"from\":[12,12],\"dir\":\"E\",\"dist\":1}]}\n",
    );
    assert_eq!(crystal(&["verify", &grid, &trace]).status.code(), Some(3));
}

#[test]
fn bench_prints_table() {
    let out = crystal(&["bench", "--family", "square", "--levels", "1", "--repeat", "1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].split_whitespace().eq(["h", "n_atoms", "parallel_steps", "module_ops", "ms"]));
    assert_eq!(lines[1].split_whitespace().nth(1), Some("1024"));
}
