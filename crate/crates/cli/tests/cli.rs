//! End-to-end runs of the `minipipe` binary.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use minipipe::bench::read_reports;
use minipipe::colfmt::read_column_file;
use minipipe::compile_spec;
use minipipe::oracle::oracle_run;
use minipipe::service::preprocess_batch;

fn minipipe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minipipe"))
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, name: &str, seed: &str) -> String {
    let path = dir.join(name).to_str().unwrap().to_string();
    let out = minipipe(&[
        "gen", "--rows", "1000", "--dense", "13", "--sparse", "26", "--seed", seed, "-o", &path,
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

#[test]
fn gen_then_run_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen(dir.path(), "d.col", "7");
    for preset in ["P-I", "P-II", "P-III"] {
        let output = dir.path().join(format!("{preset}.col"));
        let out = minipipe(&[
            "run",
            "--pipeline",
            preset,
            "-i",
            &input,
            "-o",
            output.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        let batch = read_column_file(std::fs::File::open(&input).unwrap()).unwrap();
        let expected = oracle_run(&batch, &compile_spec(preset).unwrap())
            .unwrap()
            .to_batch()
            .unwrap();
        assert_eq!(
            std::fs::read(&output).unwrap(),
            expected.to_file_bytes(),
            "{preset}"
        );
    }
}

#[test]
fn gen_is_deterministic_in_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = std::fs::read(gen(dir.path(), "a.col", "7")).unwrap();
    let b = std::fs::read(gen(dir.path(), "b.col", "7")).unwrap();
    let c = std::fs::read(gen(dir.path(), "c.col", "8")).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.len(), 24 + 1000 * (13 * 4 + 26 * 8));
}

#[test]
fn unknown_preset_is_a_usage_error_listing_presets() {
    let out = minipipe(&["run", "--pipeline", "P-9"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for p in ["P-I", "P-II", "P-III"] {
        assert!(err.contains(p), "{err}");
    }
}

#[test]
fn bad_flags_exit_1_and_help_exits_0() {
    assert_eq!(minipipe(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(minipipe(&["gen", "--rows", "many"]).status.code(), Some(1));
    assert_eq!(minipipe(&[]).status.code(), Some(1));
    for sub in ["gen", "run", "serve", "bench"] {
        let out = minipipe(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub}"
        );
    }
}

#[test]
fn missing_paths_are_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = minipipe(&[
        "run",
        "-i",
        "/definitely/not/here.col",
        "-o",
        dir.path().join("o.col").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let input = gen(dir.path(), "d.col", "1");
    let out = minipipe(&["run", "-i", &input, "-o", "/no/such/dir/o.col"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("does not exist"));
}

#[test]
fn corrupt_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen(dir.path(), "d.col", "1");
    let mut bytes = std::fs::read(&input).unwrap();
    let at = 24 + 1000 * 13 * 4 + 3 * 8;
    bytes[at] = b'x';
    std::fs::write(&input, bytes).unwrap();
    let out = minipipe(&[
        "run",
        "-p",
        "P-I",
        "-i",
        &input,
        "-o",
        dir.path().join("o.col").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("column 13") && err.contains("row 3"), "{err}");
}

#[test]
fn spec_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen(dir.path(), "d.col", "3");
    let spec = dir.path().join("pipe.txt");
    std::fs::write(&spec, "# small vocabulary\ndense = neg2zero, logarithm\nsparse = hex2int, modulus, vocab_gen, vocab_map\nmodulus = 1K\n").unwrap();
    let output = dir.path().join("o.col");
    let out = minipipe(&[
        "run",
        "--spec-file",
        spec.to_str().unwrap(),
        "-i",
        &input,
        "-o",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let batch = read_column_file(std::fs::File::open(&output).unwrap()).unwrap();
    assert_eq!(batch.sparse_kind(), minipipe::SparseKind::Index);
}

#[test]
fn bench_writes_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.jsonl");
    let out = minipipe(&[
        "bench",
        "-p",
        "P-II",
        "--rows",
        "2000",
        "--slots",
        "1,2",
        "--trials",
        "5",
        "--warmups",
        "1",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let reports = read_reports(BufReader::new(std::fs::File::open(&report).unwrap())).unwrap();
    assert_eq!(reports.iter().map(|r| r.slots).collect::<Vec<_>>(), [1, 2]);
    assert!(reports
        .iter()
        .all(|r| r.trials == 5 && r.pipeline == "P-II"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("P-II x2"));

    let out = minipipe(&["bench", "--trials", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_operators_follow_the_fixed_rows() {
    let out = minipipe(&[
        "bench",
        "--operators",
        "--rows",
        "2000",
        "--dense",
        "2",
        "--sparse",
        "2",
        "--warmups",
        "0",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    let positions: Vec<usize> = minipipe::bench::OPERATOR_ROWS
        .iter()
        .map(|r| table.find(r).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{table}");
}

#[test]
fn served_output_equals_run_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen(dir.path(), "d.col", "5");
    let local = dir.path().join("o.col");
    let out = minipipe(&[
        "run",
        "-p",
        "P-III",
        "-i",
        &input,
        "-o",
        local.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let mut child = Command::new(env!("CARGO_BIN_EXE_minipipe"))
        .args([
            "serve",
            "--bind",
            "127.0.0.1:0",
            "--slots",
            "2",
            "--duration-secs",
            "3",
        ])
        .env("MINIPIPE_SPOOL_DIR", dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut log = BufReader::new(child.stderr.take().unwrap());
    let mut line = String::new();
    log.read_line(&mut line).unwrap();
    let addr = line
        .split_whitespace()
        .nth(2)
        .expect("listening line")
        .to_string();
    let batch = read_column_file(std::fs::File::open(&input).unwrap()).unwrap();
    let remote = preprocess_batch(&addr, "P-III", &batch).unwrap();
    assert_eq!(remote.to_file_bytes(), std::fs::read(&local).unwrap());
    let mut rest = String::new();
    std::io::Read::read_to_string(&mut log, &mut rest).unwrap();
    assert!(child.wait().unwrap().success());
    assert!(rest.contains("1 completed"), "{rest}");
}
