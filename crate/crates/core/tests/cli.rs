use std::path::Path;
use std::process::Command;

use probery::cli::run_cli;
use tempfile::TempDir;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Out {
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("probery").chain(args.iter().copied());
    let code = run_cli(argv, &mut stdout, &mut stderr);
    Out {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> Out {
    let out = cli(args);
    assert_eq!(out.code, 0, "{args:?}: {}", out.stderr);
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic table: 27 cells, 108 blocks, 20k records.
fn synthetic_table(dir: &TempDir) -> std::path::PathBuf {
    let table = dir.path().join("t");
    let data = dir.path().join("data.csv");
    ok(&[
        "create",
        "--table",
        s(&table),
        "--synthetic",
        "--segments",
        "3",
        "--blocks",
        "108",
        "--seed",
        "1",
    ]);
    ok(&["gen", "--out", s(&data), "--count", "20000", "--seed", "2"]);
    let out = ok(&[
        "load",
        "--table",
        s(&table),
        "--input",
        s(&data),
        "--seed",
        "3",
    ]);
    assert!(
        out.stderr.contains("loaded 20000 records"),
        "{}",
        out.stderr
    );
    table
}

#[test]
fn fixed_seed_query_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let q = "select a from t where b >= 10 with 0.8";
    let first = ok(&["query", "--table", s(&t), q, "--seed", "7"]);
    let second = ok(&["query", "--table", s(&t), q, "--seed", "7"]);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(first.stderr, second.stderr);
    assert!(first.stdout.lines().count() > 1000);
    assert!(first.stderr.contains("expected_pc="));
    assert!(first.stderr.contains("blocks_skipped="));
}

#[test]
fn out_of_range_confidence_is_a_user_error() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let out = cli(&["query", "--table", s(&t), "select a from t with 2"]);
    assert_eq!(out.code, 1);
    assert!(
        out.stderr.contains("confidence 2 out of range"),
        "{}",
        out.stderr
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn validate_pc_writes_one_row_per_confidence() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let csv = dir.path().join("pc.csv");
    ok(&[
        "validate-pc",
        "--table",
        s(&t),
        "--confidences",
        "0.1,0.5,0.9",
        "--trials",
        "400",
        "--out",
        s(&csv),
        "--seed",
        "4",
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "confidence,trials,complete,opc,mean_ec_incomplete,mean_expected_pc"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0.5,400,"));
}

#[test]
fn measure_qe_and_bench_dpa_csv() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let qe = ok(&[
        "measure-qe",
        "--table",
        s(&t),
        "--confidences",
        "0.5,1",
        "--trials",
        "30",
        "--seed",
        "5",
    ]);
    let lines: Vec<&str> = qe.stdout.lines().collect();
    assert_eq!(lines[0], "confidence,min,q1,median,q3,max,trials");
    assert_eq!(lines.len(), 3);
    let bench = ok(&[
        "bench-dpa",
        "--blocks",
        "2000,4000",
        "--count",
        "1000",
        "--seed",
        "6",
    ]);
    let lines: Vec<&str> = bench.stdout.lines().collect();
    assert_eq!(lines[0], "n,count,seconds,per_second");
    assert!(lines[1].starts_with("2000,1000,"));
    assert!(lines[2].starts_with("4000,1000,"));
}

#[test]
fn explain_prints_plan_without_rows() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let out = ok(&[
        "query",
        "--table",
        s(&t),
        "--explain",
        "--seed",
        "1",
        "select * from t where a < 1000 with 0.5",
    ]);
    assert!(out.stdout.contains("cells: 9 matched"), "{}", out.stdout);
    assert!(out.stdout.contains("expected_pc: "));
    assert!(out.stderr.is_empty());
}

#[test]
fn stats_balance_and_verify() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let balance = dir.path().join("balance.csv");
    let out = ok(&["stats", "--table", s(&t), "--balance-out", s(&balance)]);
    assert!(out.stdout.contains("records\t20000\n"), "{}", out.stdout);
    assert!(out.stdout.contains("cells\t27\n"));
    let rows = std::fs::read_to_string(&balance).unwrap();
    assert_eq!(rows.lines().count(), 1 + 108);
    let out = ok(&["verify", "--table", s(&t)]);
    assert!(out.stdout.ends_with("ok\n"));

    let trunk = t
        .join("slot_000")
        .join("block_00054")
        .join("trunk_000000.dat");
    std::fs::remove_file(&trunk).unwrap();
    let out = cli(&["verify", "--table", s(&t)]);
    assert_eq!(out.code, 2, "{}", out.stdout);
    assert!(out.stdout.contains("problem\t"));
    let out = cli(&["query", "--table", s(&t), "select count(a) from t"]);
    assert_eq!(out.code, 2);
}

#[test]
fn create_from_config_file() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    let schema = r#"{
        "name": "events",
        "attributes": [
            {"name": "day", "kind": "date"},
            {"name": "size", "kind": "float"},
            {"name": "who", "kind": "string"}
        ],
        "query_attributes": [
            {"name": "day", "segments": {"boundaries": [{"Date": "2024-03-01"}], "includes_empty": false}},
            {"name": "size", "segments": {"boundaries": [{"Float": 1.5}, {"Float": 3.0}], "includes_empty": true}}
        ]
    }"#;
    std::fs::write(
        &config,
        format!(r#"{{"schema": {schema}, "cfg": {{"n": 16}}}}"#),
    )
    .unwrap();
    let t = dir.path().join("events");
    let out = ok(&["create", "--table", s(&t), "--config", s(&config)]);
    assert!(out.stderr.contains("m = 8"), "{}", out.stderr);

    let data = dir.path().join("events.tsv");
    std::fs::write(
        &data,
        "who\tday\tsize\nann\t2024-02-10\t1.0\nbob\t2024-03-05\t\ncy\t2024-03-09\t4.25\n",
    )
    .unwrap();
    ok(&[
        "load",
        "--table",
        s(&t),
        "--input",
        s(&data),
        "--delimiter",
        "\\t",
        "--seed",
        "1",
    ]);
    let out = ok(&[
        "query",
        "--table",
        s(&t),
        "select who, size from events where day >= 2024-03-01",
    ]);
    let mut rows: Vec<&str> = out.stdout.lines().collect();
    rows.sort();
    assert_eq!(rows, vec!["bob\t\\N", "cy\t4.25"]);
    let out = ok(&["query", "--table", s(&t), "select avg(size) from events"]);
    assert_eq!(out.stdout, "2.625\n");

    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        format!(r#"{{"schema": {schema}, "cfg": {{"n": 16, "m": 6}}}}"#),
    )
    .unwrap();
    let out = cli(&[
        "create",
        "--table",
        s(&dir.path().join("x")),
        "--config",
        s(&bad),
    ]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("m = 6"), "{}", out.stderr);
}

#[test]
fn user_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    for args in [
        vec!["frobnicate"],
        vec!["query", "--table", s(&missing), "select a from t"],
        vec!["query", "--table", s(&missing), "select from"],
        vec!["create", "--table", s(&missing)],
        vec!["load", "--table", s(&missing), "--input", "x.csv"],
    ] {
        let out = cli(&args);
        assert_eq!(out.code, 1, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let dir2 = TempDir::new().unwrap();
    let t = synthetic_table(&dir2);
    let out = cli(&["query", "--table", s(&t), "select a from t where z = 1"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("unknown attribute `z`"));
    let out = cli(&["create", "--table", s(&t), "--synthetic"]);
    assert_eq!(out.code, 1);
    let out = cli(&["--help"]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("validate-pc"));
}

#[test]
fn binary_separates_rows_from_metadata() {
    let dir = TempDir::new().unwrap();
    let t = synthetic_table(&dir);
    let bin = env!("CARGO_BIN_EXE_probery");
    let run = |args: &[&str]| Command::new(bin).args(args).output().unwrap();
    let out = run(&[
        "query",
        "--table",
        s(&t),
        "--seed",
        "3",
        "select count(a) from t where a < 50000000 with 0.9",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.trim().parse::<u64>().is_ok(), "{stdout}");
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .contains("expected_pc="));
    let out = run(&["query", "--table", s(&t), "select a from t with 2"]);
    assert_eq!(out.status.code(), Some(1));
}
