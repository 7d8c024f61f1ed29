use std::process::{Command, Output};

use gravidy::bench::{parse_csv, parse_summary_json, Geometry, MethodId, CSV_HEADER};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gravidy-bench"))
        .args(args)
        .env("GRAVIDY_THREADS", "2")
        .output()
        .expect("spawn gravidy-bench")
}

#[test]
fn sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("run.csv");
    let json_path = dir.path().join("summary.json");
    let out = bench(&[
        "--geometry",
        "pos",
        "--method",
        "gravidy,pgd-nesterov",
        "--n",
        "12",
        "--seeds",
        "0-2",
        "--max-outer",
        "5",
        "--out",
        csv_path.to_str().unwrap(),
        "--summary",
        json_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    let records = parse_csv(text.as_bytes()).unwrap();
    for method in [
        MethodId::Gravidy(gravidy::bench::InnerId::Mgn),
        MethodId::PgdNesterov,
    ] {
        for seed in 0..3 {
            let rows = records
                .iter()
                .filter(|r| r.method == method && r.seed == seed)
                .count();
            assert!((1..=5).contains(&rows), "{method} seed {seed}: {rows} rows");
        }
    }
    assert!(records
        .iter()
        .all(|r| r.geometry == Geometry::Pos && r.outer_iter >= 1));

    let summary = parse_summary_json(&std::fs::read(&json_path).unwrap()).unwrap();
    assert_eq!(summary.seeds, vec![0, 1, 2]);
    assert_eq!(summary.methods.len(), 2);
    assert_eq!(summary.runs.len(), 6);
    assert!(!summary.generator.is_empty());
}

#[test]
fn stdout_output_and_trace_thinning() {
    let out = bench(&[
        "--geometry",
        "simplex",
        "--n",
        "6",
        "--seeds",
        "4",
        "--max-outer",
        "7",
        "--kkt-tol",
        "1e-300",
        "--trace-every",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = parse_csv(out.stdout.as_slice()).unwrap();
    let iters: Vec<usize> = records.iter().map(|r| r.outer_iter).collect();
    assert_eq!(iters, vec![3, 6, 7]);
}

#[test]
fn all_methods_on_stiefel() {
    let out = bench(&[
        "--geometry",
        "stiefel",
        "--method",
        "all",
        "--n",
        "6",
        "--p",
        "2",
        "--seeds",
        "1",
        "--max-outer",
        "3",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let records = parse_csv(out.stdout.as_slice()).unwrap();
    let mut methods: Vec<String> = records.iter().map(|r| r.method.to_string()).collect();
    methods.dedup();
    assert_eq!(methods.len(), 4, "{methods:?}");
}

#[test]
fn invalid_arguments_exit_with_code_1() {
    for args in [
        vec!["--geometry", "torus"],
        vec!["--geometry", "pos", "--method", "wen-yin"],
        vec!["--geometry", "pos", "--inner", "dense-nr"],
        vec!["--geometry", "pos", "--seeds", "5-1"],
        vec!["--geometry", "stiefel", "--n", "3", "--p", "4"],
        vec!["--geometry", "pos", "--eta", "-1"],
        vec!["--geometry", "pos", "--n", "many"],
        vec!["--method", "gravidy"],
    ] {
        let out = bench(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_gravidy-bench"))
        .args([
            "--geometry",
            "pos",
            "--n",
            "4",
            "--seeds",
            "0",
            "--max-outer",
            "1",
        ])
        .env("GRAVIDY_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let out = bench(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--geometry",
        "--method",
        "--inner",
        "--seeds",
        "--trace-every",
        "--summary",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
}
