//! End-to-end checks of the command-line interface: subcommands, formats,
//! and exit codes (0 success, 2 usage/input, 3 numerical).

use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socopart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_reports_value_function_estimate() {
    let out = run(&["--instance", "p6", "solve", "--at", "0.5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("optimal value function"), "{text}");
    assert!(text.contains("objective"), "{text}");
    // psi(1/2) = -1 for this instance.
    assert!(text.contains("-1.0000000"), "{text}");
}

#[test]
fn nonlinearity_table_has_the_documented_columns() {
    let out = run(&[
        "--instance",
        "p5",
        "nonlinearity",
        "--start",
        "0.5",
        "--stop-tol",
        "1e-5",
        "--max-iter",
        "40",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    for col in ["k", "value", "Optim.", "Viol.", "delta", "sigma_min(dF)", "dist_to_limit"] {
        assert!(text.contains(col), "missing column {col} in\n{text}");
    }
    assert!(text.contains("0.394746"), "first backward step missing:\n{text}");
    assert!(text.contains("0.605254"), "first forward step missing:\n{text}");
    assert!(text.contains("NONLINEARITY_SUBINTERVAL"), "{text}");
}

#[test]
fn transition_verdict_line() {
    let out = run(&["--instance", "p14", "transition", "--at", "0"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("TRANSITION POINT (order 1"), "{text}");
    assert!(text.contains("v_2' = -0.5"), "{text}");
}

#[test]
fn transition_nonlinearity_member_on_modified_instance() {
    let out = run(&["--instance", "p14mod", "transition", "--at", "0", "--order", "10"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("NONLINEARITY_MEMBER"), "{text}");
    assert!(text.contains("order 10"), "{text}");
}

#[test]
fn scan_flags_partition_changes() {
    let out = run(&["--instance", "p5", "scan", "--from", "-0.5", "--to", "1.5", "--points", "21"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("partition changes inside cells"), "{text}");
}

#[test]
fn table_and_csv_carry_the_same_values() {
    let table = run(&["--instance", "p6", "valuefn", "--from", "0", "--to", "1", "--points", "5"]);
    let csv = run(&[
        "--instance",
        "p6",
        "--format",
        "csv",
        "valuefn",
        "--from",
        "0",
        "--to",
        "1",
        "--points",
        "5",
    ]);
    assert!(table.status.success() && csv.status.success());
    let parse_last = |text: &str, sep: &str| -> Vec<f64> {
        text.lines()
            .skip(1)
            .filter(|l| !l.trim().is_empty())
            .filter_map(|l| l.trim().split(sep).last()?.trim().parse::<f64>().ok())
            .collect()
    };
    let tv = parse_last(&stdout(&table), "  ");
    let cv = parse_last(&stdout(&csv), ",");
    assert_eq!(tv.len(), 5);
    assert_eq!(cv.len(), 5);
    for (a, b) in tv.iter().zip(&cv) {
        assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "table {a} vs csv {b}");
    }
}

#[test]
fn determinism_of_standard_output() {
    let a = run(&["--instance", "p5", "partition", "--at", "0.5"]);
    let b = run(&["--instance", "p5", "partition", "--at", "0.5"]);
    assert_eq!(stdout(&a), stdout(&b));
    assert!(stdout(&a).contains("({2}, ∅, {1}, (∅, ∅, ∅))"));
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["--instance", "p5", "scan", "--from", "1", "--to", "0", "--points", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["--instance", "/nonexistent/file.soco", "solve", "--at", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_3() {
    // x1 = -1 on a half-line block is primal infeasible.
    let dir = std::env::temp_dir().join("socopart_cli_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("infeasible.soco");
    std::fs::write(&path, "CONES\n1 1\nA\n1 0\nb\n-1\nc\n0 1\ncbar\n1 0\n").unwrap();
    let out = run(&["--instance", path.to_str().unwrap(), "solve", "--at", "0"]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn thread_cap_env_var_is_honored() {
    let out = Command::new(env!("CARGO_BIN_EXE_socopart"))
        .env("SOCO_PART_THREADS", "1")
        .args(["--instance", "p5", "scan", "--from", "0.1", "--to", "0.9", "--points", "5"])
        .output()
        .expect("binary runs");
    assert!(out.status.success());
    assert!(stdout(&out).contains("no partition changes detected"));
}

#[test]
fn reads_instance_files_from_disk() {
    // Round-trip a bundled instance through a file on disk.
    let dir = std::env::temp_dir().join("socopart_cli_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("copy.soco");
    let text = socopart::fileio::write_instance(&socopart::fileio::bundled("p5").unwrap());
    std::fs::write(&path, text).unwrap();
    let out = run(&["--instance", path.to_str().unwrap(), "partition", "--at", "0.5"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("({2}, ∅, {1}, (∅, ∅, ∅))"));
}
