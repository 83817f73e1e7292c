//! End-to-end CLI tests: command contracts, error surfaces, and the
//! byte-level determinism guarantee.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn mechlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mechlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("utf8 stdout")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("utf8 stderr")
}

#[test]
fn validate_good_scenario_exits_zero() {
    let out = mechlab(&["validate", fixture("good.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"pass\": true"));
}

#[test]
fn validate_bad_prior_exits_nonzero_with_rule() {
    let out = mechlab(&["validate", fixture("bad_prior.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("prior-normalized"), "{text}");
}

#[test]
fn unknown_keys_yield_schema_error_json() {
    let out = mechlab(&[
        "solve",
        fixture("unknown_key.json").to_str().unwrap(),
        "--pi",
        "0.5,0.5",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("\"kind\": \"schema\""), "{err}");
    assert!(err.contains("problem.bogus"), "{err}");
}

#[test]
fn missing_file_yields_io_error_json() {
    let out = mechlab(&["validate", fixture("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("\"kind\": \"io\""));
}

#[test]
fn solve_reports_one_based_matching() {
    let out = mechlab(&[
        "solve",
        fixture("good.json").to_str().unwrap(),
        "--signals",
        "x1,x2",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // Posterior at (x1, x2) is (0.4, 0.6); diagonal matching worth 7.
    assert!(text.contains("\"value\": 7e0"), "{text}");
    assert!(text.contains("\"buyer\": 1"), "{text}");
    assert!(text.contains("\"seller\": 1"), "{text}");
}

#[test]
fn solve_rational_agrees_with_float() {
    let float = mechlab(&[
        "solve",
        fixture("good.json").to_str().unwrap(),
        "--pi",
        "0.5,0.5",
    ]);
    let rational = mechlab(&[
        "solve",
        fixture("good.json").to_str().unwrap(),
        "--pi",
        "1/2,1/2",
        "--rational",
    ]);
    assert!(float.status.success());
    assert!(rational.status.success());
    assert_eq!(stdout(&float), stdout(&rational));
}

#[test]
fn vcg_settlement_matches_hand_values() {
    let out = mechlab(&[
        "vcg",
        fixture("good.json").to_str().unwrap(),
        "--pi",
        "0.5,0.5",
        "--reports",
        fixture("reports.json").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"value\": 7e0"), "{text}");
    assert!(text.contains("\"vcg_revenue\": 2e0"), "{text}");
}

#[test]
fn calibrate_emits_binding_triple() {
    let out = mechlab(&["calibrate", fixture("good.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"delta\""));
    assert!(text.contains("\"binding_triple\""));
    assert!(text.contains("\"observed\": \"x2\""), "{text}");
}

#[test]
fn simulate_traces_misreported_signals() {
    let out = mechlab(&[
        "simulate",
        fixture("good.json").to_str().unwrap(),
        "--strategies",
        fixture("strategies.json").to_str().unwrap(),
        "--signals",
        "x1,x1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    // Buyer 1 lies x1 -> x2, so the posted posterior is the (x2, x1) one.
    assert!(
        text.contains("\"reports\": [\n    \"x2\",\n    \"x1\"\n  ]"),
        "{text}"
    );
    assert!(text.contains("\"accounting_imbalance\": 0"), "{text}");
}

#[test]
fn verify_passes_and_is_byte_deterministic() {
    let scenario = fixture("good.json");
    let run = || mechlab(&["verify", scenario.to_str().unwrap(), "--seed", "7"]);
    let first = run();
    let second = run();
    assert!(first.status.success(), "{}", stderr(&first));
    assert_eq!(
        first.stdout, second.stdout,
        "verify output not reproducible"
    );
    let text = stdout(&first);
    assert!(text.contains("\"pass\": true"));
    assert!(text.contains("empirical_margin"));
}

#[test]
fn verify_respects_thread_cap_without_changing_output() {
    let scenario = fixture("generated.json");
    let single = Command::new(env!("CARGO_BIN_EXE_mechlab"))
        .args(["verify", scenario.to_str().unwrap(), "--seed", "3"])
        .env("MECHLAB_THREADS", "1")
        .output()
        .expect("binary runs");
    let many = Command::new(env!("CARGO_BIN_EXE_mechlab"))
        .args(["verify", scenario.to_str().unwrap(), "--seed", "3"])
        .env("MECHLAB_THREADS", "8")
        .output()
        .expect("binary runs");
    assert!(single.status.success(), "{}", stderr(&single));
    assert_eq!(
        single.stdout, many.stdout,
        "thread count changed the output"
    );
}

#[test]
fn verify_runs_in_rational_mode() {
    let out = mechlab(&[
        "verify",
        fixture("good.json").to_str().unwrap(),
        "--seed",
        "7",
        "--rational",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"pass\": true"), "{text}");
    // Exact arithmetic: the minimal dominance margin is exactly zero (the
    // truthful candidate itself sits in the misreport grid).
    assert!(text.contains("\"min_margin\": 0"), "{text}");
}

#[test]
fn replica_emits_expected_csv_rows() {
    let out = mechlab(&[
        "replica",
        fixture("family.json").to_str().unwrap(),
        "--n-range",
        "2:10",
        "--k",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.trim_end().lines().collect();
    assert_eq!(
        lines[0],
        "n,max_nu,xi_sum_bound,worst_ic_margin,deficit,runtime_s"
    );
    assert_eq!(lines.len(), 10, "header plus nine rows for 2:10");
    // nu at n = 2 is exactly 2/3 for this family.
    assert!(
        lines[1].starts_with("2,6.66666666667e-1,2.5e-1,"),
        "{}",
        lines[1]
    );
}

#[test]
fn replica_rows_are_deterministic_apart_from_runtime() {
    let run = || {
        stdout(&mechlab(&[
            "replica",
            fixture("family.json").to_str().unwrap(),
            "--n-range",
            "2:4",
        ]))
    };
    let strip_runtime = |text: String| {
        text.lines()
            .map(|line| {
                line.rsplit_once(',')
                    .map(|(head, _)| head.to_string())
                    .unwrap_or_else(|| line.to_string())
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip_runtime(run()), strip_runtime(run()));
}

#[test]
fn report_includes_budget_section() {
    let out = mechlab(&[
        "report",
        fixture("good.json").to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"budget\""), "{text}");
    assert!(text.contains("\"max_deficit\""), "{text}");
    // The spliced document must still be valid JSON.
    let value: serde_json::Value = serde_json::from_str(&text).expect("valid JSON");
    assert!(value.get("budget").is_some());
}

#[test]
fn inspect_lists_partitions_and_beliefs() {
    let out = mechlab(&[
        "inspect",
        fixture("good.json").to_str().unwrap(),
        "--buyer",
        "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("\"partitions\""));
    assert!(text.contains("\"state_conditional\""));
}

#[test]
fn out_dir_receives_artifact() {
    let dir = std::env::temp_dir().join(format!("mechlab-test-{}", std::process::id()));
    let out = mechlab(&[
        "solve",
        fixture("good.json").to_str().unwrap(),
        "--pi",
        "0.5,0.5",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let artifact = std::fs::read_to_string(dir.join("solve.json")).expect("artifact written");
    assert_eq!(artifact, stdout(&out));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn generated_scenario_runs_end_to_end() {
    let out = mechlab(&[
        "verify",
        fixture("generated.json").to_str().unwrap(),
        "--seed",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"pass\": true"));
}
