mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtdg_core::cli::report::RunReport;

fn run(args: &[&str]) -> Output {
    Command::new(common::dtdg_binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    common::fixture_dir()
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p: PathBuf = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn report(out: &Output) -> RunReport {
    serde_json::from_slice(&out.stdout).expect("stdout holds a report")
}

#[test]
fn solve_scalar_game() {
    let out = run(&["solve", &fixture("g1.json"), "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let r = report(&out);
    let sol = r.solution.unwrap();
    for i in 0..2 {
        assert!((sol.controls[i][0][0] + 1.0 / 3.0).abs() < 1e-10);
    }
    assert!(r.gaps.unwrap().is_nash);
    assert!(r.structure.unwrap().quasi_potential_passed);
    assert!(r.timing_ms.is_none());
}

#[test]
fn timing_is_reported_by_default() {
    let out = run(&["solve", &fixture("g1.json")]);
    assert!(report(&out).timing_ms.is_some());
}

#[test]
fn descent_solver_is_selectable() {
    let out = run(&[
        "solve",
        &fixture("three_player_mixed.json"),
        "--solver",
        "descent",
        "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let sol = report(&out).solution.unwrap();
    assert_eq!(sol.solver, "descent");
    assert!(!sol.exact);

    let out = run(&["solve", &fixture("g1.json"), "--solver", "newton"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("riccati"));
}

#[test]
fn non_shared_state_weights_exit_3() {
    let out = run(&["solve", &fixture("g1_nonshared.json")]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("players 0 and 1") && err.contains("stage 0"),
        "{err}"
    );
}

#[test]
fn missing_and_malformed_files_exit_2() {
    assert_eq!(
        run(&["solve", "/nonexistent/game.json"]).status.code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("g1.json")).unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        &text.replacen("\"x1\"", "\"x_one\"", 1),
    );
    let out = run(&["solve", &bad]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("x_one"), "{err}");

    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["stages"][0]["A"] = serde_json::json!([[1.0, 2.0]]);
    let ragged = write(dir.path(), "ragged.json", &value.to_string());
    let out = run(&["solve", &ragged]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stages[0].A"));
}

#[test]
fn gaps_examples() {
    let dir = tempfile::tempdir().unwrap();
    let zero = write(
        dir.path(),
        "zero.json",
        r#"{"controls": [[[0.0]], [[0.0]]]}"#,
    );
    let out = run(&[
        "gaps",
        &fixture("g1.json"),
        &zero,
        "--require-nash",
        "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(5));
    let gaps = report(&out).gaps.unwrap();
    assert_eq!(gaps.gaps, vec![0.25, 0.25]);
    assert!(!gaps.is_nash);

    assert_eq!(
        run(&["gaps", &fixture("g1.json"), &zero]).status.code(),
        Some(0)
    );

    let ne = write(
        dir.path(),
        "ne.json",
        r#"{"controls": [[[-0.3333333333333333]], [[-0.3333333333333333]]]}"#,
    );
    let out = run(&["gaps", &fixture("g1.json"), &ne, "--require-nash"]);
    assert_eq!(out.status.code(), Some(0));

    let short = write(dir.path(), "short.json", r#"{"controls": [[[0.0]]]}"#);
    let out = run(&["gaps", &fixture("g1.json"), &short]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("controls"));
}

#[test]
fn epsilon_examples() {
    let dir = tempfile::tempdir().unwrap();
    let point = write(
        dir.path(),
        "point.json",
        r#"{"controls": [[[0.0]], [[0.0]]], "conjectures": [[[1.0]], [[1.0]]]}"#,
    );
    let g1 = fixture("g1.json");
    let out = run(&[
        "epsilon",
        &g1,
        &point,
        "--mu",
        "1.001",
        "1.001",
        "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let eps = report(&out).epsilon.unwrap();
    assert!((eps.eps_i[0] - 0.25025).abs() < 1e-12);
    assert!(eps.sound && eps.measured_gaps[0] <= eps.eps_i[0]);
    assert_eq!(eps.mu_star, Some(vec![1.0, 1.0]));

    let out = run(&["epsilon", &g1, &point, "--mu", "0.5", "0.5"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshold"));

    let out = run(&[
        "epsilon",
        &g1,
        &point,
        "--rule",
        "next-labelled",
        "--mu",
        "1.001",
        "1.001",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let eps = report(&out).epsilon.unwrap();
    assert!((eps.eps_i[0] - 0.5005).abs() < 1e-8);
    assert!(eps.mu_star.is_none() && !eps.exact_best_responses);

    let ne = write(
        dir.path(),
        "ne.json",
        r#"{"controls": [[[-0.3333333333333333]], [[-0.3333333333333333]]],
            "conjectures": [[[0.33333333333333337]], [[0.33333333333333337]]]}"#,
    );
    let out = run(&["epsilon", &g1, &ne, "--auto-mu", "1e-6", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report(&out).epsilon.unwrap().eps <= 1e-6);

    let off = write(
        dir.path(),
        "off.json",
        r#"{"controls": [[[0.0]], [[0.0]]], "conjectures": [[[1.0]], [[0.5]]]}"#,
    );
    assert_eq!(
        run(&["epsilon", &g1, &off, "--mu", "2", "2"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["epsilon", &g1, &point]).status.code(), Some(2));
}

#[test]
fn oracle_examples() {
    let g1 = fixture("g1.json");
    let out = run(&["oracle", &g1, "--grid", "-2/3,-1/3,0,1/3", "--no-timing"]);
    assert_eq!(out.status.code(), Some(0));
    let oracle = report(&out).oracle.unwrap();
    assert_eq!(oracle.joint_profiles, 16);
    let third = -1.0 / 3.0;
    assert!(oracle
        .equilibria
        .iter()
        .any(|p| p[0][0][0] == third && p[1][0][0] == third));

    let out = run(&["oracle", &g1, "--grid", "0,1", "--budget", "3"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(run(&["oracle", &g1, "--grid", ""]).status.code(), Some(2));
    assert_eq!(
        run(&["oracle", &g1, "--grid", "1,x"]).status.code(),
        Some(2)
    );
}

#[test]
fn out_flag_writes_the_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("report.json");
    let out = run(&[
        "solve",
        &fixture("g1.json"),
        "--out",
        target.to_str().unwrap(),
        "--no-timing",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&target).unwrap();
    let r: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(r.command, "solve");
}

#[test]
fn reports_round_trip_losslessly() {
    for path in common::potential_fixtures() {
        let out = run(&["solve", path.to_str().unwrap(), "--no-timing"]);
        let text = String::from_utf8(out.stdout).unwrap();
        let r: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(dtdg_core::cli::render(&r), text);
    }
}

#[test]
fn seed_changes_only_the_sampled_check() {
    let g = fixture("planar_two_player.json");
    let a = report(&run(&["solve", &g, "--seed", "1", "--no-timing"]));
    let b = report(&run(&["solve", &g, "--seed", "2", "--no-timing"]));
    assert_eq!(a.solution, b.solution);
    assert_eq!((a.seed, b.seed), (1, 2));
}
