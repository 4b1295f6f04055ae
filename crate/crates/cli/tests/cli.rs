use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn system(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../systems").join(format!("{name}.json"))
}

fn nmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nmpc"))
        .args(args)
        .env_remove("NMPC_THREADS")
        .output()
        .unwrap()
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = nmpc(args);
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn json(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_flags_example_one() {
    let (code, out, _) = run(&["validate", s(&system("ex1"))]);
    assert_eq!(code, 1);
    assert!(!json(&out)["violations"].as_array().unwrap().is_empty());
    let (code, _, _) = run(&["validate", s(&system("ex2"))]);
    assert_eq!(code, 0);
}

#[test]
fn solve_at_origin_is_free() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.json");
    let (code, out, err) = run(&[
        "solve",
        s(&system("ex2")),
        "--horizon",
        "3",
        "--x0",
        "0,0",
        "--catalog",
        s(&cat),
    ]);
    assert_eq!(code, 0, "{err}");
    let v = json(&out);
    assert_eq!(v["status"], "optimal");
    assert_eq!(v["j"], 1);
    assert!(v["V"].as_f64().unwrap().abs() <= 1e-12);
    assert!(v["u"].as_f64().unwrap().abs() <= 1e-9);
    assert!(cat.exists(), "missing catalog is pruned and saved");
}

#[test]
fn single_scenario_and_infeasible_state() {
    let ex2 = system("ex2");
    let (code, out, _) = run(&["solve", s(&ex2), "--horizon", "3", "--x0", "0.2,0.1", "--scenario", "1"]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert_eq!(v["v_seq"].as_array().unwrap().len(), 3);
    assert!(v["kkt_residual"].as_f64().unwrap() <= 1e-8);

    let (code, _, err) = run(&["solve", s(&ex2), "--horizon", "2", "--x0", "0.5,0.5", "--scenario", "1"]);
    assert_eq!(code, 2, "{err}");
    let (code, _, err) = run(&["solve", s(&ex2), "--horizon", "3", "--x0", "-0.1,0.2", "--scenario", "99"]);
    assert_eq!(code, 3);
    assert_eq!(json(&err)["code"], "OUT_OF_RANGE");
}

#[test]
fn stale_catalog_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.json");
    let ex2 = system("ex2");
    let (code, out, _) = run(&["prune", s(&ex2), "--horizon", "3", "--out", s(&cat)]);
    assert_eq!(code, 0);
    let counts: Vec<u64> = json(&out)["levels"]
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["feasible"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![3, 5, 7]);

    let (code, _, err) = run(&[
        "solve", s(&ex2), "--horizon", "3", "--rho", "2", "--x0", "0.2,0.1", "--catalog", s(&cat),
    ]);
    assert_eq!(code, 3);
    assert_eq!(json(&err)["code"], "CATALOG_MISMATCH");

    let (code, _, err) = run(&["solve", s(&ex2), "--horizon", "2", "--x0", "0.2,0.1", "--catalog", s(&cat)]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn resumed_prune_matches_direct_prune() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let ex2 = system("ex2");
    assert_eq!(run(&["prune", s(&ex2), "--horizon", "2", "--out", s(&a)]).0, 0);
    assert_eq!(run(&["prune", s(&ex2), "--horizon", "4", "--resume", "--out", s(&a)]).0, 0);
    assert_eq!(run(&["prune", s(&ex2), "--horizon", "4", "--out", s(&b)]).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn linearization_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let lin = dir.path().join("lin.json");
    let ex2 = system("ex2");
    let (code, out, _) = run(&["linearize", s(&ex2)]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert!((v["beta"].as_f64().unwrap() - 0.024).abs() <= 1e-12);
    std::fs::write(&lin, &out).unwrap();

    let base = ["solve", s(&ex2), "--horizon", "3", "--x0", "0.2,0.1", "--scenario", "1"];
    let (_, direct, _) = run(&base);
    let mut with_file = base.to_vec();
    with_file.extend(["--linearization", s(&lin)]);
    let (code, loaded, err) = run(&with_file);
    assert_eq!(code, 0, "{err}");
    assert_eq!(json(&direct)["V"], json(&loaded)["V"]);
}

#[test]
fn stage_set_table() {
    let (code, out, _) = run(&["stagesets", s(&system("ex2")), "--resolution", "5"]);
    assert_eq!(code, 0);
    let comments = out.lines().take_while(|l| l.starts_with('#')).count();
    assert_eq!(comments, 3);
    let header = out.lines().nth(comments).unwrap();
    assert_eq!(header, "i,x1,x2,u_i_lo,u_i_hi");
    let rows: Vec<&str> = out.lines().skip(comments + 1).collect();
    assert!(!rows.is_empty());
    for r in rows {
        let f: Vec<f64> = r.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(f[3] <= f[4] + 1e-12, "{r}");
    }
}

#[test]
fn terminal_report_with_axioms() {
    let (code, out, _) = run(&["terminal", s(&system("ex3")), "--check-axioms", "--samples", "500"]);
    assert_eq!(code, 0);
    let v = json(&out);
    assert!(v["dare_residual"].as_f64().unwrap() <= 1e-10);
    assert_eq!(v["set"]["kind"], "polytope");
    assert_eq!(v["axioms"]["passed"], true);
}

#[test]
fn grid_and_simulation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.json");
    let grid = dir.path().join("grid.csv");
    let sim = dir.path().join("sim.csv");
    let ex2 = system("ex2");
    let (code, _, err) = run(&[
        "grid", s(&ex2), "--horizon", "3", "--resolution", "3", "--per-scenario", "--catalog", s(&cat), "--out",
        s(&grid),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&grid).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("x1,x2,feasible,u_star,V_star,j_star,feasible_j1"));
    assert_eq!(lines.count(), 9);

    let (code, _, err) = run(&[
        "simulate", s(&ex2), "--horizon", "3", "--x0", "0.2,0.1", "--steps", "5", "--catalog", s(&cat), "--out",
        s(&sim),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&sim).unwrap();
    assert!(text.starts_with("k,x1,x2,u,v,V,j_star\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn repro_example_one() {
    let (code, out, _) = run(&["repro", "ex1"]);
    assert_eq!(code, 0);
    assert!(out.lines().any(|l| l.contains("QCQP") && l.contains("PASS")));
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_three() {
    for args in [
        &["bogus"][..],
        &["solve"],
        &["solve", "missing.json", "--x0", "0,0"],
        &["solve", s(&system("ex2")), "--x0", "a,b"],
    ] {
        let (code, _, err) = run(args);
        assert_eq!(code, 3, "{args:?}: {err}");
    }
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn outputs_are_reproducible() {
    let ex2 = system("ex2");
    let args = ["solve", s(&ex2), "--horizon", "3", "--x0", "0.3,-0.2", "--all-feasible"];
    let dir = tempfile::tempdir().unwrap();
    let cat = dir.path().join("cat.json");
    let mut with_cat = args.to_vec();
    with_cat.extend(["--catalog", s(&cat)]);
    let first = nmpc(&with_cat).stdout;
    let again = nmpc(&with_cat).stdout;
    let one_thread = Command::new(env!("CARGO_BIN_EXE_nmpc"))
        .args(["--threads", "1"])
        .args(&with_cat)
        .output()
        .unwrap()
        .stdout;
    assert!(!first.is_empty());
    assert_eq!(first, again);
    assert_eq!(first, one_thread);
}
