use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn case(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../data/cases/{name}.m"))
}

fn apfopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apfopf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_category(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr)
        .lines()
        .rfind(|l| l.starts_with('{'))
        .expect("structured error line")
        .to_string();
    let v: Value = serde_json::from_str(&line).unwrap();
    v["error"]["category"].as_str().unwrap().to_string()
}

/// Removes wall-clock fields so two runs can be compared.
fn strip_timing(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.retain(|k, _| !k.contains("time") && k != "timings");
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

#[test]
fn both_models_produce_a_comparison() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("r.json");
    let out = apfopf(&["--case", case("case9").to_str().unwrap(), "--json", json.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&json);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["success"], true);
    let c = &v["cases"][0];
    assert_eq!(c["n_bus"], 9);
    assert_eq!(c["ac"]["status"], "OPTIMAL");
    assert_eq!(c["apf"]["status"], "OPTIMAL");
    assert!(c["comparison"]["objective_gap_pct"].as_f64().unwrap().abs() <= 1e-3);
    assert_eq!(c["apf"]["feasibility"]["pass"], true);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("exact AC audit") && text.contains("congestion"));
}

#[test]
fn apf_without_prerotation_still_solves() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("r.json");
    let out = apfopf(&[
        "--case",
        case("case9").to_str().unwrap(),
        "--model",
        "apf",
        "--prerotation",
        "none",
        "--json",
        json.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let c = &read_json(&json)["cases"][0];
    assert_eq!(c["apf"]["status"], "OPTIMAL");
    assert!(c["apf"]["feasibility"]["bus_p"]["max"].is_number());
    assert!(c["ac"].is_null() && c["comparison"].is_null());
}

#[test]
fn kernel_samples_match_direct_arithmetic() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("k.csv");
    let out = apfopf(&[
        "--emit-kernel-samples",
        csv_path.to_str().unwrap(),
        "--a",
        "0.5",
        "--delta-range",
        "-0.4,0.4",
        "--delta-unit",
        "rad",
        "--points",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["delta_deg", "trig_c", "trig_s", "ap_c", "ap_s", "trig_dc", "trig_ds", "ap_dc", "ap_ds"]
    );
    let rows: Vec<Vec<f64>> = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    let row = &rows[3];
    assert!((row[0].to_radians() - 0.2).abs() < 1e-12);
    // s = 2u/(1+u²) with u = 0.1.
    assert!((row[4] - 0.1980198).abs() <= 1e-7, "{}", row[4]);
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let json = dir.path().join(name);
        let out = apfopf(&["--case", case("case30").to_str().unwrap(), "--json", json.to_str().unwrap(), "-q"]);
        assert_eq!(out.status.code(), Some(0));
        let mut v = read_json(&json);
        strip_timing(&mut v);
        v
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn concurrent_jobs_keep_case_order() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("s.csv");
    let trace = dir.path().join("t.json");
    let out = apfopf(&[
        "--case",
        case("case30").to_str().unwrap(),
        "--case",
        case("case9").to_str().unwrap(),
        "--jobs",
        "2",
        "--csv",
        csv_path.to_str().unwrap(),
        "--trace-json",
        trace.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<(String, String, usize)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].to_string(), r[1].to_string(), r[4].parse().unwrap())
        })
        .collect();
    let keys: Vec<(&str, &str)> = rows.iter().map(|(c, m, _)| (c.as_str(), m.as_str())).collect();
    assert_eq!(keys, [("case30", "ac"), ("case30", "apf"), ("case9", "ac"), ("case9", "apf")]);
    let traces = read_json(&trace);
    let traces = traces.as_array().unwrap();
    assert_eq!(traces.len(), 4);
    for (t, (_, _, iters)) in traces.iter().zip(&rows) {
        assert_eq!(t["trace"].as_array().unwrap().len(), *iters);
    }
}

#[test]
fn failures_map_to_categories() {
    let dir = TempDir::new().unwrap();
    let missing = apfopf(&["--case", dir.path().join("none.m").to_str().unwrap()]);
    assert_eq!((missing.status.code(), stderr_category(&missing).as_str()), (Some(9), "io"));

    let bad = dir.path().join("bad.m");
    std::fs::write(&bad, "function mpc = bad\nmpc.baseMVA = 100;\n").unwrap();
    let parse = apfopf(&["--case", bad.to_str().unwrap(), "-q"]);
    assert_eq!((parse.status.code(), stderr_category(&parse).as_str()), (Some(3), "parse"));

    let multi = apfopf(&["--case", case("case9").to_str().unwrap(), "--a-params", "0.5,0.9"]);
    assert_eq!((multi.status.code(), stderr_category(&multi).as_str()), (Some(2), "usage"));

    let nothing = apfopf(&[]);
    assert_eq!(nothing.status.code(), Some(2));
}

#[test]
fn strict_audit_tolerance_fails_the_audit() {
    let out = apfopf(&["--case", case("case9").to_str().unwrap(), "--balance-tol", "1e-9", "-q"]);
    assert_eq!((out.status.code(), stderr_category(&out).as_str()), (Some(8), "audit"));
}

#[test]
fn large_case_is_accepted() {
    let dir = TempDir::new().unwrap();
    let json = dir.path().join("r.json");
    // Only structural acceptance is checked: parse, assembly and a bounded solve.
    let out = apfopf(&[
        "--case",
        case("case1354pegase").to_str().unwrap(),
        "--max-iter",
        "2",
        "--json",
        json.to_str().unwrap(),
        "-q",
    ]);
    assert_eq!((out.status.code(), stderr_category(&out).as_str()), (Some(7), "solve"));
    let c = &read_json(&json)["cases"][0];
    assert_eq!(c["n_bus"], 1354);
    assert!(c["failure"].is_null());
    assert!(c["ac"]["status"].is_string() && c["apf"]["status"].is_string());
}
