use apfopf::{compare_models, parse_matpower_case, ErrorCategory, NetworkCase, OpfSolution, RunOptions, SolveStatus};

fn reference(name: &str) -> serde_json::Value {
    let path = format!("{}/../../data/reference/pypower_opf.json", env!("CARGO_MANIFEST_DIR"));
    let all: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    all[name].clone()
}

fn load(name: &str) -> NetworkCase {
    let path = format!("{}/../../data/cases/{name}.m", env!("CARGO_MANIFEST_DIR"));
    parse_matpower_case(&std::fs::read_to_string(path).unwrap())
        .unwrap()
        .prepared()
        .unwrap()
}

#[test]
fn case30_models_agree_and_audit_clean() {
    let cmp = compare_models(&load("case30"), &RunOptions::default()).unwrap();
    assert!(cmp.success());
    assert_eq!((cmp.ac.status, cmp.apf.status), (SolveStatus::Optimal, SolveStatus::Optimal));
    assert!(cmp.report.objective_gap_pct.abs() < 1e-3);
    assert_eq!(cmp.ac.solution.binding.flows(), cmp.apf.solution.binding.flows());
    assert!(cmp.apf.feasibility.bus_p.max < 1e-4);
}

#[test]
fn solutions_survive_a_json_round_trip() {
    let cmp = compare_models(&load("case9"), &RunOptions::default()).unwrap();
    let text = serde_json::to_string(&cmp.apf.solution).unwrap();
    let back: OpfSolution = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cmp.apf.solution);
}

#[test]
fn tightened_ratings_match_the_reference_solver() {
    let reference = reference("case9@50");
    let opts = RunOptions {
        rate_scale_m: 50.0,
        ..RunOptions::default()
    };
    let cmp = compare_models(&load("case9"), &opts).unwrap();
    assert_eq!((cmp.ac.status, cmp.apf.status), (SolveStatus::Optimal, SolveStatus::Optimal));
    let f_ref = reference["objective"].as_f64().unwrap();
    assert!((cmp.ac.solution.objective - f_ref).abs() <= 1e-6 * f_ref);
    assert_eq!(cmp.ac.solution.binding.flow_from, [reference["binding_flow_limits"][0][0].as_u64().unwrap() as usize]);
    assert_eq!(cmp.ac.solution.binding.flows(), cmp.apf.solution.binding.flows());
}

#[test]
fn large_case_converges_with_default_options() {
    let reference = reference("case1354pegase");
    let cmp = compare_models(&load("case1354pegase"), &RunOptions::default()).unwrap();
    assert_eq!((cmp.ac.status, cmp.apf.status), (SolveStatus::Optimal, SolveStatus::Optimal));
    let f_ref = reference["objective"].as_f64().unwrap();
    assert!((cmp.ac.solution.objective - f_ref).abs() <= 1e-6 * f_ref);
    // The reference reports limits with a clearly positive multiplier; every
    // one of them must be binding here too.
    let ours = cmp.ac.solution.binding.flows();
    for limit in reference["binding_flow_limits"].as_array().unwrap() {
        let k = limit[0].as_u64().unwrap() as usize;
        assert!(ours.iter().any(|b| b.branch == k), "branch {k} not binding");
    }
}

#[test]
fn bad_inputs_report_their_category() {
    let err = parse_matpower_case("function mpc = x\nmpc.baseMVA = 100;\n").unwrap_err();
    assert_eq!(err.category(), ErrorCategory::Parse);
    let opts = RunOptions {
        a: -1.0,
        ..RunOptions::default()
    };
    assert!(compare_models(&load("case9"), &opts).is_err());
}
