//! Shared fixtures for the criterion benchmarks.

use std::path::PathBuf;

use apfopf::NetworkCase;

/// Path of a bundled MATPOWER case such as `"case30"`.
pub fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/cases")
        .join(format!("{name}.m"))
}

/// Parse and prepare a bundled case; panics on bad data since benches have no recovery path.
pub fn load_case(name: &str) -> NetworkCase {
    let text = std::fs::read_to_string(case_path(name)).expect("bundled case readable");
    apfopf::parse_matpower_case(&text)
        .and_then(|c| c.prepared())
        .expect("bundled case parses")
}
