//! AC optimal power flow in two flavours: the classical trigonometric model
//! and an all-pass fractional (APF) surrogate whose cosine/sine kernels are
//! the real and imaginary parts of `(1 + j·a·δ)/(1 − j·a·δ)`, pre-rotated
//! around a DC power-flow reference.
//!
//! Both models are assembled as sparse NLPs with exact first and second
//! derivatives and solved with the in-crate primal-dual interior-point
//! method. The [`verify`] module audits any solution against the exact AC
//! equations.
//!
//! Typical flow:
//!
//! ```no_run
//! use apfopf::{netmodel, pipeline};
//!
//! let text = std::fs::read_to_string("data/cases/case9.m").unwrap();
//! let case = netmodel::parse_matpower_case(&text).unwrap().prepared().unwrap();
//! let cmp = pipeline::compare_models(&case, &pipeline::RunOptions::default()).unwrap();
//! println!("gap = {:.6} %", cmp.report.objective_gap_pct);
//! ```

// Index loops mirror the sparse and dense formulas; negated comparisons
// deliberately reject NaN along with out-of-range values.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dcflow;
pub mod error;
pub mod formulation;
pub mod ipm;
pub mod kernels;
pub mod netmodel;
pub mod pipeline;
pub mod sparse;
pub mod verify;

pub use dcflow::{rotation_refs, solve_dc_opf, solve_dc_pf, DcSolution, PreRotation, RotationTable};
pub use error::{Error, ErrorCategory, Result};
pub use formulation::{assemble, initial_point, FlowMode, OpfProblem, OpfSolution};
pub use ipm::{solve, IpmOptions, SolveResult, SolveStatus};
pub use kernels::{eval_allpass, eval_rotated, eval_trig, KernelEval, KernelParam, RotationRef};
pub use netmodel::{build_admittance, parse_matpower_case, scale_line_ratings, AdmittanceModel, NetworkCase};
pub use pipeline::{compare_models, run_model, Comparison, ModelKind, ModelRun, RunOptions};
pub use verify::{compare, evaluate_true_ac, feasibility_check, ComparisonReport, FeasibilityReport, Tolerances};
