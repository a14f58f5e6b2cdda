//! End-to-end experiment: pre-rotation, assembly and solve of each model,
//! audit under the exact AC equations, and the side-by-side comparison.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dcflow::{prerotation, rotation_refs, DcSolution, PreRotation};
use crate::error::{Error, Result};
use crate::formulation::{assemble, classify_binding, initial_point, FlowMode, OpfSolution};
use crate::ipm::{self, binding_constraints, IpmOptions, IterLog, KktResiduals, SolveStatus};
use crate::kernels::KernelParam;
use crate::netmodel::{build_admittance, scale_line_ratings, AdmittanceModel, NetworkCase};
use crate::verify::{compare, evaluate_true_ac, feasibility_check, ComparisonReport, FeasibilityReport, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Exact trigonometric kernels.
    Ac,
    /// Pre-rotated all-pass kernels.
    Apf,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ac" | "trig" => Ok(ModelKind::Ac),
            "apf" | "allpass" => Ok(ModelKind::Apf),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunOptions {
    pub prerotation: PreRotation,
    /// All-pass parameter `a`.
    pub a: f64,
    /// Thermal-rating reduction in percent (0 keeps the case ratings).
    pub rate_scale_m: f64,
    pub ipm: IpmOptions,
    pub tolerances: Tolerances,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            prerotation: PreRotation::DcPf,
            a: KernelParam::DEFAULT_A,
            rate_scale_m: 0.0,
            ipm: IpmOptions::default(),
            tolerances: Tolerances::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        KernelParam::new(self.a)?;
        self.ipm.validate()?;
        self.tolerances.validate()
    }
}

/// Everything produced by one model solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRun {
    pub model: ModelKind,
    pub status: SolveStatus,
    pub message: Option<String>,
    pub kkt: KktResiduals,
    pub solution: OpfSolution,
    /// Audit of the solution under the exact AC equations.
    pub feasibility: FeasibilityReport,
    pub trace: Vec<IterLog>,
}

/// The case with ratings scaled as requested, plus its admittance model.
pub fn prepare(case: &NetworkCase, opts: &RunOptions) -> Result<(NetworkCase, AdmittanceModel)> {
    opts.validate()?;
    let case = scale_line_ratings(case, opts.rate_scale_m)?;
    let adm = build_admittance(&case)?;
    Ok((case, adm))
}

/// Solve one model. `dc` supplies both the starting angles and, for the
/// all-pass model, the rotation references. A solve that stops short of
/// optimality is returned as such; only structural failures are errors.
pub fn run_model(
    case: &NetworkCase,
    adm: &AdmittanceModel,
    model: ModelKind,
    dc: &DcSolution,
    opts: &RunOptions,
) -> Result<ModelRun> {
    let mode = match model {
        ModelKind::Ac => FlowMode::Trig,
        ModelKind::Apf => FlowMode::AllPass {
            kernel: KernelParam::new(opts.a)?,
            rotations: rotation_refs(dc, case, adm),
        },
    };
    let problem = assemble(case, adm, mode)?;
    let x0 = initial_point(&problem, Some(dc))?;
    let mut res = ipm::solve(&problem, &opts.ipm, &x0)?;
    let mut solution = OpfSolution::from_result(&problem, &res);
    let binding = binding_constraints(&res, opts.tolerances.binding_tol, opts.ipm.multiplier_tol);
    solution.binding = classify_binding(&problem, &binding);
    let eval = evaluate_true_ac(case, adm, &solution)?;
    let feasibility = feasibility_check(&eval, &solution, case, &opts.tolerances);
    Ok(ModelRun {
        model,
        status: res.status,
        message: res.message.take(),
        kkt: res.kkt,
        solution,
        feasibility,
        trace: std::mem::take(&mut res.trace),
    })
}

/// Both models on one case with their comparison (`a` = AC, `b` = APF).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub prerotation: PreRotation,
    pub dc_residual: f64,
    pub ac: ModelRun,
    pub apf: ModelRun,
    pub report: ComparisonReport,
}

impl Comparison {
    /// Both solves optimal and the all-pass solution AC-feasible.
    pub fn success(&self) -> bool {
        self.ac.status == SolveStatus::Optimal
            && self.apf.status == SolveStatus::Optimal
            && self.apf.feasibility.pass
    }
}

pub fn compare_models(case: &NetworkCase, opts: &RunOptions) -> Result<Comparison> {
    let (case, adm) = prepare(case, opts)?;
    let dc = prerotation(&case, opts.prerotation, &opts.ipm)?;
    let ac = run_model(&case, &adm, ModelKind::Ac, &dc, opts)?;
    let apf = run_model(&case, &adm, ModelKind::Apf, &dc, opts)?;
    let report = compare(&ac.solution, &apf.solution, &case, &adm)?;
    Ok(Comparison {
        prerotation: opts.prerotation,
        dc_residual: dc.residual,
        ac,
        apf,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_matpower_case;

    fn load_case(name: &str) -> NetworkCase {
        let path = format!("{}/../../data/cases/{name}.m", env!("CARGO_MANIFEST_DIR"));
        parse_matpower_case(&std::fs::read_to_string(path).unwrap())
            .unwrap()
            .prepared()
            .unwrap()
    }

    #[test]
    fn case9_comparison_succeeds() {
        let cmp = compare_models(&load_case("case9"), &RunOptions::default()).unwrap();
        assert!(cmp.success());
        assert!(cmp.report.objective_gap_pct <= 1e-3);
        assert!(cmp.report.congestion.a.is_empty() && cmp.report.congestion.b.is_empty());
    }

    #[test]
    fn no_prerotation_still_solves() {
        let opts = RunOptions {
            prerotation: PreRotation::None,
            ..Default::default()
        };
        let cmp = compare_models(&load_case("case9"), &opts).unwrap();
        assert_eq!(cmp.apf.status, SolveStatus::Optimal);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let case = load_case("case9");
        for opts in [
            RunOptions { a: 0.0, ..Default::default() },
            RunOptions { rate_scale_m: 100.0, ..Default::default() },
        ] {
            assert!(matches!(compare_models(&case, &opts), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn model_names_parse() {
        assert_eq!("AC".parse::<ModelKind>().unwrap(), ModelKind::Ac);
        assert_eq!("apf".parse::<ModelKind>().unwrap(), ModelKind::Apf);
        assert!("both".parse::<ModelKind>().is_err());
    }
}
