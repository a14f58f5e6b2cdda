//! Per-case pipeline execution and report assembly.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use apfopf::dcflow::prerotation;
use apfopf::ipm::{IterLog, KktResiduals};
use apfopf::pipeline::prepare;
use apfopf::{
    compare, evaluate_true_ac, parse_matpower_case, run_model, ComparisonReport, Error, ErrorCategory,
    FeasibilityReport, ModelKind, ModelRun, OpfSolution, PreRotation, RunOptions, SolveStatus,
};
use serde::Serialize;

use crate::args::ModelArg;

pub const SCHEMA_VERSION: u32 = 1;

/// Failure class of a run, mapped one-to-one onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Usage,
    Parse,
    Model,
    Kernel,
    Assembly,
    Solve,
    Audit,
    Io,
}

impl Category {
    pub fn exit_code(self) -> u8 {
        match self {
            Category::Usage => 2,
            Category::Parse => 3,
            Category::Model => 4,
            Category::Kernel => 5,
            Category::Assembly => 6,
            Category::Solve => 7,
            Category::Audit => 8,
            Category::Io => 9,
        }
    }
}

impl From<ErrorCategory> for Category {
    fn from(c: ErrorCategory) -> Self {
        match c {
            ErrorCategory::Parse => Category::Parse,
            ErrorCategory::Model => Category::Model,
            ErrorCategory::Kernel => Category::Kernel,
            ErrorCategory::Assembly => Category::Assembly,
            ErrorCategory::Solve => Category::Solve,
            ErrorCategory::Audit => Category::Audit,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub category: Category,
    pub message: String,
}

impl Failure {
    fn new(category: Category, message: impl Into<String>) -> Self {
        Failure {
            category,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(e.category().into(), e.to_string())
    }
}

/// One model's outcome. Power in p.u. on the case base, angles in radians.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub status: SolveStatus,
    pub message: Option<String>,
    pub objective: f64,
    pub iterations: usize,
    pub solve_time_s: f64,
    pub kkt: KktResiduals,
    pub max_angle_diff_rad: f64,
    /// Exact AC audit of the solution.
    pub feasibility: FeasibilityReport,
    pub solution: OpfSolution,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case: String,
    pub path: PathBuf,
    pub n_bus: usize,
    pub n_gen: usize,
    pub n_branch: usize,
    pub prerotation: PreRotation,
    /// Residual of the reference-angle solve.
    pub dc_residual: Option<f64>,
    pub ac: Option<RunReport>,
    pub apf: Option<RunReport>,
    /// Present for `--model both`; `a` is AC, `b` is all-pass.
    pub comparison: Option<ComparisonReport>,
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    pub case: String,
    pub model: ModelKind,
    pub trace: Vec<IterLog>,
}

pub struct CaseOutcome {
    pub report: CaseReport,
    pub traces: Vec<TraceReport>,
}

impl CaseOutcome {
    /// Category that makes this case unsuccessful, if any.
    pub fn failure(&self, model: ModelArg) -> Option<Category> {
        let r = &self.report;
        if let Some(f) = &r.failure {
            return Some(f.category);
        }
        let runs = [&r.ac, &r.apf];
        if runs.iter().flat_map(|x| x.iter()).any(|x| x.status != SolveStatus::Optimal) {
            return Some(Category::Solve);
        }
        if model == ModelArg::Both && !r.apf.as_ref().is_some_and(|a| a.feasibility.pass) {
            return Some(Category::Audit);
        }
        None
    }
}

fn models(model: ModelArg) -> &'static [ModelKind] {
    match model {
        ModelArg::Ac => &[ModelKind::Ac],
        ModelArg::Apf => &[ModelKind::Apf],
        ModelArg::Both => &[ModelKind::Ac, ModelKind::Apf],
    }
}

pub fn run_case(path: &Path, model: ModelArg, opts: &RunOptions, record_trace: bool) -> CaseOutcome {
    let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
    let mut report = CaseReport {
        case: name.clone(),
        path: path.to_path_buf(),
        n_bus: 0,
        n_gen: 0,
        n_branch: 0,
        prerotation: opts.prerotation,
        dc_residual: None,
        ac: None,
        apf: None,
        comparison: None,
        failure: None,
    };
    let mut traces = Vec::new();
    if let Err(f) = solve_into(path, model, opts, record_trace, &mut report, &mut traces) {
        log::error!("{name}: {:?} failure: {}", f.category, f.message);
        report.failure = Some(f);
    }
    CaseOutcome { report, traces }
}

fn solve_into(
    path: &Path,
    model: ModelArg,
    opts: &RunOptions,
    record_trace: bool,
    report: &mut CaseReport,
    traces: &mut Vec<TraceReport>,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(Category::Io, format!("{}: {e}", path.display())))?;
    let case = parse_matpower_case(&text)?.prepared()?;
    let (case, adm) = prepare(&case, opts)?;
    report.n_bus = case.n_bus();
    report.n_gen = case.gens.len();
    report.n_branch = case.branches.len();
    let dc = prerotation(&case, opts.prerotation, &opts.ipm)?;
    report.dc_residual = Some(dc.residual);
    let mut ipm = opts.ipm;
    ipm.record_trace = record_trace;
    let opts = RunOptions { ipm, ..opts.clone() };
    for &kind in models(model) {
        log::info!("{}: solving {kind:?} model", report.case);
        let mut run: ModelRun = run_model(&case, &adm, kind, &dc, &opts)?;
        let eval = evaluate_true_ac(&case, &adm, &run.solution)?;
        let max_angle = eval.branches.iter().map(|b| b.angle_diff.abs()).fold(0.0, f64::max);
        if record_trace {
            traces.push(TraceReport {
                case: report.case.clone(),
                model: kind,
                trace: std::mem::take(&mut run.trace),
            });
        }
        let r = RunReport {
            model: kind,
            status: run.status,
            message: run.message,
            objective: run.solution.objective,
            iterations: run.solution.iterations,
            solve_time_s: run.solution.solve_time_s,
            kkt: run.kkt,
            max_angle_diff_rad: max_angle,
            feasibility: run.feasibility,
            solution: run.solution,
        };
        match kind {
            ModelKind::Ac => report.ac = Some(r),
            ModelKind::Apf => report.apf = Some(r),
        }
    }
    if let (Some(a), Some(b)) = (&report.ac, &report.apf) {
        report.comparison = Some(compare(&a.solution, &b.solution, &case, &adm)?);
    }
    Ok(())
}

/// Runs every case on up to `jobs` worker threads; results keep input order.
pub fn run_all(paths: &[PathBuf], model: ModelArg, opts: &RunOptions, jobs: usize, trace: bool) -> Vec<CaseOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CaseOutcome>>> = Mutex::new((0..paths.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, paths.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(path) = paths.get(i) else { break };
                let out = run_case(path, model, opts, trace);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|o| o.expect("every case ran"))
        .collect()
}

/// Human-readable rendering of one case.
pub fn render(out: &CaseOutcome) -> String {
    let r = &out.report;
    let mut s = format!("== {} ({} buses, {} generators, {} branches)\n", r.case, r.n_bus, r.n_gen, r.n_branch);
    if let Some(f) = &r.failure {
        s += &format!("failed ({:?}): {}\n", f.category, f.message);
        return s;
    }
    for run in [&r.ac, &r.apf].into_iter().flatten() {
        s += &format!(
            "{:?}: {:?} objective {:.6} $/h, {} iterations, {:.3} s, max |θi-θj| {:.3}°\n",
            run.model,
            run.status,
            run.objective,
            run.iterations,
            run.solve_time_s,
            run.max_angle_diff_rad.to_degrees()
        );
        if run.model == ModelKind::Apf {
            s += "exact AC audit of the all-pass solution:\n";
            s += &run.feasibility.to_string();
            s.push('\n');
        }
    }
    if let Some(c) = &r.comparison {
        s += &c.to_string();
    }
    s
}

#[derive(Debug, Serialize)]
pub struct SummaryRow<'a> {
    pub case: &'a str,
    pub model: ModelKind,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    pub solve_time_s: f64,
    pub max_angle_diff_rad: f64,
    pub bus_p_max: f64,
    pub bus_q_max: f64,
    pub violations: usize,
    pub feasible: bool,
    pub binding_flows: usize,
}

pub fn summary_rows(outcomes: &[CaseOutcome]) -> Vec<SummaryRow<'_>> {
    let mut rows = Vec::new();
    for o in outcomes {
        for run in [&o.report.ac, &o.report.apf].into_iter().flatten() {
            let f = &run.feasibility;
            rows.push(SummaryRow {
                case: &o.report.case,
                model: run.model,
                status: run.status,
                objective: run.objective,
                iterations: run.iterations,
                solve_time_s: run.solve_time_s,
                max_angle_diff_rad: run.max_angle_diff_rad,
                bus_p_max: f.bus_p.max,
                bus_q_max: f.bus_q.max,
                violations: f.classes().iter().map(|(_, c)| c.count).sum(),
                feasible: f.pass,
                binding_flows: run.solution.binding.flows().len(),
            });
        }
    }
    rows
}
