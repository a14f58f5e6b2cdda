//! Audit of OPF solutions under the exact AC equations.
//!
//! Everything here is computed with complex phasor arithmetic on the
//! admittance model (`S = V·conj(I)`); no flow kernel of the formulation is
//! involved, so an all-pass solution is judged purely by the physics.

use std::collections::BTreeSet;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::OpfSolution;
use crate::netmodel::{AdmittanceModel, NetworkCase};

/// Per-class switch between absolute and relative violation measures.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelativeFlags {
    pub balance: bool,
    pub voltage: bool,
    pub pg: bool,
    pub qg: bool,
    pub angle: bool,
    pub flow: bool,
}

/// Audit tolerances in per-unit (radians for angles). A relative class
/// divides each violation by `max(1, |reference|)`, the reference being the
/// violated limit (or the bus load for balances).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    pub balance_tol: f64,
    pub bound_tol: f64,
    pub binding_tol: f64,
    pub relative: RelativeFlags,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            balance_tol: 1e-4,
            bound_tol: 1e-6,
            binding_tol: 1e-4,
            relative: RelativeFlags::default(),
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("balance_tol", self.balance_tol),
            ("bound_tol", self.bound_tol),
            ("binding_tol", self.binding_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        Ok(())
    }
}

/// Exact flows of one in-service branch, per-unit, leaving each end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub branch: usize,
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    pub s_from: f64,
    pub s_to: f64,
    /// `θ_from − θ_to` in radians.
    pub angle_diff: f64,
}

/// Result of re-evaluating a solution under the exact AC equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueAcEval {
    /// `Σ p_g − p_d − P_i(V, θ)` per bus.
    pub p_mismatch: Vec<f64>,
    pub q_mismatch: Vec<f64>,
    pub branches: Vec<BranchFlow>,
}

fn check_dims(case: &NetworkCase, adm: &AdmittanceModel, sol: &OpfSolution) -> Result<()> {
    let n = case.n_bus();
    let ng = case.gens.len();
    if adm.n != n || adm.branches.len() != case.branches.len() {
        return Err(Error::Dimension("admittance model does not match the case".into()));
    }
    if sol.vm.len() != n || sol.theta.len() != n || sol.pg.len() != ng || sol.qg.len() != ng {
        return Err(Error::Dimension(format!(
            "solution has {} buses / {} generators, case has {n} / {ng}",
            sol.vm.len(),
            sol.pg.len()
        )));
    }
    Ok(())
}

/// Recompute nodal mismatches and branch flows with complex arithmetic.
pub fn evaluate_true_ac(case: &NetworkCase, adm: &AdmittanceModel, sol: &OpfSolution) -> Result<TrueAcEval> {
    check_dims(case, adm, sol)?;
    if let Some(i) = sol.vm.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Dimension(format!("bus {i}: voltage magnitude {} is not positive", sol.vm[i])));
    }
    if let Some(i) = sol.theta.iter().position(|t| !t.is_finite()) {
        return Err(Error::Dimension(format!("bus {i}: non-finite angle")));
    }
    let n = case.n_bus();
    let v: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(sol.vm[i], sol.theta[i])).collect();
    let mut p_mismatch: Vec<f64> = case.buses.iter().map(|b| -b.p_load).collect();
    let mut q_mismatch: Vec<f64> = case.buses.iter().map(|b| -b.q_load).collect();
    for (k, g) in case.gens.iter().enumerate() {
        if g.in_service {
            p_mismatch[g.bus] += sol.pg[k];
            q_mismatch[g.bus] += sol.qg[k];
        }
    }
    for i in 0..n {
        let mut current = Complex64::new(0.0, 0.0);
        for k in adm.row_ptr[i]..adm.row_ptr[i + 1] {
            current += adm.values[k] * v[adm.col_idx[k]];
        }
        let s = v[i] * current.conj();
        p_mismatch[i] -= s.re;
        q_mismatch[i] -= s.im;
    }
    let mut branches = Vec::new();
    for (k, (br, blk)) in case.branches.iter().zip(&adm.branches).enumerate() {
        if !br.in_service {
            continue;
        }
        let (vf, vt) = (v[br.from], v[br.to]);
        let sf = vf * (blk.ff.to_complex() * vf + blk.ft.to_complex() * vt).conj();
        let st = vt * (blk.tf.to_complex() * vf + blk.tt.to_complex() * vt).conj();
        branches.push(BranchFlow {
            branch: k,
            p_from: sf.re,
            q_from: sf.im,
            p_to: st.re,
            q_to: st.im,
            s_from: sf.norm(),
            s_to: st.norm(),
            angle_diff: sol.theta[br.from] - sol.theta[br.to],
        });
    }
    Ok(TrueAcEval {
        p_mismatch,
        q_mismatch,
        branches,
    })
}

/// Violation statistics of one constraint class. Max/mean/min run over all
/// elements of the class, zeros included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub elements: usize,
    pub count: usize,
    pub max: f64,
    pub mean: f64,
    pub min: f64,
    /// Element indices (bus, generator or branch) exceeding the tolerance.
    pub violators: Vec<usize>,
}

impl ClassReport {
    fn build(items: impl IntoIterator<Item = (usize, f64)>, tol: f64) -> ClassReport {
        let mut r = ClassReport {
            min: f64::INFINITY,
            ..Default::default()
        };
        let mut sum = 0.0;
        for (idx, v) in items {
            r.elements += 1;
            sum += v;
            r.max = r.max.max(v);
            r.min = r.min.min(v);
            if v > tol {
                r.count += 1;
                r.violators.push(idx);
            }
        }
        if r.elements == 0 {
            r.min = 0.0;
        } else {
            r.mean = sum / r.elements as f64;
        }
        r
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub bus_p: ClassReport,
    pub bus_q: ClassReport,
    pub voltage: ClassReport,
    pub pg: ClassReport,
    pub qg: ClassReport,
    pub angle: ClassReport,
    pub flow: ClassReport,
    pub pass: bool,
}

impl FeasibilityReport {
    pub fn classes(&self) -> [(&'static str, &ClassReport); 7] {
        [
            ("bus_p", &self.bus_p),
            ("bus_q", &self.bus_q),
            ("voltage", &self.voltage),
            ("pg", &self.pg),
            ("qg", &self.qg),
            ("angle", &self.angle),
            ("flow", &self.flow),
        ]
    }
}

fn scaled(v: f64, reference: f64, relative: bool) -> f64 {
    if relative {
        v / reference.abs().max(1.0)
    } else {
        v
    }
}

/// Excess of `x` over the interval `[lo, hi]`, with the violated limit.
fn excess(x: f64, lo: f64, hi: f64) -> (f64, f64) {
    if x < lo {
        (lo - x, lo)
    } else if x > hi {
        (x - hi, hi)
    } else {
        (0.0, hi)
    }
}

/// Check a re-evaluated solution against every constraint class. Counts
/// use strict exceedance of the class tolerance.
pub fn feasibility_check(eval: &TrueAcEval, sol: &OpfSolution, case: &NetworkCase, tol: &Tolerances) -> FeasibilityReport {
    let rel = tol.relative;
    let bus_p = ClassReport::build(
        eval.p_mismatch
            .iter()
            .enumerate()
            .map(|(i, m)| (i, scaled(m.abs(), case.buses[i].p_load, rel.balance))),
        tol.balance_tol,
    );
    let bus_q = ClassReport::build(
        eval.q_mismatch
            .iter()
            .enumerate()
            .map(|(i, m)| (i, scaled(m.abs(), case.buses[i].q_load, rel.balance))),
        tol.balance_tol,
    );
    let voltage = ClassReport::build(
        case.buses.iter().enumerate().map(|(i, b)| {
            let (e, lim) = excess(sol.vm[i], b.v_min, b.v_max);
            (i, scaled(e, lim, rel.voltage))
        }),
        tol.bound_tol,
    );
    let gens = || case.gens.iter().enumerate().filter(|(_, g)| g.in_service);
    let pg = ClassReport::build(
        gens().map(|(k, g)| {
            let (e, lim) = excess(sol.pg[k], g.p_min, g.p_max);
            (k, scaled(e, lim, rel.pg))
        }),
        tol.bound_tol,
    );
    let qg = ClassReport::build(
        gens().map(|(k, g)| {
            let (e, lim) = excess(sol.qg[k], g.q_min, g.q_max);
            (k, scaled(e, lim, rel.qg))
        }),
        tol.bound_tol,
    );
    let angle = ClassReport::build(
        eval.branches
            .iter()
            .filter(|f| case.branches[f.branch].has_angle_limits())
            .map(|f| {
                let br = &case.branches[f.branch];
                let lo = br.ang_min.unwrap_or(f64::NEG_INFINITY);
                let hi = br.ang_max.unwrap_or(f64::INFINITY);
                let (e, lim) = excess(f.angle_diff, lo, hi);
                (f.branch, scaled(e, lim, rel.angle))
            }),
        tol.bound_tol,
    );
    let flow = ClassReport::build(
        eval.branches.iter().filter_map(|f| {
            let rate = case.branches[f.branch].rate_a?;
            let e = (f.s_from.max(f.s_to) - rate).max(0.0);
            Some((f.branch, scaled(e, rate, rel.flow)))
        }),
        tol.bound_tol,
    );
    let mut report = FeasibilityReport {
        bus_p,
        bus_q,
        voltage,
        pg,
        qg,
        angle,
        flow,
        pass: false,
    };
    report.pass = report.classes().iter().all(|(_, c)| c.count == 0);
    report
}

/// Max/mean/min of absolute differences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
}

impl Stats {
    fn of(diffs: impl IntoIterator<Item = f64>) -> Stats {
        let (mut max, mut min, mut sum, mut k) = (0.0f64, f64::INFINITY, 0.0, 0usize);
        for d in diffs {
            let d = d.abs();
            max = max.max(d);
            min = min.min(d);
            sum += d;
            k += 1;
        }
        if k == 0 {
            return Stats::default();
        }
        Stats {
            max,
            mean: sum / k as f64,
            min,
        }
    }
}

/// Variable mismatches between two solutions (per-unit; radians for θ).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub pg: Stats,
    pub qg: Stats,
    pub vm: Stats,
    pub theta: Stats,
    pub p_flow: Stats,
    pub q_flow: Stats,
}

/// Physical line `(min bus id, max bus id)` in external numbering.
pub type LineKey = (u64, u64);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CongestionReport {
    pub a: Vec<LineKey>,
    pub b: Vec<LineKey>,
    /// Lines congested in exactly one of the two solutions.
    pub differing: Vec<LineKey>,
    pub mismatch: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub objective: f64,
    pub iterations: usize,
    pub solve_time_s: f64,
    /// Largest `|θ_i − θ_j|` over in-service branches.
    pub max_angle_diff_rad: f64,
    pub max_angle_diff_deg: f64,
}

/// Side-by-side diagnostics of two solutions of the same case; `a` is the
/// reference (the exact AC model in the standard pipeline).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub case: String,
    pub a: SolveSummary,
    pub b: SolveSummary,
    /// `f_b − f_a` in $/h.
    pub objective_gap_abs: f64,
    /// `100·|f_a − f_b| / max(|f_a|, ε)`.
    pub objective_gap_pct: f64,
    pub mismatch: MismatchReport,
    pub congestion: CongestionReport,
}

fn congested_lines(case: &NetworkCase, sol: &OpfSolution) -> BTreeSet<LineKey> {
    sol.binding
        .flow_from
        .iter()
        .chain(&sol.binding.flow_to)
        .map(|&k| {
            let br = &case.branches[k];
            let (a, b) = (case.buses[br.from].id, case.buses[br.to].id);
            (a.min(b), a.max(b))
        })
        .collect()
}

fn summary(sol: &OpfSolution, eval: &TrueAcEval) -> SolveSummary {
    let max = eval.branches.iter().fold(0.0f64, |m, f| m.max(f.angle_diff.abs()));
    SolveSummary {
        objective: sol.objective,
        iterations: sol.iterations,
        solve_time_s: sol.solve_time_s,
        max_angle_diff_rad: max,
        max_angle_diff_deg: max.to_degrees(),
    }
}

/// Compare two solutions of `case`. Flows of both are recomputed with the
/// exact equations; angles are compared relative to each solution's
/// reference bus.
pub fn compare(a: &OpfSolution, b: &OpfSolution, case: &NetworkCase, adm: &AdmittanceModel) -> Result<ComparisonReport> {
    let ea = evaluate_true_ac(case, adm, a)?;
    let eb = evaluate_true_ac(case, adm, b)?;
    let r = case.ref_bus()?;
    let in_service: Vec<usize> = (0..case.gens.len()).filter(|&k| case.gens[k].in_service).collect();
    let pair = |x: &[f64], y: &[f64]| -> Stats { Stats::of(x.iter().zip(y).map(|(u, v)| u - v)) };
    let pick = |v: &[f64]| -> Vec<f64> { in_service.iter().map(|&k| v[k]).collect() };
    let flows = |e: &TrueAcEval, p: bool| -> Vec<f64> {
        e.branches
            .iter()
            .flat_map(|f| if p { [f.p_from, f.p_to] } else { [f.q_from, f.q_to] })
            .collect()
    };
    let mismatch = MismatchReport {
        pg: pair(&pick(&a.pg), &pick(&b.pg)),
        qg: pair(&pick(&a.qg), &pick(&b.qg)),
        vm: pair(&a.vm, &b.vm),
        theta: Stats::of(
            a.theta
                .iter()
                .zip(&b.theta)
                .map(|(u, v)| (u - a.theta[r]) - (v - b.theta[r])),
        ),
        p_flow: pair(&flows(&ea, true), &flows(&eb, true)),
        q_flow: pair(&flows(&ea, false), &flows(&eb, false)),
    };
    let (ca, cb) = (congested_lines(case, a), congested_lines(case, b));
    let differing: Vec<LineKey> = ca.symmetric_difference(&cb).copied().collect();
    Ok(ComparisonReport {
        case: case.name.clone(),
        a: summary(a, &ea),
        b: summary(b, &eb),
        objective_gap_abs: b.objective - a.objective,
        objective_gap_pct: 100.0 * (a.objective - b.objective).abs() / a.objective.abs().max(f64::EPSILON),
        mismatch,
        congestion: CongestionReport {
            mismatch: differing.len(),
            a: ca.into_iter().collect(),
            b: cb.into_iter().collect(),
            differing,
        },
    })
}

impl fmt::Display for FeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>6} {:>12} {:>12} {:>12}", "class", "count", "max", "avg", "min")?;
        for (name, c) in self.classes() {
            writeln!(f, "{:<8} {:>6} {:>12.3e} {:>12.3e} {:>12.3e}", name, c.count, c.max, c.mean, c.min)?;
        }
        write!(f, "feasible: {}", if self.pass { "yes" } else { "no" })
    }
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "case {}", self.case)?;
        writeln!(
            f,
            "objective  a = {:.6}  b = {:.6}  gap = {:.3e} $/h ({:.6} %)",
            self.a.objective, self.b.objective, self.objective_gap_abs, self.objective_gap_pct
        )?;
        writeln!(
            f,
            "iterations a = {}  b = {}   time a = {:.3} s  b = {:.3} s",
            self.a.iterations, self.b.iterations, self.a.solve_time_s, self.b.solve_time_s
        )?;
        writeln!(
            f,
            "max |θi-θj| a = {:.3}°  b = {:.3}°",
            self.a.max_angle_diff_deg, self.b.max_angle_diff_deg
        )?;
        writeln!(
            f,
            "congestion a = {}  b = {}  mismatch = {}",
            self.congestion.a.len(),
            self.congestion.b.len(),
            self.congestion.mismatch
        )?;
        writeln!(f, "{:<8} {:>12} {:>12} {:>12}  (p.u., rad)", "mismatch", "max", "avg", "min")?;
        let m = &self.mismatch;
        for (name, s) in [
            ("pg", m.pg),
            ("qg", m.qg),
            ("vm", m.vm),
            ("theta", m.theta),
            ("p_flow", m.p_flow),
            ("q_flow", m.q_flow),
        ] {
            writeln!(f, "{:<8} {:>12.3e} {:>12.3e} {:>12.3e}", name, s.max, s.mean, s.min)?;
        }
        Ok(())
    }
}
