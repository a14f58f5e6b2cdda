//! AC OPF as a sparse NLP, with the power-flow kernels either exact
//! (`Trig`) or replaced by pre-rotated all-pass surrogates (`AllPass`).
//!
//! Variables are `x = [θ (all buses but the reference) | V | p_g | q_g]`.
//! Equalities are the `2n` nodal P and Q balances; inequalities are the
//! finite angle-difference limits and `P² + Q² − rate² ≤ 0` at both ends of
//! every rated branch. Both flow modes share layout, bounds and sparsity.

mod eval;

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dcflow::{DcSolution, RotationTable};
use crate::error::{Error, Result};
use crate::ipm::{Nlp, SolveResult, SolveStatus};
use crate::kernels::KernelParam;
use crate::netmodel::{AdmittanceModel, NetworkCase};

pub use eval::EvalBundle;

pub(crate) const NO: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub enum FlowMode {
    Trig,
    AllPass {
        kernel: KernelParam,
        rotations: RotationTable,
    },
}

impl FlowMode {
    pub fn name(&self) -> &'static str {
        match self {
            FlowMode::Trig => "trig",
            FlowMode::AllPass { .. } => "allpass",
        }
    }
}

/// Index map of the decision vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub n_bus: usize,
    pub ref_bus: usize,
    /// Column of `θ_i`, `None` for the reference bus.
    pub theta: Vec<Option<usize>>,
    pub v_start: usize,
    pub pg_start: usize,
    pub qg_start: usize,
    /// Case indices of the in-service generators, in variable order.
    pub gens: Vec<usize>,
    pub n_vars: usize,
}

impl VariableLayout {
    fn new(case: &NetworkCase) -> Result<Self> {
        let n = case.n_bus();
        let r = case.ref_bus()?;
        let theta = (0..n)
            .map(|i| match i.cmp(&r) {
                std::cmp::Ordering::Less => Some(i),
                std::cmp::Ordering::Equal => None,
                std::cmp::Ordering::Greater => Some(i - 1),
            })
            .collect();
        let gens: Vec<usize> = (0..case.gens.len()).filter(|&k| case.gens[k].in_service).collect();
        let v_start = n - 1;
        let pg_start = v_start + n;
        let qg_start = pg_start + gens.len();
        Ok(VariableLayout {
            n_bus: n,
            ref_bus: r,
            theta,
            v_start,
            pg_start,
            qg_start,
            n_vars: qg_start + gens.len(),
            gens,
        })
    }

    pub fn theta_col(&self, bus: usize) -> usize {
        self.theta[bus].unwrap_or(NO)
    }

    pub fn v_col(&self, bus: usize) -> usize {
        self.v_start + bus
    }

    pub fn theta_of(&self, x: &[f64], bus: usize) -> f64 {
        self.theta[bus].map_or(0.0, |c| x[c])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IneqKind {
    /// `θ_f − θ_t − ang_max ≤ 0`
    AngleMax,
    /// `ang_min − (θ_f − θ_t) ≤ 0`
    AngleMin,
    /// `P_f² + Q_f² − rate² ≤ 0`
    FlowFrom,
    /// `P_t² + Q_t² − rate² ≤ 0`
    FlowTo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IneqInfo {
    pub kind: IneqKind,
    pub branch: usize,
}

/// One off-diagonal Ybus entry as a term of the balance at bus `i`.
#[derive(Debug, Clone)]
pub(crate) struct Coupling {
    pub i: usize,
    pub j: usize,
    /// Position in the Ybus storage (and in `RotationTable::pair_refs`).
    pub pos: usize,
    pub mag: f64,
    pub ang: f64,
    /// Columns of `[θ_i, θ_j, V_i, V_j]`.
    pub vars: [usize; 4],
    pub jac_p: [usize; 4],
    pub jac_q: [usize; 4],
    pub hess: [usize; 10],
}

/// One end of a branch: `P = A·Va² + M·Va·Vb·K_c`, `Q = B·Va² + M·Va·Vb·K_s`.
#[derive(Debug, Clone)]
pub(crate) struct FlowEnd {
    pub branch: usize,
    pub from_side: bool,
    pub a: usize,
    pub b: usize,
    pub self_p: f64,
    pub self_q: f64,
    pub mut_mag: f64,
    pub mut_ang: f64,
    pub vars: [usize; 4],
}

#[derive(Debug, Clone)]
pub(crate) struct FlowRow {
    pub end: FlowEnd,
    pub rate2: f64,
    pub jac: [usize; 4],
    pub hess: [usize; 10],
}

#[derive(Debug, Clone)]
pub(crate) struct AngleRow {
    pub cols: [usize; 2],
    pub jac: [usize; 2],
    pub sign: f64,
    pub limit: f64,
}

/// Coordinate list with deduplication, used to fix sparsity patterns.
#[derive(Debug, Default)]
struct SlotMap {
    coords: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl SlotMap {
    fn slot(&mut self, r: usize, c: usize) -> usize {
        if r == NO || c == NO {
            return NO;
        }
        let coords = &mut self.coords;
        *self.index.entry((r, c)).or_insert_with(|| {
            coords.push((r, c));
            coords.len() - 1
        })
    }

    fn lower(&mut self, r: usize, c: usize) -> usize {
        self.slot(r.max(c), r.min(c))
    }
}

/// Lower-triangle slots of the local block over `vars`.
fn local_hess_slots(h: &mut SlotMap, vars: &[usize; 4]) -> [usize; 10] {
    let mut out = [NO; 10];
    for r in 0..4 {
        for c in 0..=r {
            out[r * (r + 1) / 2 + c] = if vars[r] == NO || vars[c] == NO {
                NO
            } else {
                h.lower(vars[r], vars[c])
            };
        }
    }
    out
}

/// Assembled OPF. Immutable after construction; evaluation is reentrant.
#[derive(Debug, Clone)]
pub struct OpfProblem<'a> {
    pub case: &'a NetworkCase,
    pub adm: &'a AdmittanceModel,
    pub mode: FlowMode,
    pub layout: VariableLayout,
    pub ineqs: Vec<IneqInfo>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    pub(crate) couplings: Vec<Coupling>,
    /// Per bus `(|Y_ii|·cos(−φ_ii), |Y_ii|·sin(−φ_ii))`.
    pub(crate) diag: Vec<(f64, f64)>,
    pub(crate) diag_jac_p: Vec<usize>,
    pub(crate) diag_jac_q: Vec<usize>,
    pub(crate) diag_hess: Vec<usize>,
    pub(crate) gen_jac: Vec<(usize, usize)>,
    pub(crate) gen_hess: Vec<usize>,
    pub(crate) flows: Vec<FlowRow>,
    pub(crate) angles: Vec<AngleRow>,
    /// Inequality row of each entry in `flows` / `angles`.
    pub(crate) flow_row: Vec<usize>,
    pub(crate) angle_row: Vec<usize>,
    jac_eq: Vec<(usize, usize)>,
    jac_ineq: Vec<(usize, usize)>,
    hess: Vec<(usize, usize)>,
}

impl<'a> OpfProblem<'a> {
    pub fn n_eq(&self) -> usize {
        2 * self.layout.n_bus
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn jac_eq_coords(&self) -> &[(usize, usize)] {
        &self.jac_eq
    }

    pub fn jac_ineq_coords(&self) -> &[(usize, usize)] {
        &self.jac_ineq
    }

    pub fn hess_coords(&self) -> &[(usize, usize)] {
        &self.hess
    }

    /// Cost in $/h of the generator part of `x`.
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.layout
            .gens
            .iter()
            .enumerate()
            .map(|(k, &g)| self.case.gens[g].cost.value(x[self.layout.pg_start + k]))
            .sum()
    }
}

/// Assemble the NLP for `case` under `mode`.
pub fn assemble<'a>(case: &'a NetworkCase, adm: &'a AdmittanceModel, mode: FlowMode) -> Result<OpfProblem<'a>> {
    let n = case.n_bus();
    if adm.n != n || adm.branches.len() != case.branches.len() {
        return Err(Error::Assembly("admittance model does not match the case".into()));
    }
    if let FlowMode::AllPass { rotations, .. } = &mode {
        if rotations.pair_refs.len() != adm.nnz()
            || rotations.branch_from.len() != case.branches.len()
            || rotations.branch_to.len() != case.branches.len()
            || rotations.theta_dc.len() != n
        {
            return Err(Error::Assembly(
                "all-pass mode needs rotation references for every Ybus pair and branch end".into(),
            ));
        }
    }
    let layout = VariableLayout::new(case)?;
    let nv = layout.n_vars;
    let mut lower = vec![0.0; nv];
    let mut upper = vec![0.0; nv];
    for i in 0..n {
        if let Some(c) = layout.theta[i] {
            lower[c] = -PI;
            upper[c] = PI;
        }
        lower[layout.v_col(i)] = case.buses[i].v_min;
        upper[layout.v_col(i)] = case.buses[i].v_max;
    }
    for (k, &g) in layout.gens.iter().enumerate() {
        let gen = &case.gens[g];
        lower[layout.pg_start + k] = gen.p_min;
        upper[layout.pg_start + k] = gen.p_max;
        lower[layout.qg_start + k] = gen.q_min;
        upper[layout.qg_start + k] = gen.q_max;
    }

    let mut jh = SlotMap::default();
    let mut jg = SlotMap::default();
    let mut hs = SlotMap::default();

    // Generator columns in the balances and the objective curvature.
    let mut gen_jac = Vec::with_capacity(layout.gens.len());
    let mut gen_hess = Vec::with_capacity(layout.gens.len());
    for (k, &g) in layout.gens.iter().enumerate() {
        let bus = case.gens[g].bus;
        let p = jh.slot(bus, layout.pg_start + k);
        let q = jh.slot(n + bus, layout.qg_start + k);
        gen_jac.push((p, q));
        let col = layout.pg_start + k;
        gen_hess.push(hs.lower(col, col));
    }

    let mut diag = vec![(0.0, 0.0); n];
    let mut diag_jac_p = vec![NO; n];
    let mut diag_jac_q = vec![NO; n];
    let mut diag_hess = vec![NO; n];
    let mut couplings = Vec::with_capacity(adm.nnz() - n);
    for (i, j, pos) in adm.pattern() {
        let e = adm.entries[pos];
        if i == j {
            diag[i] = (e.mag * (-e.ang).cos(), e.mag * (-e.ang).sin());
            let vc = layout.v_col(i);
            diag_jac_p[i] = jh.slot(i, vc);
            diag_jac_q[i] = jh.slot(n + i, vc);
            diag_hess[i] = hs.lower(vc, vc);
            continue;
        }
        let vars = [layout.theta_col(i), layout.theta_col(j), layout.v_col(i), layout.v_col(j)];
        let jac_p = vars.map(|c| jh.slot(i, c));
        let jac_q = vars.map(|c| jh.slot(n + i, c));
        let hess = local_hess_slots(&mut hs, &vars);
        couplings.push(Coupling {
            i,
            j,
            pos,
            mag: e.mag,
            ang: e.ang,
            vars,
            jac_p,
            jac_q,
            hess,
        });
    }

    let mut ineqs = Vec::new();
    let mut flows = Vec::new();
    let mut angles = Vec::new();
    let mut flow_row = Vec::new();
    let mut angle_row = Vec::new();
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        let (f, t) = (br.from, br.to);
        let (tf, tt) = (layout.theta_col(f), layout.theta_col(t));
        for (limit, kind, sign) in [
            (br.ang_max, IneqKind::AngleMax, 1.0),
            (br.ang_min, IneqKind::AngleMin, -1.0),
        ] {
            if let Some(lim) = limit {
                let row = ineqs.len();
                ineqs.push(IneqInfo { kind, branch: k });
                angle_row.push(row);
                angles.push(AngleRow {
                    cols: [tf, tt],
                    jac: [jg.slot(row, tf), jg.slot(row, tt)],
                    sign,
                    limit: lim,
                });
            }
        }
        let Some(rate) = br.rate_a else { continue };
        let blk = &adm.branches[k];
        for from_side in [true, false] {
            let (a, b, own, mutual) = if from_side {
                (f, t, blk.ff, blk.ft)
            } else {
                (t, f, blk.tt, blk.tf)
            };
            let row = ineqs.len();
            ineqs.push(IneqInfo {
                kind: if from_side { IneqKind::FlowFrom } else { IneqKind::FlowTo },
                branch: k,
            });
            let vars = [layout.theta_col(a), layout.theta_col(b), layout.v_col(a), layout.v_col(b)];
            let jac = vars.map(|c| jg.slot(row, c));
            let hess = local_hess_slots(&mut hs, &vars);
            flow_row.push(row);
            flows.push(FlowRow {
                end: FlowEnd {
                    branch: k,
                    from_side,
                    a,
                    b,
                    self_p: own.mag * own.ang.cos(),
                    self_q: -own.mag * own.ang.sin(),
                    mut_mag: mutual.mag,
                    mut_ang: mutual.ang,
                    vars,
                },
                rate2: rate * rate,
                jac,
                hess,
            });
        }
    }

    Ok(OpfProblem {
        case,
        adm,
        mode,
        layout,
        ineqs,
        lower,
        upper,
        couplings,
        diag,
        diag_jac_p,
        diag_jac_q,
        diag_hess,
        gen_jac,
        gen_hess,
        flows,
        angles,
        flow_row,
        angle_row,
        jac_eq: jh.coords,
        jac_ineq: jg.coords,
        hess: hs.coords,
    })
}

/// Distance kept from every bound at the starting point.
pub const START_MARGIN: f64 = 1e-4;

fn interior(v: f64, lo: f64, hi: f64, index: usize) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::EmptyInterior { index, lower: lo, upper: hi });
    }
    let margin = START_MARGIN.min(0.25 * (hi - lo));
    Ok(v.clamp(lo + margin, hi - margin))
}

/// Starting point: `V = 1`, `θ = θ_dc` (or 0), generator outputs at their
/// bound midpoints, all pushed strictly inside the bounds.
pub fn initial_point(problem: &OpfProblem, dc: Option<&DcSolution>) -> Result<Vec<f64>> {
    let l = &problem.layout;
    let (lo, hi) = problem.bounds();
    let mut x = vec![0.0; l.n_vars];
    for i in 0..l.n_bus {
        if let Some(c) = l.theta[i] {
            let th = dc.map_or(0.0, |d| d.theta_dc[i]);
            x[c] = interior(th, lo[c], hi[c], c)?;
        }
        let c = l.v_col(i);
        x[c] = interior(1.0, lo[c], hi[c], c)?;
    }
    for c in l.pg_start..l.n_vars {
        let mid = if lo[c].is_finite() && hi[c].is_finite() {
            0.5 * (lo[c] + hi[c])
        } else {
            0.0
        };
        x[c] = interior(mid, lo[c], hi[c], c)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchSide {
    From,
    To,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BindingFlow {
    pub branch: usize,
    pub side: BranchSide,
}

/// Binding inequalities split by class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BindingSet {
    pub flow_from: Vec<usize>,
    pub flow_to: Vec<usize>,
    pub angle: Vec<usize>,
}

impl BindingSet {
    pub fn flows(&self) -> Vec<BindingFlow> {
        let mut v: Vec<BindingFlow> = self
            .flow_from
            .iter()
            .map(|&b| BindingFlow {
                branch: b,
                side: BranchSide::From,
            })
            .chain(self.flow_to.iter().map(|&b| BindingFlow {
                branch: b,
                side: BranchSide::To,
            }))
            .collect();
        v.sort_by_key(|f| (f.branch, f.side));
        v
    }
}

pub fn classify_binding(problem: &OpfProblem, binding: &[usize]) -> BindingSet {
    let mut set = BindingSet::default();
    for &row in binding {
        let info = problem.ineqs[row];
        match info.kind {
            IneqKind::FlowFrom => set.flow_from.push(info.branch),
            IneqKind::FlowTo => set.flow_to.push(info.branch),
            IneqKind::AngleMax | IneqKind::AngleMin => set.angle.push(info.branch),
        }
    }
    set.angle.dedup();
    set
}

/// Solution in network terms. Generator vectors follow the case's generator
/// list (out-of-service units report 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfSolution {
    pub mode: String,
    pub status: SolveStatus,
    pub objective: f64,
    pub iterations: usize,
    /// Radians, reference bus at 0.
    pub theta: Vec<f64>,
    pub vm: Vec<f64>,
    pub pg: Vec<f64>,
    pub qg: Vec<f64>,
    /// Nodal balance multipliers in $/h per p.u.
    pub lambda_p: Vec<f64>,
    pub lambda_q: Vec<f64>,
    pub binding: BindingSet,
    pub solve_time_s: f64,
}

impl OpfSolution {
    pub fn from_result(problem: &OpfProblem, res: &SolveResult) -> OpfSolution {
        let l = &problem.layout;
        let x = &res.x;
        let n = l.n_bus;
        let mut pg = vec![0.0; problem.case.gens.len()];
        let mut qg = vec![0.0; problem.case.gens.len()];
        for (k, &g) in l.gens.iter().enumerate() {
            pg[g] = x[l.pg_start + k];
            qg[g] = x[l.qg_start + k];
        }
        OpfSolution {
            mode: problem.mode.name().to_string(),
            status: res.status,
            objective: res.objective,
            iterations: res.iterations,
            theta: (0..n).map(|i| l.theta_of(x, i)).collect(),
            vm: (0..n).map(|i| x[l.v_col(i)]).collect(),
            pg,
            qg,
            lambda_p: res.multipliers.eq[..n].to_vec(),
            lambda_q: res.multipliers.eq[n..].to_vec(),
            binding: classify_binding(problem, &res.binding_ineq),
            solve_time_s: res.timings.total_s,
        }
    }
}

impl<'a> OpfProblem<'a> {
    /// CSV dump (`kind,index,value`) of bounds, equality and inequality
    /// values at `x`, for regression fixtures.
    pub fn debug_csv(&self, x: &[f64]) -> Result<String> {
        let mut h = vec![0.0; self.n_eq()];
        let mut g = vec![0.0; self.ineqs.len()];
        self.eq_values(x, &mut h)?;
        self.ineq_values(x, &mut g)?;
        let mut out = String::from("kind,index,value\n");
        for (i, v) in x.iter().enumerate() {
            out.push_str(&format!("x,{i},{v:e}\n"));
        }
        for (i, v) in h.iter().enumerate() {
            out.push_str(&format!("h,{i},{v:e}\n"));
        }
        for (i, v) in g.iter().enumerate() {
            out.push_str(&format!("g,{i},{v:e}\n"));
        }
        for (r, c) in &self.jac_eq {
            out.push_str(&format!("jh,{r},{c}\n"));
        }
        for (r, c) in &self.jac_ineq {
            out.push_str(&format!("jg,{r},{c}\n"));
        }
        Ok(out)
    }
}
