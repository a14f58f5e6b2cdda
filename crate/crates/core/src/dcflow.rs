//! DC power flow / DC OPF and the per-pair reference angles used to
//! pre-rotate the all-pass kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ipm::{self, IpmOptions, QuadraticProgram, SolveStatus};
use crate::kernels::RotationRef;
use crate::netmodel::{AdmittanceModel, NetworkCase};
use crate::sparse::{minimum_degree, CsrPattern, LdlFactor, LdlSymbolic, NodeClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreRotation {
    #[default]
    DcPf,
    DcOpf,
    None,
}

impl std::str::FromStr for PreRotation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dcpf" => Ok(PreRotation::DcPf),
            "dcopf" => Ok(PreRotation::DcOpf),
            "none" => Ok(PreRotation::None),
            other => Err(Error::InvalidParameter(format!("unknown pre-rotation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcSolution {
    pub mode: PreRotation,
    /// Bus angles in radians, `theta_dc[ref] = 0`.
    pub theta_dc: Vec<f64>,
    /// Per-unit generator outputs (DC OPF only).
    pub dispatch: Option<Vec<f64>>,
    /// DC OPF cost in $/h (DC OPF only).
    pub objective: Option<f64>,
    /// ‖B′θ − P‖∞ on the reduced system (0 for the zero-angle reference).
    pub residual: f64,
}

impl DcSolution {
    /// All-zero reference angles.
    pub fn zero(n_bus: usize) -> Self {
        DcSolution {
            mode: PreRotation::None,
            theta_dc: vec![0.0; n_bus],
            dispatch: None,
            objective: None,
            residual: 0.0,
        }
    }
}

/// Susceptance matrix and shift injections of the lossless model.
struct DcModel {
    /// `(i, j, B_ij)` entries, full symmetric, duplicates allowed.
    b_entries: Vec<(usize, usize, f64)>,
    /// Constant nodal injection of phase shifters (add to the net injection).
    shift_inj: Vec<f64>,
    /// Per in-service branch `(branch, b = 1/(x·tap))`.
    branch_b: Vec<(usize, f64)>,
}

fn dc_model(case: &NetworkCase) -> Result<DcModel> {
    let n = case.n_bus();
    let mut b_entries = Vec::new();
    let mut shift_inj = vec![0.0; n];
    let mut branch_b = Vec::new();
    for (k, br) in case.branches.iter().enumerate() {
        if !br.in_service {
            continue;
        }
        if br.x == 0.0 || !(br.tap > 0.0) {
            return Err(Error::InvalidBranch {
                branch: k,
                msg: "DC model needs x != 0 and a positive tap".into(),
            });
        }
        let b = 1.0 / (br.x * br.tap);
        let (f, t) = (br.from, br.to);
        b_entries.extend([(f, f, b), (t, t, b), (f, t, -b), (t, f, -b)]);
        // Flow f→t is b·(θf − θt − shift).
        shift_inj[f] += b * br.shift;
        shift_inj[t] -= b * br.shift;
        branch_b.push((k, b));
    }
    Ok(DcModel {
        b_entries,
        shift_inj,
        branch_b,
    })
}

/// Net scheduled injection per bus: recorded dispatch minus load and shunt
/// conductance at nominal voltage.
fn net_injection(case: &NetworkCase) -> Vec<f64> {
    let mut p: Vec<f64> = case.buses.iter().map(|b| -b.p_load - b.g_shunt).collect();
    for g in case.gens.iter().filter(|g| g.in_service) {
        p[g.bus] += g.p_init;
    }
    p
}

/// Solve the DC power flow with the reference bus removed.
pub fn solve_dc_pf(case: &NetworkCase) -> Result<DcSolution> {
    let n = case.n_bus();
    let r = case.ref_bus()?;
    let model = dc_model(case)?;
    let mut rhs_full = net_injection(case);
    for i in 0..n {
        rhs_full[i] += model.shift_inj[i];
    }
    // Reduced index: buses other than the reference.
    let red: Vec<Option<usize>> = (0..n)
        .map(|i| match i.cmp(&r) {
            std::cmp::Ordering::Less => Some(i),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(i - 1),
        })
        .collect();
    let nr = n - 1;
    let mut theta = vec![0.0; n];
    if nr == 0 {
        return Ok(DcSolution {
            mode: PreRotation::DcPf,
            theta_dc: theta,
            dispatch: None,
            objective: None,
            residual: 0.0,
        });
    }
    let mut coords = Vec::new();
    let mut vals = Vec::new();
    for i in 0..nr {
        coords.push((i, i));
        vals.push(0.0);
    }
    for &(i, j, b) in &model.b_entries {
        if let (Some(ri), Some(rj)) = (red[i], red[j]) {
            if ri >= rj {
                coords.push((ri, rj));
                vals.push(b);
            }
        }
    }
    let pat = CsrPattern::from_coords(nr, nr, &coords);
    let mut lower = vec![0.0; pat.nnz()];
    pat.accumulate(&vals, &mut lower);
    let mut adj = vec![Vec::new(); nr];
    for &(i, j) in &coords {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    let sym = LdlSymbolic::new(&pat, minimum_degree(&adj, &vec![NodeClass::Regular; nr]))?;
    let f = LdlFactor::factor(&sym, &lower, 1e-12);
    // Series-compensated branches (x < 0) can make B′ indefinite; only a
    // singular B′ (islanded network) is an error.
    if f.inertia.zero > 0 {
        return Err(Error::Singular(f.inertia.zero));
    }
    let rhs: Vec<f64> = (0..n).filter(|&i| i != r).map(|i| rhs_full[i]).collect();
    let mut x = rhs.clone();
    f.solve(&sym, &mut x);
    let mut bx = vec![0.0; nr];
    pat.sym_mul(&lower, &x, &mut bx);
    let residual = bx.iter().zip(&rhs).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
    for i in 0..n {
        if let Some(ri) = red[i] {
            theta[i] = x[ri];
        }
    }
    Ok(DcSolution {
        mode: PreRotation::DcPf,
        theta_dc: theta,
        dispatch: None,
        objective: None,
        residual,
    })
}

/// Economic dispatch on the lossless network with rated-branch flow limits,
/// solved as a convex QP by the interior-point method.
pub fn solve_dc_opf(case: &NetworkCase, opts: &IpmOptions) -> Result<DcSolution> {
    let n = case.n_bus();
    let r = case.ref_bus()?;
    let model = dc_model(case)?;
    let gens: Vec<usize> = (0..case.gens.len()).filter(|&k| case.gens[k].in_service).collect();
    let col: Vec<Option<usize>> = (0..n)
        .map(|i| match i.cmp(&r) {
            std::cmp::Ordering::Less => Some(i),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(i - 1),
        })
        .collect();
    let nt = n - 1;
    let nv = nt + gens.len();
    let mut qp = QuadraticProgram::new(nv);
    for (k, &gi) in gens.iter().enumerate() {
        let g = &case.gens[gi];
        let v = nt + k;
        qp.lo[v] = g.p_min;
        qp.hi[v] = g.p_max;
        qp.c[v] = g.cost.c1;
        qp.c0 += g.cost.c0;
        if g.cost.c2 != 0.0 {
            qp.q.push((v, v, 2.0 * g.cost.c2));
        }
    }
    // Balance: (Bθ)_i − Σ pg = shift_inj_i − p_load_i − g_shunt_i.
    let b_eq: Vec<f64> = (0..n)
        .map(|i| model.shift_inj[i] - case.buses[i].p_load - case.buses[i].g_shunt)
        .collect();
    for &(i, j, b) in &model.b_entries {
        if let Some(cj) = col[j] {
            qp.a_eq.push((i, cj, b));
        }
    }
    for (k, &gi) in gens.iter().enumerate() {
        qp.a_eq.push((case.gens[gi].bus, nt + k, -1.0));
    }
    qp.b_eq = b_eq;
    for &(k, b) in &model.branch_b {
        let br = &case.branches[k];
        let Some(rate) = br.rate_a else { continue };
        // ±b(θf − θt) ≤ rate ± b·shift
        for sign in [1.0, -1.0] {
            let row = qp.b_in.len();
            if let Some(cf) = col[br.from] {
                qp.a_in.push((row, cf, sign * b));
            }
            if let Some(ct) = col[br.to] {
                qp.a_in.push((row, ct, -sign * b));
            }
            qp.b_in.push(rate + sign * b * br.shift);
        }
    }
    let mut x0 = vec![0.0; nv];
    for (k, &gi) in gens.iter().enumerate() {
        let g = &case.gens[gi];
        if !(g.p_min < g.p_max) {
            return Err(Error::EmptyInterior {
                index: nt + k,
                lower: g.p_min,
                upper: g.p_max,
            });
        }
        x0[nt + k] = 0.5 * (g.p_min + g.p_max);
    }
    let res = ipm::solve(&qp, opts, &x0)?;
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solve(format!(
            "DC OPF did not converge: {:?}{}",
            res.status,
            res.message.map(|m| format!(" ({m})")).unwrap_or_default()
        )));
    }
    let mut theta = vec![0.0; n];
    for i in 0..n {
        if let Some(c) = col[i] {
            theta[i] = res.x[c];
        }
    }
    Ok(DcSolution {
        mode: PreRotation::DcOpf,
        theta_dc: theta,
        dispatch: Some(res.x[nt..].to_vec()),
        objective: Some(res.objective),
        residual: res.kkt.primal,
    })
}

/// Reference angles for every stored Ybus pair and both ends of every
/// branch: `δ_dc = θ_i − θ_j − φ` with `φ` the angle of the respective
/// admittance entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationTable {
    pub theta_dc: Vec<f64>,
    /// Aligned with the Ybus storage (`AdmittanceModel::entries`).
    pub pair_refs: Vec<RotationRef>,
    /// From side of each branch, built with the angle of `y_ft`.
    pub branch_from: Vec<RotationRef>,
    /// To side of each branch, built with the angle of `y_tf`.
    pub branch_to: Vec<RotationRef>,
}

impl RotationTable {
    /// Reference of the stored pair `(i, j)` or `None` outside the pattern.
    pub fn pair(&self, adm: &AdmittanceModel, i: usize, j: usize) -> Option<&RotationRef> {
        adm.position(i, j).map(|k| &self.pair_refs[k])
    }
}

pub fn rotation_refs(dc: &DcSolution, case: &NetworkCase, adm: &AdmittanceModel) -> RotationTable {
    let th = &dc.theta_dc;
    let pair_refs = adm
        .pattern()
        .map(|(i, j, k)| RotationRef::new((th[i] - th[j]) - adm.entries[k].ang))
        .collect();
    let mut branch_from = Vec::with_capacity(case.branches.len());
    let mut branch_to = Vec::with_capacity(case.branches.len());
    for (br, blk) in case.branches.iter().zip(&adm.branches) {
        let (f, t) = (br.from, br.to);
        branch_from.push(RotationRef::new((th[f] - th[t]) - blk.ft.ang));
        branch_to.push(RotationRef::new((th[t] - th[f]) - blk.tf.ang));
    }
    RotationTable {
        theta_dc: th.clone(),
        pair_refs,
        branch_from,
        branch_to,
    }
}

/// Reference angles for the requested pre-rotation mode.
pub fn prerotation(case: &NetworkCase, mode: PreRotation, opts: &IpmOptions) -> Result<DcSolution> {
    match mode {
        PreRotation::DcPf => solve_dc_pf(case),
        PreRotation::DcOpf => solve_dc_opf(case, opts),
        PreRotation::None => Ok(DcSolution::zero(case.n_bus())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, BranchRecord, BusKind, BusRecord, GenRecord, PolyCost};
    use nalgebra::{DMatrix, DVector};

    fn bus(id: u64, kind: BusKind, p_load: f64) -> BusRecord {
        BusRecord {
            id,
            kind,
            p_load,
            q_load: 0.0,
            g_shunt: 0.0,
            b_shunt: 0.0,
            v_min: 0.9,
            v_max: 1.1,
            v_init: 1.0,
            theta_init: 0.0,
        }
    }

    fn line(from: usize, to: usize, x: f64) -> BranchRecord {
        BranchRecord {
            from,
            to,
            r: 0.0,
            x,
            b_charge: 0.0,
            tap: 1.0,
            shift: 0.0,
            rate_a: None,
            ang_min: None,
            ang_max: None,
            in_service: true,
        }
    }

    fn gen(bus: usize, p_init: f64, c1: f64) -> GenRecord {
        GenRecord {
            bus,
            p_min: 0.0,
            p_max: 5.0,
            q_min: -1.0,
            q_max: 1.0,
            p_init,
            q_init: 0.0,
            in_service: true,
            cost: PolyCost { c2: 10.0, c1, c0: 0.0 },
        }
    }

    fn two_bus() -> NetworkCase {
        NetworkCase {
            name: "two".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusKind::Ref, 0.0), bus(2, BusKind::Pq, 1.0)],
            gens: vec![gen(0, 1.0, 1.0)],
            branches: vec![line(0, 1, 0.1)],
        }
    }

    fn load_case(name: &str) -> NetworkCase {
        let path = format!("{}/../../data/cases/{name}.m", env!("CARGO_MANIFEST_DIR"));
        let text = std::fs::read_to_string(path).unwrap();
        crate::netmodel::parse_matpower_case(&text).unwrap().prepared().unwrap()
    }

    #[test]
    fn two_bus_transfer() {
        let dc = solve_dc_pf(&two_bus()).unwrap();
        assert_eq!(dc.theta_dc[0], 0.0);
        assert!((dc.theta_dc[1] + 0.1).abs() < 1e-14);
    }

    #[test]
    fn no_injection_gives_flat_angles() {
        let mut c = two_bus();
        c.buses[1].p_load = 0.0;
        c.gens[0].p_init = 0.0;
        assert!(solve_dc_pf(&c).unwrap().theta_dc.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn case9_matches_dense_solve() {
        let case = load_case("case9");
        let dc = solve_dc_pf(&case).unwrap();
        assert!(dc.residual <= 1e-10);
        // Dense oracle of the same reduced system.
        let n = case.n_bus();
        let r = case.ref_bus().unwrap();
        let mut b = DMatrix::<f64>::zeros(n, n);
        let mut p = DVector::<f64>::zeros(n);
        for br in case.branches.iter().filter(|b| b.in_service) {
            let y = 1.0 / (br.x * br.tap);
            b[(br.from, br.from)] += y;
            b[(br.to, br.to)] += y;
            b[(br.from, br.to)] -= y;
            b[(br.to, br.from)] -= y;
            p[br.from] += y * br.shift;
            p[br.to] -= y * br.shift;
        }
        for (i, bs) in case.buses.iter().enumerate() {
            p[i] -= bs.p_load + bs.g_shunt;
        }
        for g in &case.gens {
            p[g.bus] += g.p_init;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
        let br = b.select_rows(&keep).select_columns(&keep);
        let pr = p.select_rows(&keep);
        let th = br.lu().solve(&pr).unwrap();
        for (k, &i) in keep.iter().enumerate() {
            assert!((th[k] - dc.theta_dc[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shifter_injection_moves_angles() {
        let mut c = two_bus();
        c.branches[0].shift = 0.05;
        // Same flow requires θ1 − θ2 − 0.05 = 0.1
        let dc = solve_dc_pf(&c).unwrap();
        assert!((dc.theta_dc[1] + 0.15).abs() < 1e-14);
    }

    #[test]
    fn disconnected_reduced_matrix_is_singular() {
        let mut c = two_bus();
        c.branches[0].in_service = false;
        assert!(matches!(solve_dc_pf(&c), Err(Error::Singular(_))));
    }

    #[test]
    fn single_generator_dc_opf() {
        let dc = solve_dc_opf(&two_bus(), &IpmOptions::default()).unwrap();
        let pg = dc.dispatch.unwrap();
        assert!((pg[0] - 1.0).abs() < 1e-8);
        assert!((dc.theta_dc[1] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn symmetric_generators_split_evenly() {
        // gens at buses 0 and 2, load at bus 1 in the middle
        let c = NetworkCase {
            name: "sym".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusKind::Ref, 0.0), bus(2, BusKind::Pq, 1.0), bus(3, BusKind::Pv, 0.0)],
            gens: vec![gen(0, 0.5, 2.0), gen(2, 0.5, 2.0)],
            branches: vec![line(0, 1, 0.1), line(2, 1, 0.1)],
        };
        let pg = solve_dc_opf(&c, &IpmOptions::default()).unwrap().dispatch.unwrap();
        assert!((pg[0] - 0.5).abs() < 1e-8 && (pg[1] - 0.5).abs() < 1e-8, "{pg:?}");
    }

    #[test]
    fn dc_opf_respects_flow_limit() {
        let mut c = NetworkCase {
            name: "lim".into(),
            base_mva: 100.0,
            buses: vec![bus(1, BusKind::Ref, 0.0), bus(2, BusKind::Pv, 1.0)],
            gens: vec![gen(0, 1.0, 1.0), gen(1, 0.0, 50.0)],
            branches: vec![line(0, 1, 0.1)],
        };
        c.branches[0].rate_a = Some(0.6);
        let dc = solve_dc_opf(&c, &IpmOptions::default()).unwrap();
        let pg = dc.dispatch.unwrap();
        assert!((pg[0] - 0.6).abs() < 1e-6, "{pg:?}");
        assert!((dc.theta_dc[1] + 0.06).abs() < 1e-6);
    }

    #[test]
    fn zero_reference_uses_admittance_angles() {
        let case = load_case("case9");
        let adm = build_admittance(&case).unwrap();
        let rt = rotation_refs(&DcSolution::zero(case.n_bus()), &case, &adm);
        for (k, rf) in rt.pair_refs.iter().enumerate() {
            assert_eq!(rf.delta_dc, -adm.entries[k].ang);
        }
        for i in 0..case.n_bus() {
            let d = rt.pair(&adm, i, i).unwrap();
            let k = crate::kernels::eval_rotated(d, 0.0, Default::default()).unwrap();
            let phi = adm.entry(i, i).unwrap().ang;
            assert_eq!(k.c, (-phi).cos());
            assert_eq!(k.s, (-phi).sin());
        }
    }

    #[test]
    fn case9_branch_references_are_moderate() {
        let case = load_case("case9");
        let adm = build_admittance(&case).unwrap();
        let dc = solve_dc_pf(&case).unwrap();
        let rt = rotation_refs(&dc, &case, &adm);
        for (k, br) in case.branches.iter().enumerate() {
            let dth = dc.theta_dc[br.from] - dc.theta_dc[br.to];
            assert!(dth.abs() < std::f64::consts::FRAC_PI_2);
            assert_eq!(rt.branch_from[k].delta_dc, dth - adm.branches[k].ft.ang);
        }
    }

    #[test]
    fn references_are_shift_invariant() {
        let case = load_case("case30");
        let adm = build_admittance(&case).unwrap();
        let dc = solve_dc_pf(&case).unwrap();
        let mut shifted = dc.clone();
        shifted.theta_dc.iter_mut().for_each(|t| *t += 0.37);
        let (a, b) = (rotation_refs(&dc, &case, &adm), rotation_refs(&shifted, &case, &adm));
        for (x, y) in a.pair_refs.iter().zip(&b.pair_refs) {
            assert!((x.delta_dc - y.delta_dc).abs() < 1e-14);
        }
    }
}
