//! Primal-dual interior-point method for
//!
//! ```text
//! min f(x)  s.t.  h(x) = 0,  g(x) ≤ 0,  l ≤ x ≤ u
//! ```
//!
//! Inequalities get slacks `g + s = 0, s > 0`; simple bounds are handled by
//! log barriers with their own multipliers. The barrier parameter follows a
//! monotone schedule and each Newton step solves the reduced KKT system of
//! [`kkt`], globalized by an ℓ1-penalty merit line search with one
//! second-order correction.

mod kkt;
mod qp;
mod step;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrPattern;

pub use qp::QuadraticProgram;
pub use step::{backtrack, fraction_to_boundary};

use kkt::KktSystem;

/// A smooth NLP with fixed sparsity. Jacobian and Hessian values are
/// written in the order of the coordinates returned by the structure calls;
/// Hessian coordinates are lower triangular (`row >= col`) and duplicates
/// accumulate.
pub trait Nlp {
    fn n_vars(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn n_ineq(&self) -> usize;
    /// Lower and upper variable bounds; infinite entries mean unbounded.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn jac_eq_structure(&self) -> Vec<(usize, usize)>;
    fn jac_ineq_structure(&self) -> Vec<(usize, usize)>;
    fn hess_structure(&self) -> Vec<(usize, usize)>;

    fn objective(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<()>;
    fn eq_values(&self, x: &[f64], h: &mut [f64]) -> Result<()>;
    fn ineq_values(&self, x: &[f64], g: &mut [f64]) -> Result<()>;
    fn jac_eq_values(&self, x: &[f64], vals: &mut [f64]) -> Result<()>;
    fn jac_ineq_values(&self, x: &[f64], vals: &mut [f64]) -> Result<()>;
    /// Hessian of `obj_factor·f + λᵀh + νᵀg`.
    fn hess_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], nu: &[f64], vals: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpmOptions {
    pub mu0: f64,
    pub sigma: f64,
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub tau: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub bound_relax: f64,
    /// Armijo constant of the merit line search.
    pub armijo: f64,
    pub alpha_min: f64,
    /// Inequality counts as binding when `g ≥ −activity_tol`.
    pub activity_tol: f64,
    pub multiplier_tol: f64,
    /// Record one [`IterLog`] per iteration in the result.
    pub record_trace: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            mu0: 1e-1,
            sigma: 0.2,
            kappa: 10.0,
            tol: 1e-8,
            max_iter: 300,
            tau: 0.995,
            reg_min: 1e-10,
            reg_max: 1e-2,
            bound_relax: 1e-8,
            armijo: 1e-4,
            alpha_min: 1e-12,
            activity_tol: 1e-4,
            multiplier_tol: 1e-6,
            record_trace: false,
        }
    }
}

impl IpmOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(format!("ipm option {what}")));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.tol > 0.0) || !(self.mu0 > 0.0) || !(self.kappa > 0.0) {
            return bad("tol, mu0 and kappa must be positive");
        }
        if !(self.reg_min > 0.0 && self.reg_min <= self.reg_max) {
            return bad("requires 0 < reg_min <= reg_max");
        }
        if !(self.bound_relax >= 0.0) || !(self.alpha_min > 0.0) {
            return bad("bound_relax must be >= 0 and alpha_min > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    StepFailure,
    InfeasibleDetected,
}

/// Primal-dual iterate. `z_lo`/`z_hi` are zero for infinite bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub s: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub bound_lower: Vec<f64>,
    pub bound_upper: Vec<f64>,
}

/// Infinity norms of the unperturbed KKT conditions at the final iterate.
/// `dual` and `complementarity` are measured on the internally scaled
/// objective and divided by the usual multiplier-size factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assembly_s: f64,
    pub factorization_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    pub mu: f64,
    pub objective: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
    pub alpha_primal: f64,
    pub alpha_dual: f64,
    pub delta_w: f64,
    pub soc: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub message: Option<String>,
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    /// `g(x*)`.
    pub ineq_values: Vec<f64>,
    pub slacks: Vec<f64>,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub timings: Timings,
    /// Inequalities binding under the options' activity/multiplier tolerances.
    pub binding_ineq: Vec<usize>,
    pub obj_scale: f64,
    pub trace: Vec<IterLog>,
}

/// Inequality `i` is binding when `g_i ≥ −activity_tol`, or when its
/// multiplier is at least `multiplier_tol` while its slack is below
/// `activity_tol`.
pub fn binding_constraints(result: &SolveResult, activity_tol: f64, multiplier_tol: f64) -> Vec<usize> {
    (0..result.ineq_values.len())
        .filter(|&i| {
            result.ineq_values[i] >= -activity_tol
                || (result.multipliers.ineq[i] >= multiplier_tol && result.slacks[i] < activity_tol)
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full search direction recovered from the reduced solve.
#[derive(Debug, Clone)]
struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dlam: Vec<f64>,
    dnu: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
}

/// Values and derivatives of the scaled problem at one primal point.
#[derive(Debug, Clone)]
struct PointEval {
    f: f64,
    grad: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
    jh: Vec<f64>,
    jg: Vec<f64>,
}

struct Solver<'a, P: Nlp + ?Sized> {
    nlp: &'a P,
    opts: IpmOptions,
    n: usize,
    m: usize,
    p: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Bounds before relaxation; the final iterate is projected onto them.
    lo_orig: Vec<f64>,
    hi_orig: Vec<f64>,
    has_lo: Vec<bool>,
    has_hi: Vec<bool>,
    jh_pat: CsrPattern,
    jg_pat: CsrPattern,
    n_hess: usize,
    obj_scale: f64,
    kkt: KktSystem,
    coord_buf_h: Vec<f64>,
    coord_buf_g: Vec<f64>,
    t_assembly: f64,
    t_factor: f64,
}

impl<'a, P: Nlp + ?Sized> Solver<'a, P> {
    fn new(nlp: &'a P, opts: &IpmOptions, x0: &[f64]) -> Result<Self> {
        let (n, m, p) = (nlp.n_vars(), nlp.n_eq(), nlp.n_ineq());
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, problem has {n}", x0.len())));
        }
        let (lo0, hi0) = nlp.bounds();
        let mut lo = lo0.clone();
        let mut hi = hi0.clone();
        for i in 0..n {
            if lo[i].is_finite() {
                lo[i] -= opts.bound_relax * lo[i].abs().max(1.0);
            }
            if hi[i].is_finite() {
                hi[i] += opts.bound_relax * hi[i].abs().max(1.0);
            }
            if !(x0[i] > lo[i] && x0[i] < hi[i]) {
                return Err(Error::EmptyInterior {
                    index: i,
                    lower: lo0[i],
                    upper: hi0[i],
                });
            }
        }
        let has_lo: Vec<bool> = lo.iter().map(|v| v.is_finite()).collect();
        let has_hi: Vec<bool> = hi.iter().map(|v| v.is_finite()).collect();
        let jh_coords = nlp.jac_eq_structure();
        let jg_coords = nlp.jac_ineq_structure();
        let hess_coords = nlp.hess_structure();
        let jh_pat = CsrPattern::from_coords(m, n, &jh_coords);
        let jg_pat = CsrPattern::from_coords(p, n, &jg_coords);
        let t_kkt = Instant::now();
        let bounded: Vec<bool> = (0..n).map(|i| has_lo[i] || has_hi[i]).collect();
        let kkt = KktSystem::new(n, &hess_coords, &jg_pat, &jh_pat, &bounded);
        log::debug!(
            "ipm: n={n} m={m} p={p} kkt factor nnz={} (symbolic {:.3}s)",
            kkt.factor_nnz(),
            t_kkt.elapsed().as_secs_f64()
        );

        Ok(Solver {
            nlp,
            opts: *opts,
            n,
            m,
            p,
            lo,
            hi,
            lo_orig: lo0,
            hi_orig: hi0,
            has_lo,
            has_hi,
            jh_pat,
            jg_pat,
            n_hess: hess_coords.len(),
            obj_scale: 1.0,
            kkt,
            coord_buf_h: vec![0.0; jh_coords.len()],
            coord_buf_g: vec![0.0; jg_coords.len()],
            t_assembly: 0.0,
            t_factor: 0.0,
        })
    }

    fn eval_values(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let t = Instant::now();
        let f = self.nlp.objective(x)? * self.obj_scale;
        let mut h = vec![0.0; self.m];
        let mut g = vec![0.0; self.p];
        self.nlp.eq_values(x, &mut h)?;
        self.nlp.ineq_values(x, &mut g)?;
        self.t_assembly += t.elapsed().as_secs_f64();
        let finite = f.is_finite() && h.iter().chain(&g).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite {
                what: "objective or constraint value",
                index: 0,
            });
        }
        Ok((f, h, g))
    }

    fn eval_point(&mut self, x: &[f64]) -> Result<PointEval> {
        let (f, h, g) = self.eval_values(x)?;
        let t = Instant::now();
        let mut grad = vec![0.0; self.n];
        self.nlp.gradient(x, &mut grad)?;
        grad.iter_mut().for_each(|v| *v *= self.obj_scale);
        self.nlp.jac_eq_values(x, &mut self.coord_buf_h)?;
        self.nlp.jac_ineq_values(x, &mut self.coord_buf_g)?;
        let mut jh = vec![0.0; self.jh_pat.nnz()];
        let mut jg = vec![0.0; self.jg_pat.nnz()];
        self.jh_pat.accumulate(&self.coord_buf_h, &mut jh);
        self.jg_pat.accumulate(&self.coord_buf_g, &mut jg);
        self.t_assembly += t.elapsed().as_secs_f64();
        Ok(PointEval { f, grad, h, g, jh, jg })
    }

    fn dist_lo(&self, x: &[f64], i: usize) -> f64 {
        x[i] - self.lo[i]
    }

    fn dist_hi(&self, x: &[f64], i: usize) -> f64 {
        self.hi[i] - x[i]
    }

    /// Dual residual `∇f + J_hᵀλ + J_gᵀν − z_l + z_u` (scaled objective).
    fn dual_residual(&self, ev: &PointEval, st: &IterateState) -> Vec<f64> {
        let mut r = ev.grad.clone();
        self.jh_pat.mul_t_add(&ev.jh, &st.lambda, &mut r);
        self.jg_pat.mul_t_add(&ev.jg, &st.nu, &mut r);
        for i in 0..self.n {
            r[i] += st.z_hi[i] - st.z_lo[i];
        }
        r
    }

    /// `(primal, scaled dual, scaled complementarity)` for barrier `mu`.
    fn errors(&self, ev: &PointEval, st: &IterateState, mu: f64) -> (f64, f64, f64) {
        let primal = inf_norm(&ev.h).max(
            ev.g.iter()
                .zip(&st.s)
                .fold(0.0f64, |a, (g, s)| a.max((g + s).abs())),
        );
        let rd = inf_norm(&self.dual_residual(ev, st));
        let mut compl = 0.0f64;
        for (nu, s) in st.nu.iter().zip(&st.s) {
            compl = compl.max((nu * s - mu).abs());
        }
        let mut zsum = 0.0;
        let mut nb = 0usize;
        for i in 0..self.n {
            if self.has_lo[i] {
                compl = compl.max((st.z_lo[i] * self.dist_lo(&st.x, i) - mu).abs());
                zsum += st.z_lo[i];
                nb += 1;
            }
            if self.has_hi[i] {
                compl = compl.max((st.z_hi[i] * self.dist_hi(&st.x, i) - mu).abs());
                zsum += st.z_hi[i];
                nb += 1;
            }
        }
        let s_max = 100.0;
        let nusum: f64 = st.nu.iter().sum();
        let lamsum: f64 = st.lambda.iter().map(|v| v.abs()).sum();
        let cnt_d = (self.m + self.p + nb).max(1) as f64;
        let cnt_c = (self.p + nb).max(1) as f64;
        let s_d = ((lamsum + nusum + zsum) / cnt_d).max(s_max) / s_max;
        let s_c = ((nusum + zsum) / cnt_c).max(s_max) / s_max;
        (primal, rd / s_d, compl / s_c)
    }

    fn barrier_merit(&self, f: f64, x: &[f64], s: &[f64], mu: f64) -> f64 {
        let mut phi = f;
        for &si in s {
            phi -= mu * si.ln();
        }
        for i in 0..self.n {
            if self.has_lo[i] {
                phi -= mu * self.dist_lo(x, i).ln();
            }
            if self.has_hi[i] {
                phi -= mu * self.dist_hi(x, i).ln();
            }
        }
        phi
    }

    fn infeasibility_l1(h: &[f64], g: &[f64], s: &[f64]) -> f64 {
        h.iter().map(|v| v.abs()).sum::<f64>() + g.iter().zip(s).map(|(g, s)| (g + s).abs()).sum::<f64>()
    }

    /// Reduced right-hand side for constraint residuals `(rh, rg)`.
    fn reduced_rhs(&self, ev: &PointEval, st: &IterateState, rh: &[f64], rg: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut b = vec![0.0; n + m];
        let mut bx = ev.grad.clone();
        self.jh_pat.mul_t_add(&ev.jh, &st.lambda, &mut bx);
        let w: Vec<f64> = (0..self.p)
            .map(|i| st.nu[i] / st.s[i] * rg[i] + st.mu / st.s[i])
            .collect();
        self.jg_pat.mul_t_add(&ev.jg, &w, &mut bx);
        for i in 0..n {
            let mut v = -bx[i];
            if self.has_lo[i] {
                v += st.mu / self.dist_lo(&st.x, i);
            }
            if self.has_hi[i] {
                v -= st.mu / self.dist_hi(&st.x, i);
            }
            b[i] = v;
        }
        for i in 0..m {
            b[n + i] = -rh[i];
        }
        b
    }

    fn recover(&self, ev: &PointEval, st: &IterateState, sol: &[f64], rg: &[f64]) -> Direction {
        let (n, p) = (self.n, self.p);
        let dx = sol[..n].to_vec();
        let dlam = sol[n..].to_vec();
        let mut jdx = vec![0.0; p];
        self.jg_pat.mul(&ev.jg, &dx, &mut jdx);
        let ds: Vec<f64> = (0..p).map(|i| -rg[i] - jdx[i]).collect();
        let dnu: Vec<f64> = (0..p)
            .map(|i| st.mu / st.s[i] - st.nu[i] - st.nu[i] / st.s[i] * ds[i])
            .collect();
        let mut dzl = vec![0.0; n];
        let mut dzu = vec![0.0; n];
        for i in 0..n {
            if self.has_lo[i] {
                let d = self.dist_lo(&st.x, i);
                dzl[i] = st.mu / d - st.z_lo[i] - st.z_lo[i] / d * dx[i];
            }
            if self.has_hi[i] {
                let d = self.dist_hi(&st.x, i);
                dzu[i] = st.mu / d - st.z_hi[i] + st.z_hi[i] / d * dx[i];
            }
        }
        Direction {
            dx,
            ds,
            dlam,
            dnu,
            dzl,
            dzu,
        }
    }

    /// Factor the reduced KKT system at `st` and return the full direction,
    /// the factorization statistics, the reduced right-hand side and `g + s`.
    fn newton(
        &mut self,
        st: &IterateState,
        ev: &PointEval,
        hess: &mut [f64],
    ) -> Result<(Direction, kkt::FactorStats, Vec<f64>, Vec<f64>)> {
        let (n, p) = (self.n, self.p);
        let t = Instant::now();
        self.nlp.hess_values(&st.x, self.obj_scale, &st.lambda, &st.nu, hess)?;
        if let Some(k) = hess.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "hessian entry",
                index: k,
            });
        }
        self.t_assembly += t.elapsed().as_secs_f64();
        let sigma_s: Vec<f64> = (0..p).map(|i| st.nu[i] / st.s[i]).collect();
        let sigma_x: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = 0.0;
                if self.has_lo[i] {
                    v += st.z_lo[i] / self.dist_lo(&st.x, i);
                }
                if self.has_hi[i] {
                    v += st.z_hi[i] / self.dist_hi(&st.x, i);
                }
                v
            })
            .collect();
        let t = Instant::now();
        let fs = self.kkt.factor(
            hess,
            &ev.jg,
            &sigma_s,
            &sigma_x,
            &ev.jh,
            self.opts.reg_min,
            self.opts.reg_max,
        );
        self.t_factor += t.elapsed().as_secs_f64();
        let fs = fs?;
        let rg: Vec<f64> = ev.g.iter().zip(&st.s).map(|(g, s)| g + s).collect();
        let rhs = self.reduced_rhs(ev, st, &ev.h, &rg);
        let t = Instant::now();
        let sol = self.kkt.solve(&rhs);
        self.t_factor += t.elapsed().as_secs_f64();
        let dir = self.recover(ev, st, &sol, &rg);
        Ok((dir, fs, rhs, rg))
    }

    /// Largest step in `(0, 1]` keeping slacks and bound distances positive.
    fn max_primal_step(&self, st: &IterateState, d: &Direction, tau: f64) -> f64 {
        let mut a = fraction_to_boundary(&st.s, &d.ds, tau);
        for i in 0..self.n {
            if self.has_lo[i] {
                a = a.min(step::ratio(self.dist_lo(&st.x, i), d.dx[i], tau));
            }
            if self.has_hi[i] {
                a = a.min(step::ratio(self.dist_hi(&st.x, i), -d.dx[i], tau));
            }
        }
        a
    }

    fn max_dual_step(&self, st: &IterateState, d: &Direction, tau: f64) -> f64 {
        fraction_to_boundary(&st.nu, &d.dnu, tau)
            .min(fraction_to_boundary(&st.z_lo, &d.dzl, tau))
            .min(fraction_to_boundary(&st.z_hi, &d.dzu, tau))
    }

    fn interior(&self, x: &[f64], s: &[f64]) -> bool {
        s.iter().all(|&v| v > 0.0)
            && (0..self.n).all(|i| (!self.has_lo[i] || x[i] > self.lo[i]) && (!self.has_hi[i] || x[i] < self.hi[i]))
    }
}

const KAPPA_SIGMA: f64 = 1e10;
/// Second-order corrections tried per iteration, and the infeasibility
/// reduction each one must achieve for the next to be attempted.
const MAX_SOC: usize = 4;
const SOC_DECREASE: f64 = 0.99;
/// Floor on initial slacks. Violated inequalities start with `s = 1`, so the
/// first multipliers `μ/s` stay at most `μ0` and do not amplify curved
/// constraint Hessians beyond what `reg_max` can correct.
const SLACK_INIT_MIN: f64 = 1.0;

/// Solve `nlp` from the strictly interior starting point `x0`.
///
/// Modelling errors (dimension mismatches, non-finite values at the start)
/// are returned as `Err`; algorithmic outcomes are reported in
/// [`SolveResult::status`].
pub fn solve<P: Nlp + ?Sized>(nlp: &P, opts: &IpmOptions, x0: &[f64]) -> Result<SolveResult> {
    opts.validate()?;
    let t_total = Instant::now();
    let (n, m, p) = (nlp.n_vars(), nlp.n_eq(), nlp.n_ineq());
    let mut sv = Solver::new(nlp, opts, x0)?;

    let mut grad0 = vec![0.0; n];
    nlp.gradient(x0, &mut grad0)?;
    let gmax = inf_norm(&grad0);
    if !gmax.is_finite() {
        return Err(Error::NonFinite {
            what: "initial gradient",
            index: 0,
        });
    }
    if gmax > 100.0 {
        sv.obj_scale = 100.0 / gmax;
    }
    let mut ev = sv.eval_point(x0)?;

    let mu_min = opts.tol / 10.0;
    let mut st = IterateState {
        x: x0.to_vec(),
        lambda: vec![0.0; m],
        s: ev.g.iter().map(|&g| (-g).max(SLACK_INIT_MIN)).collect(),
        nu: vec![0.0; p],
        z_lo: vec![0.0; n],
        z_hi: vec![0.0; n],
        mu: opts.mu0,
    };
    for i in 0..p {
        st.nu[i] = st.mu / st.s[i];
    }
    for i in 0..n {
        if sv.has_lo[i] {
            st.z_lo[i] = st.mu / sv.dist_lo(&st.x, i);
        }
        if sv.has_hi[i] {
            st.z_hi[i] = st.mu / sv.dist_hi(&st.x, i);
        }
    }

    let mut rho = 0.0f64;
    let mut trace = Vec::new();
    let mut hess = vec![0.0; sv.n_hess];
    let status;
    let mut message = None;
    let mut iter = 0usize;
    let mut res;

    loop {
        let (pr, du, co) = sv.errors(&ev, &st, 0.0);
        res = KktResiduals {
            primal: pr,
            dual: du,
            complementarity: co,
        };
        if pr <= opts.tol && du <= opts.tol && co <= opts.tol {
            status = SolveStatus::Optimal;
            break;
        }
        loop {
            let (pr, du, co) = sv.errors(&ev, &st, st.mu);
            if st.mu > mu_min && pr.max(du).max(co) <= opts.kappa * st.mu {
                st.mu = (opts.sigma * st.mu).max(mu_min);
            } else {
                break;
            }
        }
        if iter >= opts.max_iter {
            status = SolveStatus::MaxIter;
            break;
        }
        iter += 1;

        // Newton direction.
        let step = sv.newton(&st, &ev, &mut hess);
        let (dir, fs, rhs, rg) = match step {
            Ok(v) => v,
            Err(e @ Error::NonFinite { .. }) => return Err(e),
            Err(e) => {
                status = SolveStatus::StepFailure;
                message = Some(e.to_string());
                break;
            }
        };

        // Merit function and penalty update.
        let phi0 = sv.barrier_merit(ev.f, &st.x, &st.s, st.mu);
        let mut dphi_bar = dot(&ev.grad, &dir.dx);
        for i in 0..p {
            dphi_bar -= st.mu * dir.ds[i] / st.s[i];
        }
        for i in 0..n {
            if sv.has_lo[i] {
                dphi_bar -= st.mu * dir.dx[i] / sv.dist_lo(&st.x, i);
            }
            if sv.has_hi[i] {
                dphi_bar += st.mu * dir.dx[i] / sv.dist_hi(&st.x, i);
            }
        }
        let c1 = Solver::<P>::infeasibility_l1(&ev.h, &ev.g, &st.s);
        if c1 > 0.0 {
            // dxᵀ(W + Σ)dx from the first block row of the reduced system.
            let mut jhdx = vec![0.0; m];
            sv.jh_pat.mul(&ev.jh, &dir.dx, &mut jhdx);
            let curv = dot(&dir.dx, &rhs[..n]) - dot(&dir.dlam, &jhdx);
            let rho_trial = (dphi_bar + 0.5 * curv.max(0.0)) / (0.9 * c1);
            if rho < rho_trial {
                rho = rho_trial + 1.0;
            }
        }
        let dphi = dphi_bar - rho * c1;
        let merit0 = phi0 + rho * c1;
        // Round-off slack so that steps near the solution are not rejected
        // because the merit cannot resolve their decrease.
        let noise = 10.0 * f64::EPSILON * merit0.abs();

        let alpha_max = sv.max_primal_step(&st, &dir, opts.tau);
        let alpha_d = sv.max_dual_step(&st, &dir, opts.tau);
        let mut used_soc = false;

        let trial_x = |a: f64, d: &Direction| -> (Vec<f64>, Vec<f64>) {
            let x: Vec<f64> = st.x.iter().zip(&d.dx).map(|(x, dx)| x + a * dx).collect();
            let s: Vec<f64> = st.s.iter().zip(&d.ds).map(|(s, ds)| s + a * ds).collect();
            (x, s)
        };

        let mut accepted: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut alpha = alpha_max;
        let mut first = true;
        while alpha >= opts.alpha_min {
            let (x_t, s_t) = trial_x(alpha, &dir);
            if sv.interior(&x_t, &s_t) {
                if let Ok((f_t, h_t, g_t)) = sv.eval_values(&x_t) {
                    let m_t = sv.barrier_merit(f_t, &x_t, &s_t, st.mu)
                        + rho * Solver::<P>::infeasibility_l1(&h_t, &g_t, &s_t);
                    if m_t.is_finite() && m_t <= merit0 + opts.armijo * alpha * dphi + noise {
                        accepted = Some((alpha, x_t, s_t));
                        break;
                    }
                    if first {
                        // Second-order corrections against the Maratos effect,
                        // accumulating the constraint residuals of each trial.
                        let mut c_prev = Solver::<P>::infeasibility_l1(&h_t, &g_t, &s_t);
                        let mut rh: Vec<f64> = (0..m).map(|i| alpha * ev.h[i] + h_t[i]).collect();
                        let mut rg2: Vec<f64> = (0..p).map(|i| alpha * rg[i] + g_t[i] + s_t[i]).collect();
                        let mut k = 0;
                        while k < MAX_SOC && (c_prev >= 0.5 * c1 || c1 == 0.0) {
                            k += 1;
                            let rhs2 = sv.reduced_rhs(&ev, &st, &rh, &rg2);
                            let sol2 = sv.kkt.solve(&rhs2);
                            let d2 = sv.recover(&ev, &st, &sol2, &rg2);
                            let a2 = sv.max_primal_step(&st, &d2, opts.tau);
                            let (x2, s2) = trial_x(a2, &d2);
                            if !sv.interior(&x2, &s2) {
                                break;
                            }
                            let Ok((f2, h2, g2)) = sv.eval_values(&x2) else { break };
                            let c2 = Solver::<P>::infeasibility_l1(&h2, &g2, &s2);
                            let m2 = sv.barrier_merit(f2, &x2, &s2, st.mu) + rho * c2;
                            if m2.is_finite() && m2 <= merit0 + opts.armijo * alpha * dphi + noise {
                                used_soc = true;
                                accepted = Some((alpha, x2, s2));
                                break;
                            }
                            if c2 > SOC_DECREASE * c_prev {
                                break;
                            }
                            c_prev = c2;
                            rh.iter_mut().zip(&h2).for_each(|(r, h)| *r = a2 * *r + h);
                            rg2.iter_mut()
                                .zip(g2.iter().zip(&s2))
                                .for_each(|(r, (g, s))| *r = a2 * *r + g + s);
                        }
                        if accepted.is_some() {
                            break;
                        }
                    }
                }
            }
            first = false;
            alpha *= 0.5;
        }

        let Some((alpha_p, x_new, s_new)) = accepted else {
            let mut grad_inf = vec![0.0; n];
            sv.jh_pat.mul_t_add(&ev.jh, &ev.h, &mut grad_inf);
            sv.jg_pat.mul_t_add(&ev.jg, &rg, &mut grad_inf);
            if pr > 1e-4 && inf_norm(&grad_inf) <= 1e-6 * pr.max(1.0) {
                status = SolveStatus::InfeasibleDetected;
                message = Some("primal infeasibility is stationary".into());
            } else {
                status = SolveStatus::StepFailure;
                message = Some(format!("line search step below {:e}", opts.alpha_min));
            }
            break;
        };

        for i in 0..m {
            st.lambda[i] += alpha_p * dir.dlam[i];
        }
        for i in 0..p {
            st.nu[i] += alpha_d * dir.dnu[i];
        }
        for i in 0..n {
            st.z_lo[i] += alpha_d * dir.dzl[i];
            st.z_hi[i] += alpha_d * dir.dzu[i];
        }
        st.x = x_new;
        st.s = s_new;
        // Keep multipliers within a bounded factor of their barrier estimate.
        for i in 0..p {
            let est = st.mu / st.s[i];
            st.nu[i] = st.nu[i].clamp(est / KAPPA_SIGMA, est * KAPPA_SIGMA);
        }
        for i in 0..n {
            if sv.has_lo[i] {
                let est = st.mu / sv.dist_lo(&st.x, i);
                st.z_lo[i] = st.z_lo[i].clamp(est / KAPPA_SIGMA, est * KAPPA_SIGMA);
            }
            if sv.has_hi[i] {
                let est = st.mu / sv.dist_hi(&st.x, i);
                st.z_hi[i] = st.z_hi[i].clamp(est / KAPPA_SIGMA, est * KAPPA_SIGMA);
            }
        }
        ev = match sv.eval_point(&st.x) {
            Ok(e) => e,
            Err(e) => {
                status = SolveStatus::StepFailure;
                message = Some(e.to_string());
                break;
            }
        };

        let (pr, du, co) = sv.errors(&ev, &st, 0.0);
        log::debug!(
            "iter {iter:3} mu {:9.2e} obj {:14.8e} pr {pr:9.2e} du {du:9.2e} co {co:9.2e} a_p {alpha_p:8.2e} a_d {alpha_d:8.2e} reg {:8.1e}{}",
            st.mu,
            ev.f / sv.obj_scale,
            fs.delta_w,
            if used_soc { " soc" } else { "" }
        );
        if opts.record_trace {
            trace.push(IterLog {
                iter,
                mu: st.mu,
                objective: ev.f / sv.obj_scale,
                primal: pr,
                dual: du,
                complementarity: co,
                alpha_primal: alpha_p,
                alpha_dual: alpha_d,
                delta_w: fs.delta_w,
                soc: used_soc,
            });
        }
    }

    let scale = sv.obj_scale;
    let projected: Vec<f64> = (0..n)
        .map(|i| st.x[i].clamp(sv.lo_orig[i], sv.hi_orig[i]))
        .collect();
    if projected != st.x {
        if let Ok((f, h, g)) = sv.eval_values(&projected) {
            ev.f = f;
            ev.h = h;
            ev.g = g;
            st.x = projected;
        }
    }
    let mut result = SolveResult {
        status,
        message,
        objective: ev.f / scale,
        multipliers: Multipliers {
            eq: st.lambda.iter().map(|v| v / scale).collect(),
            ineq: st.nu.iter().map(|v| v / scale).collect(),
            bound_lower: st.z_lo.iter().map(|v| v / scale).collect(),
            bound_upper: st.z_hi.iter().map(|v| v / scale).collect(),
        },
        ineq_values: ev.g.clone(),
        slacks: st.s.clone(),
        x: st.x,
        iterations: iter,
        kkt: res,
        timings: Timings {
            assembly_s: sv.t_assembly,
            factorization_s: sv.t_factor,
            total_s: t_total.elapsed().as_secs_f64(),
        },
        binding_ineq: Vec::new(),
        obj_scale: scale,
        trace,
    };
    result.binding_ineq = binding_constraints(&result, opts.activity_tol, opts.multiplier_tol);
    log::info!(
        "ipm: {:?} after {} iterations, objective {:.10e}",
        result.status,
        result.iterations,
        result.objective
    );
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn projection_qp() -> QuadraticProgram {
        // (x − 1)² + (y − 2)² s.t. x + y = 1
        let mut qp = QuadraticProgram::new(2);
        qp.q = vec![(0, 0, 2.0), (1, 1, 2.0)];
        qp.c = vec![-2.0, -4.0];
        qp.c0 = 5.0;
        qp.a_eq = vec![(0, 0, 1.0), (0, 1, 1.0)];
        qp.b_eq = vec![1.0];
        qp
    }

    #[test]
    fn bound_constrained_square() {
        let mut qp = QuadraticProgram::new(1);
        qp.q = vec![(0, 0, 2.0)];
        qp.lo = vec![1.0];
        let r = solve(&qp, &IpmOptions::default(), &[3.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-8, "{}", r.x[0]);
        assert!((r.objective - 1.0).abs() < 1e-8);
        assert!((r.multipliers.bound_lower[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn equality_constrained_projection() {
        let r = solve(&projection_qp(), &IpmOptions::default(), &[0.3, 0.3]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!(r.x[0].abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8, "{:?}", r.x);
        assert!((r.multipliers.eq[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn single_newton_step_is_exact_on_qp() {
        let qp = projection_qp();
        let opts = IpmOptions::default();
        let x0 = [0.5, 0.5];
        let mut sv = Solver::new(&qp, &opts, &x0).unwrap();
        let ev = sv.eval_point(&x0).unwrap();
        let st = IterateState {
            x: x0.to_vec(),
            lambda: vec![0.0],
            nu: vec![],
            s: vec![],
            z_lo: vec![0.0; 2],
            z_hi: vec![0.0; 2],
            mu: 0.1,
        };
        let mut hess = vec![0.0; 2];
        let (d, fs, _, _) = sv.newton(&st, &ev, &mut hess).unwrap();
        assert_eq!(fs.delta_w, 0.0);
        assert!((x0[0] + d.dx[0]).abs() < 1e-14);
        assert!((x0[1] + d.dx[1] - 1.0).abs() < 1e-14);
        assert!((d.dlam[0] - 2.0).abs() < 1e-14);
    }

    /// Random strictly convex QP with equalities, inequalities and bounds.
    fn random_qp(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> QuadraticProgram {
        let mut qp = QuadraticProgram::new(n);
        for i in 0..n {
            qp.q.push((i, i, 2.0 + rng.gen::<f64>()));
            for j in 0..i {
                if rng.gen::<f64>() < 0.2 {
                    qp.q.push((i, j, rng.gen_range(-0.3..0.3)));
                }
            }
            qp.c[i] = rng.gen_range(-1.0..1.0);
            if rng.gen::<bool>() {
                qp.lo[i] = -2.0;
            }
            if rng.gen::<bool>() {
                qp.hi[i] = 2.0;
            }
        }
        for r in 0..m {
            qp.a_eq.push((r, r, 1.0));
            qp.a_eq.push((r, (r + 1 + rng.gen_range(0..n - 1)) % n, rng.gen_range(-1.0..1.0)));
            qp.b_eq.push(rng.gen_range(-0.2..0.2));
        }
        for r in 0..p {
            for c in 0..n {
                if rng.gen::<f64>() < 0.4 {
                    qp.a_in.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
            qp.b_in.push(rng.gen_range(0.0..1.0));
        }
        qp
    }

    #[test]
    fn reduced_step_matches_full_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let (n, m, p) = (8, 3, 4);
            let qp = random_qp(&mut rng, n, m, p);
            let opts = IpmOptions::default();
            let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut sv = Solver::new(&qp, &opts, &x0).unwrap();
            let ev = sv.eval_point(&x0).unwrap();
            let mut st = IterateState {
                x: x0.clone(),
                lambda: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                nu: (0..p).map(|_| rng.gen_range(0.1..2.0)).collect(),
                s: (0..p).map(|_| rng.gen_range(0.1..2.0)).collect(),
                z_lo: vec![0.0; n],
                z_hi: vec![0.0; n],
                mu: 0.05,
            };
            for i in 0..n {
                if sv.has_lo[i] {
                    st.z_lo[i] = rng.gen_range(0.1..1.0);
                }
                if sv.has_hi[i] {
                    st.z_hi[i] = rng.gen_range(0.1..1.0);
                }
            }
            let mut hess = vec![0.0; qp.q.len()];
            let (d, fs, _, _) = sv.newton(&st, &ev, &mut hess).unwrap();
            assert_eq!(fs.delta_w, 0.0);

            // Unknowns [dx, ds, dλ, dν, dz_l, dz_u].
            let dim = 3 * n + 2 * p + m;
            let (ox, os, ol, on, ozl, ozu) = (0, n, n + p, n + p + m, n + 2 * p + m, 2 * n + 2 * p + m);
            let mut a = DMatrix::<f64>::zeros(dim, dim);
            let mut b = DVector::<f64>::zeros(dim);
            for &(r, c, v) in &qp.q {
                a[(ox + r, ox + c)] += v;
                if r != c {
                    a[(ox + c, ox + r)] += v;
                }
            }
            let rd = sv.dual_residual(&ev, &st);
            for &(r, c, v) in &qp.a_eq {
                a[(ox + c, ol + r)] += v;
            }
            for &(r, c, v) in &qp.a_in {
                a[(ox + c, on + r)] += v;
            }
            for i in 0..n {
                a[(ox + i, ozl + i)] = -1.0;
                a[(ox + i, ozu + i)] = 1.0;
                b[ox + i] = -rd[i];
            }
            // Complementarity rows for slacks.
            for i in 0..p {
                a[(os + i, os + i)] = st.nu[i];
                a[(os + i, on + i)] = st.s[i];
                b[os + i] = st.mu - st.nu[i] * st.s[i];
            }
            // Equality rows.
            for &(r, c, v) in &qp.a_eq {
                a[(ol + r, ox + c)] += v;
            }
            for i in 0..m {
                b[ol + i] = -ev.h[i];
            }
            // Inequality rows.
            for &(r, c, v) in &qp.a_in {
                a[(on + r, ox + c)] += v;
            }
            for i in 0..p {
                a[(on + i, os + i)] = 1.0;
                b[on + i] = -(ev.g[i] + st.s[i]);
            }
            // Bound complementarity rows (identity rows for absent bounds).
            for i in 0..n {
                if sv.has_lo[i] {
                    let dl = st.x[i] - sv.lo[i];
                    a[(ozl + i, ox + i)] = st.z_lo[i];
                    a[(ozl + i, ozl + i)] = dl;
                    b[ozl + i] = st.mu - st.z_lo[i] * dl;
                } else {
                    a[(ozl + i, ozl + i)] = 1.0;
                }
                if sv.has_hi[i] {
                    let du = sv.hi[i] - st.x[i];
                    a[(ozu + i, ox + i)] = -st.z_hi[i];
                    a[(ozu + i, ozu + i)] = du;
                    b[ozu + i] = st.mu - st.z_hi[i] * du;
                } else {
                    a[(ozu + i, ozu + i)] = 1.0;
                }
            }
            let full = a.clone().lu().solve(&b).expect("nonsingular full system");
            let mut mine = DVector::<f64>::zeros(dim);
            for i in 0..n {
                mine[ox + i] = d.dx[i];
                mine[ozl + i] = d.dzl[i];
                mine[ozu + i] = d.dzu[i];
            }
            for i in 0..p {
                mine[os + i] = d.ds[i];
                mine[on + i] = d.dnu[i];
            }
            for i in 0..m {
                mine[ol + i] = d.dlam[i];
            }
            let resid = (&a * &mine - &b).amax() / b.amax().max(1.0);
            assert!(resid < 1e-10, "full-system residual {resid}");
            assert!((&full - &mine).amax() < 1e-9 * full.amax().max(1.0));
        }
    }

    #[test]
    fn duplicated_equality_still_steps() {
        let mut qp = projection_qp();
        qp.a_eq.extend([(1, 0, 1.0), (1, 1, 1.0)]);
        qp.b_eq.push(1.0);
        let opts = IpmOptions::default();
        let x0 = [0.5, 0.5];
        let mut sv = Solver::new(&qp, &opts, &x0).unwrap();
        let ev = sv.eval_point(&x0).unwrap();
        let st = IterateState {
            x: x0.to_vec(),
            lambda: vec![0.0; 2],
            nu: vec![],
            s: vec![],
            z_lo: vec![0.0; 2],
            z_hi: vec![0.0; 2],
            mu: 0.1,
        };
        let mut hess = vec![0.0; 2];
        let (d, fs, _, _) = sv.newton(&st, &ev, &mut hess).unwrap();
        assert!(fs.delta_c > 0.0);
        assert!(fs.factorizations > 1);
        assert!((x0[0] + d.dx[0]).abs() < 1e-6);
        let r = solve(&qp, &opts, &x0).unwrap();
        assert!(r.x[0].abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn one_active_inequality_is_binding() {
        // (x − 2)² + y² with x ≤ 1, y ≤ 5
        let mut qp = QuadraticProgram::new(2);
        qp.q = vec![(0, 0, 2.0), (1, 1, 2.0)];
        qp.c = vec![-4.0, 0.0];
        qp.c0 = 4.0;
        qp.a_in = vec![(0, 0, 1.0), (1, 1, 1.0)];
        qp.b_in = vec![1.0, 5.0];
        let r = solve(&qp, &IpmOptions::default(), &[0.0, 0.0]).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_eq!(r.binding_ineq, vec![0]);
        assert!((r.multipliers.ineq[0] - 2.0).abs() < 1e-7);
        assert_eq!(binding_constraints(&r, 1e-4, 1e-6), vec![0]);
    }

    #[test]
    fn random_qps_certify_and_repeat_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let qp = random_qp(&mut rng, 10, 3, 5);
            let x0 = vec![0.0; 10];
            let opts = IpmOptions {
                record_trace: true,
                ..Default::default()
            };
            let r = solve(&qp, &opts, &x0).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal, "{:?}", r.message);
            // Independent KKT check in unscaled units.
            let mut grad = vec![0.0; 10];
            qp.gradient(&r.x, &mut grad).unwrap();
            for &(row, c, v) in &qp.a_eq {
                grad[c] += v * r.multipliers.eq[row];
            }
            for &(row, c, v) in &qp.a_in {
                grad[c] += v * r.multipliers.ineq[row];
            }
            for i in 0..10 {
                grad[i] += r.multipliers.bound_upper[i] - r.multipliers.bound_lower[i];
            }
            assert!(inf_norm(&grad) <= 1e-8, "dual residual {}", inf_norm(&grad));
            let mut h = vec![0.0; 3];
            qp.eq_values(&r.x, &mut h).unwrap();
            assert!(inf_norm(&h) <= 1e-8);
            let mut g = vec![0.0; 5];
            qp.ineq_values(&r.x, &mut g).unwrap();
            assert!(g.iter().all(|&v| v <= 1e-8));
            for (nu, gi) in r.multipliers.ineq.iter().zip(&g) {
                assert!(*nu >= 0.0 && (nu * gi).abs() <= 1e-8);
            }
            let again = solve(&qp, &opts, &x0).unwrap();
            assert_eq!(r.x, again.x);
            assert_eq!(r.trace, again.trace);
        }
    }

    #[test]
    fn options_are_validated() {
        let bad = IpmOptions {
            sigma: 1.0,
            ..Default::default()
        };
        assert!(solve(&projection_qp(), &bad, &[0.0, 0.0]).is_err());
        assert!(solve(&projection_qp(), &IpmOptions::default(), &[0.0]).is_err());
    }
}
