//! Values and exact first/second derivatives of the OPF functions.
//!
//! Every coupling contributes a term `m·Va·Vb·k(θa − θb)` whose local
//! gradient and Hessian over `[θa, θb, Va, Vb]` are written once here and
//! shared by the balances and the branch flows. `k` is the kernel of the
//! active flow mode; its derivatives are taken with respect to `θa`, which
//! enters the live angle with coefficient +1 in both modes.

use super::{Coupling, FlowEnd, FlowMode, OpfProblem, NO};
use crate::error::Result;
use crate::ipm::Nlp;
use crate::kernels::{rotated, trig, KernelEval};

/// All function values and derivatives at one point, in the problem's
/// coordinate orders. Intended for inspection and testing.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
    pub jac_eq: Vec<f64>,
    pub jac_ineq: Vec<f64>,
    pub hess: Vec<f64>,
}

/// Gradient of `m·Va·Vb·k(θa − θb)` over `[θa, θb, Va, Vb]`.
#[inline]
fn term_grad(m: f64, va: f64, vb: f64, k: f64, dk: f64) -> [f64; 4] {
    let t = m * va * vb * dk;
    [t, -t, m * vb * k, m * va * k]
}

/// Lower-triangle Hessian of the same term, added into `out`.
#[inline]
fn term_hess(m: f64, va: f64, vb: f64, k: f64, dk: f64, d2k: f64, out: &mut [f64; 10]) {
    let tt = m * va * vb * d2k;
    out[0] += tt;
    out[1] -= tt;
    out[2] += tt;
    out[3] += m * vb * dk;
    out[4] -= m * vb * dk;
    out[6] += m * va * dk;
    out[7] -= m * va * dk;
    out[8] += m * k;
}

#[inline]
fn scatter(slots: &[usize], vals: &[f64], out: &mut [f64]) {
    for (&s, &v) in slots.iter().zip(vals) {
        if s != NO {
            out[s] += v;
        }
    }
}

/// Flow-end quantities: values and local gradients of `P` and `Q`.
struct EndEval {
    p: f64,
    q: f64,
    gp: [f64; 4],
    gq: [f64; 4],
    k: KernelEval,
    va: f64,
    vb: f64,
}

impl<'a> OpfProblem<'a> {
    #[inline]
    fn theta(&self, x: &[f64], col: usize) -> f64 {
        if col == NO {
            0.0
        } else {
            x[col]
        }
    }

    #[inline]
    fn pair_kernel(&self, c: &Coupling, x: &[f64]) -> KernelEval {
        let d = self.theta(x, c.vars[0]) - self.theta(x, c.vars[1]);
        match &self.mode {
            FlowMode::Trig => trig(d - c.ang),
            FlowMode::AllPass { kernel, rotations } => {
                let th = &rotations.theta_dc;
                rotated(&rotations.pair_refs[c.pos], d - (th[c.i] - th[c.j]), kernel.a())
            }
        }
    }

    #[inline]
    fn end_kernel(&self, e: &FlowEnd, x: &[f64]) -> KernelEval {
        let d = self.theta(x, e.vars[0]) - self.theta(x, e.vars[1]);
        match &self.mode {
            FlowMode::Trig => trig(d - e.mut_ang),
            FlowMode::AllPass { kernel, rotations } => {
                let th = &rotations.theta_dc;
                let r = if e.from_side {
                    &rotations.branch_from[e.branch]
                } else {
                    &rotations.branch_to[e.branch]
                };
                rotated(r, d - (th[e.a] - th[e.b]), kernel.a())
            }
        }
    }

    fn end_eval(&self, e: &FlowEnd, x: &[f64]) -> EndEval {
        let k = self.end_kernel(e, x);
        let va = x[e.vars[2]];
        let vb = x[e.vars[3]];
        let m = e.mut_mag;
        let mut gp = term_grad(m, va, vb, k.c, k.dc);
        let mut gq = term_grad(m, va, vb, k.s, k.ds);
        gp[2] += 2.0 * e.self_p * va;
        gq[2] += 2.0 * e.self_q * va;
        EndEval {
            p: e.self_p * va * va + m * va * vb * k.c,
            q: e.self_q * va * va + m * va * vb * k.s,
            gp,
            gq,
            k,
            va,
            vb,
        }
    }

    /// Active and reactive flow leaving bus `a` at one end of a rated
    /// branch, in flow-row order.
    pub fn branch_flows(&self, x: &[f64]) -> Vec<(usize, bool, f64, f64)> {
        self.flows
            .iter()
            .map(|r| {
                let e = self.end_eval(&r.end, x);
                (r.end.branch, r.end.from_side, e.p, e.q)
            })
            .collect()
    }

    /// Every value and derivative at `x` with the given multipliers.
    pub fn evaluate(&self, x: &[f64], obj_factor: f64, lambda: &[f64], nu: &[f64]) -> Result<EvalBundle> {
        let n = self.layout.n_vars;
        let mut b = EvalBundle {
            objective: self.objective(x)?,
            gradient: vec![0.0; n],
            eq: vec![0.0; self.n_eq()],
            ineq: vec![0.0; self.ineqs.len()],
            jac_eq: vec![0.0; self.jac_eq_coords().len()],
            jac_ineq: vec![0.0; self.jac_ineq_coords().len()],
            hess: vec![0.0; self.hess_coords().len()],
        };
        self.gradient(x, &mut b.gradient)?;
        self.eq_values(x, &mut b.eq)?;
        self.ineq_values(x, &mut b.ineq)?;
        self.jac_eq_values(x, &mut b.jac_eq)?;
        self.jac_ineq_values(x, &mut b.jac_ineq)?;
        self.hess_values(x, obj_factor, lambda, nu, &mut b.hess)?;
        Ok(b)
    }
}

impl<'a> Nlp for OpfProblem<'a> {
    fn n_vars(&self) -> usize {
        self.layout.n_vars
    }

    fn n_eq(&self) -> usize {
        2 * self.layout.n_bus
    }

    fn n_ineq(&self) -> usize {
        self.ineqs.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (l, u) = OpfProblem::bounds(self);
        (l.to_vec(), u.to_vec())
    }

    fn jac_eq_structure(&self) -> Vec<(usize, usize)> {
        self.jac_eq_coords().to_vec()
    }

    fn jac_ineq_structure(&self) -> Vec<(usize, usize)> {
        self.jac_ineq_coords().to_vec()
    }

    fn hess_structure(&self) -> Vec<(usize, usize)> {
        self.hess_coords().to_vec()
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        Ok(self.cost(x))
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<()> {
        grad.fill(0.0);
        let l = &self.layout;
        for (k, &g) in l.gens.iter().enumerate() {
            let c = l.pg_start + k;
            grad[c] = self.case.gens[g].cost.slope(x[c]);
        }
        Ok(())
    }

    fn eq_values(&self, x: &[f64], h: &mut [f64]) -> Result<()> {
        let l = &self.layout;
        let nb = l.n_bus;
        for (i, bus) in self.case.buses.iter().enumerate() {
            let v = x[l.v_col(i)];
            let (dp, dq) = self.diag[i];
            h[i] = -bus.p_load - v * v * dp;
            h[nb + i] = -bus.q_load - v * v * dq;
        }
        for (k, &g) in l.gens.iter().enumerate() {
            let bus = self.case.gens[g].bus;
            h[bus] += x[l.pg_start + k];
            h[nb + bus] += x[l.qg_start + k];
        }
        for c in &self.couplings {
            let k = self.pair_kernel(c, x);
            let w = c.mag * x[c.vars[2]] * x[c.vars[3]];
            h[c.i] -= w * k.c;
            h[nb + c.i] -= w * k.s;
        }
        Ok(())
    }

    fn ineq_values(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
        for (a, &row) in self.angles.iter().zip(&self.angle_row) {
            let d = self.theta(x, a.cols[0]) - self.theta(x, a.cols[1]);
            g[row] = a.sign * (d - a.limit);
        }
        for (f, &row) in self.flows.iter().zip(&self.flow_row) {
            let e = self.end_eval(&f.end, x);
            g[row] = e.p * e.p + e.q * e.q - f.rate2;
        }
        Ok(())
    }

    fn jac_eq_values(&self, x: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.fill(0.0);
        let l = &self.layout;
        for &(p, q) in &self.gen_jac {
            vals[p] += 1.0;
            vals[q] += 1.0;
        }
        for i in 0..l.n_bus {
            let v = x[l.v_col(i)];
            let (dp, dq) = self.diag[i];
            vals[self.diag_jac_p[i]] -= 2.0 * v * dp;
            vals[self.diag_jac_q[i]] -= 2.0 * v * dq;
        }
        for c in &self.couplings {
            let k = self.pair_kernel(c, x);
            let (va, vb) = (x[c.vars[2]], x[c.vars[3]]);
            scatter(&c.jac_p, &term_grad(-c.mag, va, vb, k.c, k.dc), vals);
            scatter(&c.jac_q, &term_grad(-c.mag, va, vb, k.s, k.ds), vals);
        }
        Ok(())
    }

    fn jac_ineq_values(&self, x: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.fill(0.0);
        for a in &self.angles {
            scatter(&a.jac, &[a.sign, -a.sign], vals);
        }
        for f in &self.flows {
            let e = self.end_eval(&f.end, x);
            let g: [f64; 4] = std::array::from_fn(|r| 2.0 * (e.p * e.gp[r] + e.q * e.gq[r]));
            scatter(&f.jac, &g, vals);
        }
        Ok(())
    }

    fn hess_values(&self, x: &[f64], obj_factor: f64, lambda: &[f64], nu: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.fill(0.0);
        let l = &self.layout;
        let nb = l.n_bus;
        for (k, &g) in l.gens.iter().enumerate() {
            vals[self.gen_hess[k]] += obj_factor * 2.0 * self.case.gens[g].cost.c2;
        }
        for i in 0..nb {
            let (dp, dq) = self.diag[i];
            vals[self.diag_hess[i]] -= 2.0 * (lambda[i] * dp + lambda[nb + i] * dq);
        }
        for c in &self.couplings {
            let (lp, lq) = (lambda[c.i], lambda[nb + c.i]);
            if lp == 0.0 && lq == 0.0 {
                continue;
            }
            let k = self.pair_kernel(c, x);
            let (va, vb) = (x[c.vars[2]], x[c.vars[3]]);
            let mut hl = [0.0; 10];
            term_hess(
                -c.mag,
                va,
                vb,
                lp * k.c + lq * k.s,
                lp * k.dc + lq * k.ds,
                lp * k.d2c + lq * k.d2s,
                &mut hl,
            );
            scatter(&c.hess, &hl, vals);
        }
        for (f, &row) in self.flows.iter().zip(&self.flow_row) {
            let w = nu[row];
            if w == 0.0 {
                continue;
            }
            let e = self.end_eval(&f.end, x);
            // ∇²(P² + Q²) = 2(∇P∇Pᵀ + ∇Q∇Qᵀ + P∇²P + Q∇²Q)
            let mut hl = [0.0; 10];
            let k = &e.k;
            term_hess(
                f.end.mut_mag,
                e.va,
                e.vb,
                e.p * k.c + e.q * k.s,
                e.p * k.dc + e.q * k.ds,
                e.p * k.d2c + e.q * k.d2s,
                &mut hl,
            );
            hl[5] += 2.0 * (e.p * f.end.self_p + e.q * f.end.self_q);
            for r in 0..4 {
                for c in 0..=r {
                    hl[r * (r + 1) / 2 + c] += e.gp[r] * e.gp[c] + e.gq[r] * e.gq[c];
                }
            }
            let s = 2.0 * w;
            hl.iter_mut().for_each(|v| *v *= s);
            scatter(&f.hess, &hl, vals);
        }
        Ok(())
    }
}
