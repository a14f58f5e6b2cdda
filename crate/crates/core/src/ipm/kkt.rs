//! Reduced symmetric-indefinite KKT system
//!
//! ```text
//! [ W + J_gᵀ Σ_s J_g + Σ_x + δ_w I    J_hᵀ   ] [Δx]   [b_x]
//! [ J_h                            −δ_c I    ] [Δλ] = [b_c]
//! ```
//!
//! assembled into a fixed lower-triangular pattern and factored with LDLᵀ,
//! with `δ_w` increased until the inertia is `(n, m, 0)`.

use crate::error::{Error, Result};
use crate::sparse::{minimum_degree, CsrPattern, Inertia, LdlFactor, LdlSymbolic, NodeClass};

/// Relative cancellation threshold below which a pivot counts as zero. Near
/// convergence slack weights reach 1e10 and more, so a genuine pivot of size
/// `reg_max` must still register: 1e-13 misread such pivots as zero.
const PIVOT_TOL: f64 = 1e-14;
/// Constraint-block regularization used once a zero pivot shows up.
const DELTA_C: f64 = 1e-8;
/// Equilibration sweeps before each factorization.
const RUIZ_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct FactorStats {
    pub delta_w: f64,
    pub delta_c: f64,
    pub factorizations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct KktSystem {
    n: usize,
    m: usize,
    pattern: CsrPattern,
    sym: LdlSymbolic,
    n_hess: usize,
    /// `(ineq row, jg position a, jg position b)` for every lower pair of a row.
    jg_pairs: Vec<(usize, usize, usize)>,
    n_jh: usize,
    coord_vals: Vec<f64>,
    vals: Vec<f64>,
    /// Symmetric equilibration `D` of the last factored matrix.
    scale: Vec<f64>,
    scaled: Vec<f64>,
    factor: Option<LdlFactor>,
    last_delta_w: f64,
}

impl KktSystem {
    /// `x_curved[i]` tells whether variable `i` can carry a non-zero diagonal
    /// (Hessian diagonal, bound barrier or inequality term); variables that
    /// cannot wait in the ordering until a constraint row next to them has
    /// been eliminated.
    pub fn new(
        n: usize,
        hess_coords: &[(usize, usize)],
        jg: &CsrPattern,
        jh: &CsrPattern,
        x_curved: &[bool],
    ) -> Self {
        let m = jh.nrows;
        let mut coords: Vec<(usize, usize)> = hess_coords
            .iter()
            .map(|&(r, c)| {
                assert!(r >= c, "hessian coordinates must be lower triangular");
                (r, c)
            })
            .collect();
        let n_hess = coords.len();
        let mut jg_pairs = Vec::new();
        for r in 0..jg.nrows {
            for ka in jg.row(r) {
                for kb in jg.row(r) {
                    let (ca, cb) = (jg.col_idx[ka], jg.col_idx[kb]);
                    if ca >= cb {
                        jg_pairs.push((r, ka, kb));
                        coords.push((ca, cb));
                    }
                }
            }
        }
        coords.extend((0..n).map(|i| (i, i)));
        for r in 0..m {
            for k in jh.row(r) {
                coords.push((n + r, jh.col_idx[k]));
            }
        }
        coords.extend((0..m).map(|i| (n + i, n + i)));
        let pattern = CsrPattern::from_coords(n + m, n + m, &coords);

        let mut adj = vec![Vec::new(); n + m];
        for r in 0..n + m {
            for k in pattern.row(r) {
                let c = pattern.col_idx[k];
                if c != r {
                    adj[r].push(c);
                    adj[c].push(r);
                }
            }
        }
        let mut curved: Vec<bool> = x_curved.to_vec();
        for &(r, c) in hess_coords {
            if r == c {
                curved[r] = true;
            }
        }
        for &c in &jg.col_idx {
            curved[c] = true;
        }
        let class: Vec<NodeClass> = (0..n + m)
            .map(|i| match i {
                _ if i >= n => NodeClass::Constraint,
                _ if curved[i] => NodeClass::Regular,
                _ => NodeClass::Uncurved,
            })
            .collect();
        let perm = minimum_degree(&adj, &class);
        let sym = LdlSymbolic::new(&pattern, perm).expect("pattern holds every diagonal");
        let nnz = pattern.nnz();
        KktSystem {
            n,
            m,
            n_hess,
            jg_pairs,
            n_jh: jh.nnz(),
            coord_vals: vec![0.0; coords.len()],
            vals: vec![0.0; nnz],
            scale: vec![1.0; n + m],
            scaled: vec![0.0; nnz],
            pattern,
            sym,
            factor: None,
            last_delta_w: 0.0,
        }
    }

    pub fn factor_nnz(&self) -> usize {
        self.sym.factor_nnz()
    }

    /// Fill the matrix and factor it with inertia correction.
    ///
    /// `hess` is in Hessian-coordinate order, `jg_vals`/`jh_vals` in CSR order
    /// of their patterns, `sigma_s` per inequality and `sigma_x` per variable.
    #[allow(clippy::too_many_arguments)]
    pub fn factor(
        &mut self,
        hess: &[f64],
        jg_vals: &[f64],
        sigma_s: &[f64],
        sigma_x: &[f64],
        jh_vals: &[f64],
        reg_min: f64,
        reg_max: f64,
    ) -> Result<FactorStats> {
        let (n, m) = (self.n, self.m);
        let cv = &mut self.coord_vals;
        cv[..self.n_hess].copy_from_slice(hess);
        let mut k = self.n_hess;
        for &(r, a, b) in &self.jg_pairs {
            cv[k] = sigma_s[r] * jg_vals[a] * jg_vals[b];
            k += 1;
        }
        let diag_x = k;
        cv[diag_x..diag_x + n].copy_from_slice(sigma_x);
        k += n;
        cv[k..k + self.n_jh].copy_from_slice(jh_vals);
        let diag_c = k + self.n_jh;

        let mut stats = FactorStats::default();
        let mut delta_w = 0.0;
        let mut delta_c = 0.0;
        loop {
            for i in 0..n {
                self.coord_vals[diag_x + i] = sigma_x[i] + delta_w;
            }
            for i in 0..m {
                self.coord_vals[diag_c + i] = -delta_c;
            }
            self.pattern.accumulate(&self.coord_vals, &mut self.vals);
            // Factor D·K·D: a congruence, so the inertia is unchanged while the
            // dynamic range seen by the unpivoted LDLᵀ shrinks.
            self.scale = self.pattern.ruiz_scaling(&self.vals, RUIZ_ITERS);
            for r in 0..n + m {
                for k in self.pattern.row(r) {
                    let c = self.pattern.col_idx[k];
                    self.scaled[k] = self.vals[k] * self.scale[r] * self.scale[c];
                }
            }
            let f = LdlFactor::factor(&self.sym, &self.scaled, PIVOT_TOL);
            stats.factorizations += 1;
            let target = Inertia {
                positive: n,
                negative: m,
                zero: 0,
            };
            if f.inertia == target {
                self.factor = Some(f);
                stats.delta_w = delta_w;
                stats.delta_c = delta_c;
                if delta_w > 0.0 {
                    self.last_delta_w = delta_w;
                }
                return Ok(stats);
            }
            if f.inertia.zero > 0 && delta_c == 0.0 && m > 0 {
                delta_c = DELTA_C;
                if f.inertia.negative + f.inertia.zero <= m {
                    // Rank-deficient constraints only: retry before touching δ_w.
                    continue;
                }
            }
            delta_w = if delta_w == 0.0 {
                if self.last_delta_w > 0.0 {
                    (self.last_delta_w / 4.0).max(reg_min)
                } else {
                    reg_min
                }
            } else {
                2.0 * delta_w
            };
            if delta_w > reg_max {
                self.factor = None;
                return Err(Error::Solve(format!(
                    "KKT inertia not corrected with regularization up to {reg_max:e} (last inertia {:?})",
                    f.inertia
                )));
            }
        }
    }

    /// Solve with the current factor plus a few steps of iterative refinement.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let f = self.factor.as_ref().expect("factor before solve");
        let apply = |v: &mut [f64]| {
            v.iter_mut().zip(&self.scale).for_each(|(a, d)| *a *= d);
            f.solve(&self.sym, v);
            v.iter_mut().zip(&self.scale).for_each(|(a, d)| *a *= d);
        };
        let mut x = rhs.to_vec();
        apply(&mut x);
        let bnorm = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut r = vec![0.0; rhs.len()];
        let mut prev = f64::INFINITY;
        for _ in 0..3 {
            self.pattern.sym_mul(&self.vals, &x, &mut r);
            for (ri, bi) in r.iter_mut().zip(rhs) {
                *ri = bi - *ri;
            }
            let rn = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(rn > 1e-14 * (1.0 + bnorm)) || rn >= prev {
                break;
            }
            prev = rn;
            apply(&mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
        }
        x
    }
}
