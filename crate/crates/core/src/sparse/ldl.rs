use super::CsrPattern;
use crate::error::{Error, Result};

/// Counts of positive, negative and numerically zero pivots of `D`. By
/// Sylvester's law this is the inertia of the factored matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

const NONE: usize = usize::MAX;

/// Ordering, elimination tree and column counts for one symmetric pattern.
///
/// The input pattern holds the lower triangle (`row >= col`) of an `n × n`
/// symmetric matrix and must contain every diagonal entry.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    /// Upper-triangular CSC of the permuted matrix.
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Lower-pattern value position -> permuted CSC position.
    map: Vec<usize>,
    etree: Vec<usize>,
    l_ptr: Vec<usize>,
}

impl LdlSymbolic {
    pub fn new(lower: &CsrPattern, perm: Vec<usize>) -> Result<Self> {
        let n = lower.nrows;
        assert_eq!(perm.len(), n);
        let mut iperm = vec![0; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(lower.nnz());
        let mut has_diag = vec![false; n];
        for r in 0..n {
            for k in lower.row(r) {
                let c = lower.col_idx[k];
                debug_assert!(c <= r, "pattern must be lower triangular");
                if c == r {
                    has_diag[r] = true;
                }
                let (pr, pc) = (iperm[r], iperm[c]);
                entries.push((pr.max(pc), pr.min(pc), k));
            }
        }
        if let Some(i) = has_diag.iter().position(|d| !d) {
            return Err(Error::Assembly(format!("missing diagonal entry {i}")));
        }
        entries.sort_unstable();
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut map = vec![0; entries.len()];
        for (pos, &(col, row, k)) in entries.iter().enumerate() {
            col_ptr[col + 1] += 1;
            row_idx.push(row);
            map[k] = pos;
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }

        let mut etree = vec![NONE; n];
        let mut l_nz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &i0 in &row_idx[col_ptr[j]..col_ptr[j + 1]] {
                let mut i = i0;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    l_nz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_ptr = vec![0; n + 1];
        for i in 0..n {
            l_ptr[i + 1] = l_ptr[i] + l_nz[i];
        }
        Ok(LdlSymbolic {
            n,
            perm,
            col_ptr,
            row_idx,
            map,
            etree,
            l_ptr,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Nonzeros in the strictly lower factor `L`.
    pub fn factor_nnz(&self) -> usize {
        self.l_ptr[self.n]
    }
}

/// Numeric `P·A·Pᵀ = L·D·Lᵀ` without pivoting (unit lower `L`, diagonal `D`).
#[derive(Debug, Clone)]
pub struct LdlFactor {
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    d_inv: Vec<f64>,
    pub inertia: Inertia,
}

impl LdlFactor {
    /// Factor the matrix whose lower-pattern values are `lower_vals`.
    ///
    /// A pivot that loses more than `cancel_tol` of the magnitude of the terms
    /// that formed it (or is exactly zero) counts as zero; the factorization
    /// still completes so the caller can inspect the inertia, but such a
    /// factor must not be used for solves.
    pub fn factor(sym: &LdlSymbolic, lower_vals: &[f64], cancel_tol: f64) -> LdlFactor {
        let n = sym.n;
        let mut a = vec![0.0; sym.row_idx.len()];
        for (k, &pos) in sym.map.iter().enumerate() {
            a[pos] += lower_vals[k];
        }
        let nnz_l = sym.l_ptr[n];
        let mut l_idx = vec![0; nnz_l];
        let mut l_val = vec![0.0; nnz_l];
        let mut d = vec![0.0; n];
        let mut d_inv = vec![0.0; n];
        let mut next = sym.l_ptr[..n].to_vec();
        let mut y = vec![0.0; n];
        let mut marked = vec![false; n];
        let mut y_idx = vec![0; n];
        let mut stack = vec![0; n];
        let mut inertia = Inertia::default();

        for k in 0..n {
            let mut n_y = 0;
            let mut mag = 0.0;
            for p in sym.col_ptr[k]..sym.col_ptr[k + 1] {
                let i = sym.row_idx[p];
                if i == k {
                    d[k] = a[p];
                    mag += a[p].abs();
                    continue;
                }
                y[i] = a[p];
                if marked[i] {
                    continue;
                }
                // Walk the elimination tree up to k, collecting the reach.
                let mut top = 0;
                let mut j = i;
                while j != NONE && j < k && !marked[j] {
                    marked[j] = true;
                    stack[top] = j;
                    top += 1;
                    j = sym.etree[j];
                }
                while top > 0 {
                    top -= 1;
                    y_idx[n_y] = stack[top];
                    n_y += 1;
                }
            }
            for t in (0..n_y).rev() {
                let c = y_idx[t];
                let yc = y[c];
                for q in sym.l_ptr[c]..next[c] {
                    y[l_idx[q]] -= l_val[q] * yc;
                }
                let lk = yc * d_inv[c];
                l_idx[next[c]] = k;
                l_val[next[c]] = lk;
                next[c] += 1;
                let term = yc * lk;
                d[k] -= term;
                mag += term.abs();
                y[c] = 0.0;
                marked[c] = false;
            }
            let dk = d[k];
            if dk == 0.0 || !dk.is_finite() || dk.abs() <= cancel_tol * mag {
                inertia.zero += 1;
                d_inv[k] = 0.0;
            } else {
                if dk > 0.0 {
                    inertia.positive += 1;
                } else {
                    inertia.negative += 1;
                }
                d_inv[k] = 1.0 / dk;
            }
        }
        LdlFactor {
            l_idx,
            l_val,
            d_inv,
            inertia,
        }
    }

    /// Solve `A·x = b` in place.
    pub fn solve(&self, sym: &LdlSymbolic, b: &mut [f64]) {
        let n = sym.n;
        let mut x: Vec<f64> = sym.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let xi = x[i];
            for q in sym.l_ptr[i]..sym.l_ptr[i + 1] {
                x[self.l_idx[q]] -= self.l_val[q] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.d_inv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for q in sym.l_ptr[i]..sym.l_ptr[i + 1] {
                xi -= self.l_val[q] * x[self.l_idx[q]];
            }
            x[i] = xi;
        }
        for (k, &p) in sym.perm.iter().enumerate() {
            b[p] = x[k];
        }
    }
}
