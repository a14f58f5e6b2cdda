//! Sparse matrix plumbing for the interior-point solver: fixed CSR patterns
//! filled through precomputed slot maps, a fill-reducing ordering and an
//! LDLᵀ factorization that reports inertia.

mod ldl;
mod ordering;

pub use ldl::{Inertia, LdlFactor, LdlSymbolic};
pub use ordering::{minimum_degree, NodeClass};

/// Compressed-row sparsity pattern built from a fixed list of coordinates.
///
/// `slots[k]` is the position in the CSR value array that receives the
/// `k`-th coordinate handed to [`CsrPattern::from_coords`]; duplicates share
/// a slot and accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrPattern {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub slots: Vec<usize>,
}

impl CsrPattern {
    pub fn from_coords(nrows: usize, ncols: usize, coords: &[(usize, usize)]) -> Self {
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| coords[k]);
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(coords.len());
        let mut slots = vec![0; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c) = coords[k];
            assert!(r < nrows && c < ncols, "coordinate ({r}, {c}) out of range");
            if last != Some((r, c)) {
                col_idx.push(c);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
            slots[k] = col_idx.len() - 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CsrPattern {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            slots,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Scatter per-coordinate values into a fresh CSR value array.
    pub fn accumulate(&self, coord_values: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coord_values.len(), self.slots.len());
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&slot, &v) in self.slots.iter().zip(coord_values) {
            out[slot] += v;
        }
    }

    pub fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.row_ptr[r]..self.row_ptr[r + 1]
    }

    /// `y = A·x`.
    pub fn mul(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            y[r] = self.row(r).map(|k| vals[k] * x[self.col_idx[k]]).sum();
        }
    }

    /// `y += Aᵀ·x`.
    pub fn mul_t_add(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let xr = x[r];
            if xr != 0.0 {
                for k in self.row(r) {
                    y[self.col_idx[k]] += vals[k] * xr;
                }
            }
        }
    }

    /// `y = S·x` for a symmetric matrix whose lower triangle this pattern holds.
    pub fn sym_mul(&self, vals: &[f64], x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.nrows {
            for k in self.row(r) {
                let c = self.col_idx[k];
                y[r] += vals[k] * x[c];
                if c != r {
                    y[c] += vals[k] * x[r];
                }
            }
        }
    }

    /// Symmetric Ruiz equilibration of the lower-triangle matrix `vals`:
    /// returns `d > 0` such that every row of `D·S·D` has ∞-norm close to 1.
    /// Rows that are entirely zero keep `d = 1`.
    pub fn ruiz_scaling(&self, vals: &[f64], iters: usize) -> Vec<f64> {
        let n = self.nrows;
        let mut d = vec![1.0; n];
        let mut rmax = vec![0.0f64; n];
        for _ in 0..iters {
            rmax.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..n {
                for k in self.row(r) {
                    let c = self.col_idx[k];
                    let a = (vals[k] * d[r] * d[c]).abs();
                    rmax[r] = rmax[r].max(a);
                    rmax[c] = rmax[c].max(a);
                }
            }
            let mut done = true;
            for (di, &m) in d.iter_mut().zip(&rmax) {
                if m > 0.0 && m.is_finite() {
                    *di /= m.sqrt();
                    done &= (m - 1.0).abs() < 1e-2;
                }
            }
            if done {
                break;
            }
        }
        d
    }

    /// Expand to a dense row-major matrix (tests and small diagnostics).
    pub fn to_dense(&self, vals: &[f64]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for r in 0..self.nrows {
            for k in self.row(r) {
                d[r][self.col_idx[k]] += vals[k];
            }
        }
        d
    }
}
