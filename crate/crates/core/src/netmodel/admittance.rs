use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::NetworkCase;
use crate::error::{Error, Result};

/// Complex admittance in magnitude/angle form, angle in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Polar {
    pub mag: f64,
    pub ang: f64,
}

impl Polar {
    pub fn from_complex(z: Complex64) -> Self {
        let mut ang = z.arg();
        if ang <= -PI {
            ang += 2.0 * PI;
        }
        Polar { mag: z.norm(), ang }
    }

    pub fn to_complex(self) -> Complex64 {
        Complex64::from_polar(self.mag, self.ang)
    }
}

/// The four 2×2 π-model entries of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchAdmittance {
    pub ff: Polar,
    pub ft: Polar,
    pub tf: Polar,
    pub tt: Polar,
}

/// Sparse bus admittance matrix (CSR, every diagonal present) together with
/// the per-branch blocks it was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittanceModel {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub entries: Vec<Polar>,
    /// Same entries in rectangular form, exactly as accumulated.
    pub values: Vec<Complex64>,
    /// Position of `(i, i)` inside `entries` for every bus.
    pub diag: Vec<usize>,
    pub branches: Vec<BranchAdmittance>,
}

impl AdmittanceModel {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn entry(&self, i: usize, j: usize) -> Option<Polar> {
        self.position(i, j).map(|k| self.entries[k])
    }

    /// Iterate `(row, col, position)` over the stored pattern.
    pub fn pattern(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], k))
        })
    }
}

fn branch_blocks(r: f64, x: f64, b: f64, tap: f64, shift: f64) -> [Complex64; 4] {
    let ys = Complex64::new(1.0, 0.0) / Complex64::new(r, x);
    let yc = Complex64::new(0.0, b / 2.0);
    let ratio = Complex64::from_polar(tap, shift);
    let yff = (ys + yc) / (tap * tap);
    let yft = -ys / ratio.conj();
    let ytf = -ys / ratio;
    let ytt = ys + yc;
    [yff, yft, ytf, ytt]
}

/// Assemble the π-model blocks of every in-service branch and the bus
/// admittance matrix (blocks plus bus shunts).
pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceModel> {
    let n = case.n_bus();
    let mut rows: Vec<Vec<(usize, Complex64)>> = (0..n)
        .map(|i| {
            let b = &case.buses[i];
            vec![(i, Complex64::new(b.g_shunt, b.b_shunt))]
        })
        .collect();
    let mut branches = Vec::with_capacity(case.branches.len());

    for (k, br) in case.branches.iter().enumerate() {
        if br.r == 0.0 && br.x == 0.0 {
            return Err(Error::InvalidBranch {
                branch: k,
                msg: "r = x = 0".into(),
            });
        }
        if !(br.tap > 0.0) {
            return Err(Error::InvalidBranch {
                branch: k,
                msg: format!("tap ratio {} must be positive", br.tap),
            });
        }
        let [yff, yft, ytf, ytt] = branch_blocks(br.r, br.x, br.b_charge, br.tap, br.shift);
        branches.push(BranchAdmittance {
            ff: Polar::from_complex(yff),
            ft: Polar::from_complex(yft),
            tf: Polar::from_complex(ytf),
            tt: Polar::from_complex(ytt),
        });
        if !br.in_service {
            continue;
        }
        let (f, t) = (br.from, br.to);
        rows[f].push((f, yff));
        rows[f].push((t, yft));
        rows[t].push((f, ytf));
        rows[t].push((t, ytt));
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut values: Vec<Complex64> = Vec::new();
    let mut diag = vec![0; n];
    row_ptr.push(0);
    for (i, mut row) in rows.into_iter().enumerate() {
        // Stable sort keeps accumulation order deterministic.
        row.sort_by_key(|&(j, _)| j);
        for (j, v) in row {
            if col_idx.len() > row_ptr[i] && *col_idx.last().unwrap() == j {
                *values.last_mut().unwrap() += v;
            } else {
                if j == i {
                    diag[i] = col_idx.len();
                }
                col_idx.push(j);
                values.push(v);
            }
        }
        row_ptr.push(col_idx.len());
    }
    let entries = values.iter().map(|&v| Polar::from_complex(v)).collect();
    Ok(AdmittanceModel {
        n,
        row_ptr,
        col_idx,
        entries,
        values,
        diag,
        branches,
    })
}
