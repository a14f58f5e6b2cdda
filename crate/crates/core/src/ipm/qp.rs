use super::Nlp;
use crate::error::Result;

/// `min ½xᵀQx + cᵀx + c0  s.t.  A_eq x = b_eq,  A_in x ≤ b_in,  lo ≤ x ≤ hi`.
///
/// `q` holds the lower triangle of the symmetric `Q` as `(row, col, value)`
/// with `row >= col`; the constraint matrices are coordinate lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadraticProgram {
    pub n: usize,
    pub q: Vec<(usize, usize, f64)>,
    pub c: Vec<f64>,
    pub c0: f64,
    pub a_eq: Vec<(usize, usize, f64)>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<(usize, usize, f64)>,
    pub b_in: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl QuadraticProgram {
    /// Unconstrained, unbounded program in `n` variables.
    pub fn new(n: usize) -> Self {
        QuadraticProgram {
            n,
            c: vec![0.0; n],
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
            ..Default::default()
        }
    }

    fn residual(a: &[(usize, usize, f64)], b: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().zip(b).for_each(|(o, b)| *o = -b);
        for &(r, c, v) in a {
            out[r] += v * x[c];
        }
    }
}

impl Nlp for QuadraticProgram {
    fn n_vars(&self) -> usize {
        self.n
    }

    fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    fn n_ineq(&self) -> usize {
        self.b_in.len()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn jac_eq_structure(&self) -> Vec<(usize, usize)> {
        self.a_eq.iter().map(|&(r, c, _)| (r, c)).collect()
    }

    fn jac_ineq_structure(&self) -> Vec<(usize, usize)> {
        self.a_in.iter().map(|&(r, c, _)| (r, c)).collect()
    }

    fn hess_structure(&self) -> Vec<(usize, usize)> {
        self.q.iter().map(|&(r, c, _)| (r, c)).collect()
    }

    fn objective(&self, x: &[f64]) -> Result<f64> {
        let mut f = self.c0 + self.c.iter().zip(x).map(|(c, x)| c * x).sum::<f64>();
        for &(r, c, v) in &self.q {
            f += if r == c { 0.5 * v * x[r] * x[r] } else { v * x[r] * x[c] };
        }
        Ok(f)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<()> {
        grad.copy_from_slice(&self.c);
        for &(r, c, v) in &self.q {
            grad[r] += v * x[c];
            if r != c {
                grad[c] += v * x[r];
            }
        }
        Ok(())
    }

    fn eq_values(&self, x: &[f64], h: &mut [f64]) -> Result<()> {
        Self::residual(&self.a_eq, &self.b_eq, x, h);
        Ok(())
    }

    fn ineq_values(&self, x: &[f64], g: &mut [f64]) -> Result<()> {
        Self::residual(&self.a_in, &self.b_in, x, g);
        Ok(())
    }

    fn jac_eq_values(&self, _x: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.iter_mut().zip(&self.a_eq).for_each(|(o, e)| *o = e.2);
        Ok(())
    }

    fn jac_ineq_values(&self, _x: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.iter_mut().zip(&self.a_in).for_each(|(o, e)| *o = e.2);
        Ok(())
    }

    fn hess_values(&self, _x: &[f64], obj_factor: f64, _l: &[f64], _n: &[f64], vals: &mut [f64]) -> Result<()> {
        vals.iter_mut().zip(&self.q).for_each(|(o, e)| *o = obj_factor * e.2);
        Ok(())
    }
}
