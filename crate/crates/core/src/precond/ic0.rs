//! Zero-fill incomplete Cholesky, `A ≈ L Lᵀ` with `L` on the lower pattern
//! of `A`.

use super::InnerPreconditioner;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Restart budget for the diagonal-shift breakdown repair.
pub const IC0_MAX_RESTARTS: usize = 20;
const BASE_SHIFT: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Ic0 {
    /// Row-compressed `L`; the diagonal is the last entry of every row.
    rp: Vec<usize>,
    ci: Vec<usize>,
    x: Vec<f64>,
    shift: f64,
}

impl Ic0 {
    /// Factors `A`. On a non-positive pivot the diagonal is scaled by
    /// `1 + 1e-3 · 2^(k−1)` at restart `k`.
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(Error::PreconditionerConstruction("IC(0) needs a square matrix".into()));
        }
        let mut rp = Vec::with_capacity(n + 1);
        let mut ci = Vec::new();
        let mut vals = Vec::new();
        rp.push(0);
        for r in 0..n {
            let (cols, v) = a.row(r);
            let mut has_diag = false;
            for (&c, &x) in cols.iter().zip(v) {
                if c < r {
                    ci.push(c);
                    vals.push(x);
                } else if c == r {
                    has_diag = true;
                }
            }
            if !has_diag {
                return Err(Error::PreconditionerConstruction(format!("row {r} has no diagonal entry")));
            }
            ci.push(r);
            vals.push(a.get(r, r));
            rp.push(ci.len());
        }
        let mut shift = 0.0;
        for restart in 0..=IC0_MAX_RESTARTS {
            if restart > 0 {
                shift = BASE_SHIFT * 2f64.powi(restart as i32 - 1);
            }
            let mut x = vals.clone();
            for r in 0..n {
                x[rp[r + 1] - 1] *= 1.0 + shift;
            }
            if numeric(&rp, &ci, &mut x) {
                if restart > 0 {
                    log::debug!("IC(0) succeeded after {restart} diagonal shifts");
                }
                return Ok(Ic0 { rp, ci, x, shift });
            }
        }
        Err(Error::PreconditionerConstruction(format!(
            "IC(0) broke down after {IC0_MAX_RESTARTS} diagonal shifts"
        )))
    }

    /// Relative diagonal shift that was needed (0 without breakdown).
    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// In-place factorization; false on a non-positive pivot.
fn numeric(rp: &[usize], ci: &[usize], x: &mut [f64]) -> bool {
    let n = rp.len() - 1;
    for r in 0..n {
        let (start, diag) = (rp[r], rp[r + 1] - 1);
        for p in start..diag {
            let k = ci[p];
            // L_rk = (A_rk − Σ_{j<k} L_rj L_kj) / L_kk, sparse merge of rows r and k
            let (mut a, mut b) = (start, rp[k]);
            let kdiag = rp[k + 1] - 1;
            let mut s = x[p];
            while a < p && b < kdiag {
                match ci[a].cmp(&ci[b]) {
                    std::cmp::Ordering::Less => a += 1,
                    std::cmp::Ordering::Greater => b += 1,
                    std::cmp::Ordering::Equal => {
                        s -= x[a] * x[b];
                        a += 1;
                        b += 1;
                    }
                }
            }
            x[p] = s / x[kdiag];
        }
        let d = x[diag] - x[start..diag].iter().map(|l| l * l).sum::<f64>();
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        x[diag] = d.sqrt();
    }
    true
}

impl InnerPreconditioner for Ic0 {
    fn dim(&self) -> usize {
        self.rp.len() - 1
    }

    fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]) {
        let n = self.dim();
        out.copy_from_slice(y);
        for r in 0..n {
            let diag = self.rp[r + 1] - 1;
            let mut s = out[r];
            for p in self.rp[r]..diag {
                s -= self.x[p] * out[self.ci[p]];
            }
            out[r] = s / self.x[diag];
        }
        for r in (0..n).rev() {
            let diag = self.rp[r + 1] - 1;
            out[r] /= self.x[diag];
            let xr = out[r];
            for p in self.rp[r]..diag {
                out[self.ci[p]] -= self.x[p] * xr;
            }
        }
    }

    fn name(&self) -> &'static str {
        "ic0"
    }
}
