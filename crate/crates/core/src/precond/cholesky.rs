//! Exact sparse Cholesky factorization `P A Pᵀ = L Lᵀ` (up-looking, with a
//! nested-dissection ordering).

use super::ordering::nested_dissection;
use super::InnerPreconditioner;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// Column-compressed `L`, diagonal entry first in every column.
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
}

/// Upper triangle of `P A Pᵀ`, column-compressed.
struct UpperCsc {
    cp: Vec<usize>,
    ci: Vec<usize>,
    cx: Vec<f64>,
}

fn permuted_upper(a: &SparseMatrix, pinv: &[usize]) -> UpperCsc {
    let n = a.n_rows();
    let mut counts = vec![0usize; n + 1];
    for r in 0..n {
        let k = pinv[r];
        for &c in a.row(r).0 {
            if pinv[c] <= k {
                counts[k + 1] += 1;
            }
        }
    }
    for k in 0..n {
        counts[k + 1] += counts[k];
    }
    let cp = counts.clone();
    let mut next = counts;
    let mut ci = vec![0; cp[n]];
    let mut cx = vec![0.0; cp[n]];
    // column k of the upper triangle is row k of the lower one; A is symmetric
    for r in 0..n {
        let k = pinv[r];
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            let i = pinv[c];
            if i <= k {
                ci[next[k]] = i;
                cx[next[k]] = v;
                next[k] += 1;
            }
        }
    }
    UpperCsc { cp, ci, cx }
}

fn etree(c: &UpperCsc, n: usize) -> Vec<usize> {
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for p in c.cp[k]..c.cp[k + 1] {
            let mut i = c.ci[p];
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..n]` in topological order. Returns `top`.
fn ereach(c: &UpperCsc, k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = stack.len();
    let mut top = n;
    let tag = k + 1;
    mark[k] = tag;
    for p in c.cp[k]..c.cp[k + 1] {
        let mut i = c.ci[p];
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != tag {
            stack[len] = i;
            len += 1;
            mark[i] = tag;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

impl SparseCholesky {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(Error::PreconditionerConstruction("Cholesky needs a square matrix".into()));
        }
        let perm = nested_dissection(a);
        let mut pinv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        let c = permuted_upper(a, &pinv);
        let parent = etree(&c, n);

        // symbolic: column counts from the row patterns
        let mut stack = vec![0; n];
        let mut mark = vec![NONE; n];
        let mut colcount = vec![1usize; n];
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                colcount[j] += 1;
            }
        }
        let mut lp = vec![0; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + colcount[k];
        }
        let nnz = lp[n];
        let mut li = vec![0; nnz];
        let mut lx = vec![0.0; nnz];

        // numeric, up-looking
        let mut next: Vec<usize> = lp[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.iter_mut().for_each(|m| *m = NONE);
        for k in 0..n {
            let top = ereach(&c, k, &parent, &mut stack, &mut mark);
            x[k] = 0.0;
            for p in c.cp[k]..c.cp[k + 1] {
                x[c.ci[p]] = c.cx[p];
            }
            let mut d = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / lx[lp[i]];
                x[i] = 0.0;
                for p in lp[i] + 1..next[i] {
                    x[li[p]] -= lx[p] * lki;
                }
                d -= lki * lki;
                let p = next[i];
                next[i] += 1;
                li[p] = k;
                lx[p] = lki;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::PreconditionerConstruction(format!(
                    "matrix is not positive definite (pivot {d:e} at column {k})"
                )));
            }
            let p = next[k];
            next[k] += 1;
            li[p] = k;
            lx[p] = d.sqrt();
        }
        Ok(SparseCholesky { n, perm, lp, li, lx })
    }

    /// Number of stored entries of `L`.
    pub fn factor_nnz(&self) -> usize {
        self.lx.len()
    }

    /// Solves `A x = b` in place on a permuted copy.
    fn solve_permuted(&self, y: &mut [f64]) {
        let (lp, li, lx) = (&self.lp, &self.li, &self.lx);
        for j in 0..self.n {
            let yj = y[j] / lx[lp[j]];
            y[j] = yj;
            for p in lp[j] + 1..lp[j + 1] {
                y[li[p]] -= lx[p] * yj;
            }
        }
        for j in (0..self.n).rev() {
            let mut s = y[j];
            for p in lp[j] + 1..lp[j + 1] {
                s -= lx[p] * y[li[p]];
            }
            y[j] = s / lx[lp[j]];
        }
    }
}

impl InnerPreconditioner for SparseCholesky {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]) {
        let mut w: Vec<f64> = self.perm.iter().map(|&old| y[old]).collect();
        self.solve_permuted(&mut w);
        for (new, &old) in self.perm.iter().enumerate() {
            out[old] = w[new];
        }
    }

    fn name(&self) -> &'static str {
        "exact"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::norm2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shifted_grid(nx: usize, ny: usize, nz: usize) -> SparseMatrix {
        let id = |i: usize, j: usize, k: usize| i + nx * (j + ny * k);
        let mut t = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let a = id(i, j, k);
                    t.push((a, a, 6.1));
                    let mut link = |b: usize| {
                        t.push((a, b, -1.0));
                        t.push((b, a, -1.0));
                    };
                    if i + 1 < nx {
                        link(id(i + 1, j, k));
                    }
                    if j + 1 < ny {
                        link(id(i, j + 1, k));
                    }
                    if k + 1 < nz {
                        link(id(i, j, k + 1));
                    }
                }
            }
        }
        let n = nx * ny * nz;
        SparseMatrix::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn solves_to_machine_precision() {
        let a = shifted_grid(9, 8, 7);
        let chol = SparseCholesky::factor(&a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y: Vec<f64> = (0..a.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = chol.apply_inverse(&y);
        let r: Vec<f64> = a.mul_vec(&x).unwrap().iter().zip(&y).map(|(a, b)| a - b).collect();
        assert!(norm2(&r) / norm2(&y) <= 1e-12);
    }

    #[test]
    fn nested_dissection_limits_fill() {
        let a = shifted_grid(16, 16, 16);
        let chol = SparseCholesky::factor(&a).unwrap();
        // banded (natural) ordering would store about n · 256 entries
        assert!(chol.factor_nnz() < 4096 * 120, "{}", chol.factor_nnz());
    }

    #[test]
    fn rejects_indefinite() {
        let a = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(SparseCholesky::factor(&a), Err(Error::PreconditionerConstruction(_))));
    }
}
