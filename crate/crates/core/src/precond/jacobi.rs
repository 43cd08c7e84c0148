use super::InnerPreconditioner;
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// `P = diag(A)`.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &SparseMatrix) -> Result<Self> {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                if d > 0.0 && d.is_finite() {
                    Ok(1.0 / d)
                } else {
                    Err(Error::PreconditionerConstruction(format!("diagonal entry {i} is {d}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Jacobi { inv_diag })
    }
}

impl InnerPreconditioner for Jacobi {
    fn dim(&self) -> usize {
        self.inv_diag.len()
    }

    fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]) {
        for ((o, yi), d) in out.iter_mut().zip(y).zip(&self.inv_diag) {
            *o = yi * d;
        }
    }

    fn name(&self) -> &'static str {
        "jacobi"
    }
}
