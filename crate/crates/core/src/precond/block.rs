use std::sync::atomic::{AtomicUsize, Ordering};

use super::{InnerKind, InnerPreconditioner};
use crate::assembly::{assemble_lumped_mass, assemble_stiffness, Space};
use crate::conductivity::{Conductivity, Medium};
use crate::error::{check_len, Error, Result};
use crate::mesh::Mesh;
use crate::sparse::SparseMatrix;
use crate::system::{BidomainSystem, BlockVector};

/// Monodomain surrogate `K_m = γ M_H + S_m` of the Schur complement, where
/// `S_m` is assembled from the harmonic-mean tensor of `σ_i` and `σ_e`.
/// Same sparsity pattern as `S_i`.
pub fn build_km(mesh: &Mesh, model: &Conductivity, gamma: f64) -> Result<SparseMatrix> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    let sm = assemble_stiffness(mesh, &model.field(Medium::Monodomain), Space::HeartOnly)?;
    let mh = assemble_lumped_mass(mesh, Space::HeartOnly)?;
    let d: Vec<f64> = mh.values().iter().map(|m| gamma * m).collect();
    sm.add_diagonal(&d)
}

/// `S̃_1 = S_1 + β 𝟙𝟙ᵀ / N` with `β` the mean diagonal entry of `S_1`.
///
/// The rank-one term is never formed. Inverses go through the grounded
/// matrix `B = S_1 + β e_0 e_0ᵀ`, which is sparse and SPD:
/// `S̃_1⁻¹ y = p B⁻¹ p y + (Σ y)/(β N) 𝟙`, `p` the projection onto `𝟙^⊥`.
#[derive(Clone, Debug)]
pub struct RegularizedS1 {
    s1: SparseMatrix,
    grounded: SparseMatrix,
    beta: f64,
}

pub fn regularize_s1(s1: &SparseMatrix) -> Result<RegularizedS1> {
    let n = s1.n_rows();
    if n == 0 || s1.n_cols() != n {
        return Err(Error::InvalidArgument("S_1 must be square and non-empty".into()));
    }
    let beta = s1.diagonal().iter().sum::<f64>() / n as f64;
    if !(beta > 0.0) {
        return Err(Error::NumericalDegeneracy(format!("S_1 has mean diagonal {beta}")));
    }
    let mut ground = vec![0.0; n];
    ground[0] = beta;
    Ok(RegularizedS1 { s1: s1.clone(), grounded: s1.add_diagonal(&ground)?, beta })
}

impl RegularizedS1 {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dim(&self) -> usize {
        self.s1.n_rows()
    }

    /// The grounded matrix `B` handed to inner preconditioners.
    pub fn grounded(&self) -> &SparseMatrix {
        &self.grounded
    }

    /// `S̃_1 x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.s1.mul_vec(x)?;
        let shift = self.beta * x.iter().sum::<f64>() / x.len() as f64;
        y.iter_mut().for_each(|v| *v += shift);
        Ok(y)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        self.s1.to_dense().add_scalar(self.beta / n as f64)
    }

    /// Approximate inverse built from an inner preconditioner for `B`.
    pub fn inverse(&self, kind: InnerKind) -> Result<RegularizedInverse> {
        Ok(RegularizedInverse { inner: kind.setup(&self.grounded)?, beta: self.beta })
    }
}

/// `p P_B⁻¹ p + 𝟙𝟙ᵀ/(β N)`: exact `S̃_1⁻¹` when `P_B = B`.
#[derive(Debug)]
pub struct RegularizedInverse {
    inner: Box<dyn InnerPreconditioner>,
    beta: f64,
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

impl InnerPreconditioner for RegularizedInverse {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_inverse_into(&self, y: &[f64], out: &mut [f64]) {
        let my = mean(y);
        let py: Vec<f64> = y.iter().map(|v| v - my).collect();
        self.inner.apply_inverse_into(&py, out);
        let shift = mean(out) - my / self.beta;
        out.iter_mut().for_each(|v| *v -= shift);
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

/// Inner solves and `S_i` products, either accumulated by one solve or read
/// from the preconditioner's shared counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub p1: usize,
    pub pk: usize,
    pub si: usize,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: OpCounts) {
        self.p1 += o.p1;
        self.pk += o.pk;
        self.si += o.si;
    }
}

#[derive(Debug, Default)]
struct AtomicCounts {
    p1: AtomicUsize,
    pk: AtomicUsize,
    si: AtomicUsize,
}

/// `P_Λ = L_P U_P` with
///
/// ```text
///     L_P = [ P_1     0   ]      U_P = [ I   P_1⁻¹ Πᵀ S_i ]
///           [ S_i Π   P_K ]            [ 0   I            ]
/// ```
///
/// `P_1` approximates `S̃_1` and `P_K` approximates `K_m`.
#[derive(Debug)]
pub struct BlockLuPreconditioner {
    p1: Box<dyn InnerPreconditioner>,
    pk: Box<dyn InnerPreconditioner>,
    si: SparseMatrix,
    n: usize,
    counts: AtomicCounts,
}

impl BlockLuPreconditioner {
    /// Builds `P_1` on the regularized `S_1` and `P_K` on `km`.
    pub fn new(sys: &BidomainSystem, km: &SparseMatrix, inner1: InnerKind, inner_k: InnerKind) -> Result<Self> {
        check_len("K_m rows", km.n_rows(), sys.n_heart())?;
        let p1 = regularize_s1(&sys.s1)?.inverse(inner1)?;
        let pk = inner_k.setup(km)?;
        Self::from_parts(sys.si.clone(), sys.n(), Box::new(p1), pk)
    }

    /// Assembles `K_m` for `sys` and uses the same inner kind for both blocks.
    pub fn assemble(mesh: &Mesh, model: &Conductivity, sys: &BidomainSystem, inner: InnerKind) -> Result<Self> {
        let km = build_km(mesh, model, sys.gamma)?;
        Self::new(sys, &km, inner, inner)
    }

    /// Wraps arbitrary inner preconditioners; `p1` acts on `ℝ^N`, `pk` on `ℝ^{N_H}`.
    pub fn from_parts(
        si: SparseMatrix,
        n: usize,
        p1: Box<dyn InnerPreconditioner>,
        pk: Box<dyn InnerPreconditioner>,
    ) -> Result<Self> {
        let nh = si.n_rows();
        check_len("P_1 dimension", p1.dim(), n)?;
        check_len("P_K dimension", pk.dim(), nh)?;
        if nh > n {
            return Err(Error::InvalidArgument(format!("N_H = {nh} exceeds N = {n}")));
        }
        Ok(BlockLuPreconditioner { p1, pk, si, n, counts: AtomicCounts::default() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_heart(&self) -> usize {
        self.si.n_rows()
    }

    pub fn inner_names(&self) -> (&'static str, &'static str) {
        (self.p1.name(), self.pk.name())
    }

    /// `X = U_P⁻¹ L_P⁻¹ Y`.
    pub fn apply_inverse(&self, y: &BlockVector) -> Result<BlockVector> {
        check_len("u block", y.u.len(), self.n)?;
        check_len("v block", y.v.len(), self.n_heart())?;
        let mut x = BlockVector::zeros(self.n, self.n_heart());
        self.apply_inverse_into(y, &mut x, &mut OpCounts::default());
        Ok(x)
    }

    pub(crate) fn apply_inverse_into(&self, y: &BlockVector, x: &mut BlockVector, local: &mut OpCounts) {
        let nh = self.n_heart();
        // t = P_1⁻¹ Y_u
        let mut t = vec![0.0; self.n];
        self.p1.apply_inverse_into(&y.u, &mut t);
        // s = P_K⁻¹ (Y_v − S_i Π t)
        let mut r = vec![0.0; nh];
        self.si.mul_vec_into(&t[..nh], &mut r);
        for (ri, yi) in r.iter_mut().zip(&y.v) {
            *ri = yi - *ri;
        }
        self.pk.apply_inverse_into(&r, &mut x.v);
        // X_u = t − P_1⁻¹ Πᵀ S_i s
        let mut w = vec![0.0; self.n];
        self.si.mul_vec_into(&x.v, &mut w[..nh]);
        self.p1.apply_inverse_into(&w, &mut x.u);
        for (xu, ti) in x.u.iter_mut().zip(&t) {
            *xu = ti - *xu;
        }
        let step = OpCounts { p1: 2, pk: 1, si: 2 };
        *local += step;
        self.counts.p1.fetch_add(step.p1, Ordering::Relaxed);
        self.counts.pk.fetch_add(step.pk, Ordering::Relaxed);
        self.counts.si.fetch_add(step.si, Ordering::Relaxed);
    }

    /// Operations performed since construction or the last reset, summed
    /// over every thread using this preconditioner.
    pub fn counters(&self) -> OpCounts {
        OpCounts {
            p1: self.counts.p1.load(Ordering::Relaxed),
            pk: self.counts.pk.load(Ordering::Relaxed),
            si: self.counts.si.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counts.p1.store(0, Ordering::Relaxed);
        self.counts.pk.store(0, Ordering::Relaxed);
        self.counts.si.store(0, Ordering::Relaxed);
    }
}
