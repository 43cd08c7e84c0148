//! Dense reference computations on small instances.
//!
//! Everything here is `O(n³)` and guarded by a hard size limit. These routines
//! are the ground truth for the structural identities of `Λ`: positive
//! semi-definiteness and kernel, the block `LU` factorization, the
//! harmonic-mean form of the Schur complement and the pseudo-inverse solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::conductivity::{Conductivity, ConductivityParams, FiberField};
use crate::error::{Error, Result};
use crate::mesh::{build_cube_mesh, build_heart_torso_2d, build_square_mesh};
use crate::system::{gamma, BidomainSystem};

pub type DenseMatrix = DMatrix<f64>;

/// Largest `N + N_H` accepted by any dense path.
pub const MAX_DENSE_SIZE: usize = 5000;

/// Relative eigenvalue cutoff separating the kernel from the range.
pub const EIGEN_CUTOFF: f64 = 1e-10;

pub(crate) fn guard_size(n: usize) -> Result<()> {
    if n > MAX_DENSE_SIZE {
        return Err(Error::Oracle(format!(
            "dense oracle refused: size {n} exceeds {MAX_DENSE_SIZE}"
        )));
    }
    Ok(())
}

fn symmetric_eigen(s: &DenseMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !s.is_square() {
        return Err(Error::Oracle("matrix is not square".into()));
    }
    guard_size(s.nrows())?;
    let asym = (s - s.transpose()).abs().max();
    if asym > 1e-12 * s.abs().max().max(1.0) {
        return Err(Error::Oracle(format!("matrix is not symmetric (defect {asym:e})")));
    }
    Ok(SymmetricEigen::new(s.clone()))
}

/// Number of eigenvalues below `EIGEN_CUTOFF · λ_max` in magnitude.
pub fn kernel_dimension(s: &DenseMatrix) -> Result<usize> {
    let eig = symmetric_eigen(s)?;
    let lmax = eig.eigenvalues.amax();
    Ok(eig.eigenvalues.iter().filter(|l| l.abs() <= EIGEN_CUTOFF * lmax).count())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DenseMatrix) -> Result<f64> {
    Ok(symmetric_eigen(s)?.eigenvalues.min())
}

/// Orthogonal projector onto `𝟙^⊥` in `ℝⁿ`.
pub fn mean_free_projector(n: usize) -> DenseMatrix {
    DenseMatrix::identity(n, n) - DenseMatrix::from_element(n, n, 1.0 / n as f64)
}

/// Pseudo-inverse of a symmetric PSD matrix whose kernel is `span{𝟙}`:
/// the inverse on `𝟙^⊥`, zero on the constants.
pub fn pseudo_inverse(s: &DenseMatrix) -> Result<DenseMatrix> {
    let n = s.nrows();
    let eig = symmetric_eigen(s)?;
    let lmax = eig.eigenvalues.amax();
    let cutoff = EIGEN_CUTOFF * lmax;
    let small = eig.eigenvalues.iter().filter(|l| l.abs() <= cutoff).count();
    if small != 1 {
        return Err(Error::Oracle(format!("expected a one-dimensional kernel, found dimension {small}")));
    }
    if eig.eigenvalues.iter().any(|&l| l < -cutoff) {
        return Err(Error::Oracle("matrix is not positive semi-definite".into()));
    }
    let ones = DVector::from_element(n, 1.0);
    if (s * &ones).amax() > 1e-10 * lmax {
        return Err(Error::Oracle("kernel is not spanned by the constant vector".into()));
    }
    let mut pinv = DenseMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l.abs() > cutoff {
            let q = eig.eigenvectors.column(k);
            pinv += (q * q.transpose()) / l;
        }
    }
    let p = mean_free_projector(n);
    Ok(&p * pinv * &p)
}

/// Dense copies of the blocks of a system.
pub struct DenseBlocks {
    pub s1: DenseMatrix,
    pub si: DenseMatrix,
    pub se: DenseMatrix,
    pub mass_heart: DenseMatrix,
    /// `Π` as an `N_H × N` matrix.
    pub pi: DenseMatrix,
    pub gamma: f64,
}

impl DenseBlocks {
    pub fn new(sys: &BidomainSystem) -> Result<Self> {
        let (n, nh) = (sys.n(), sys.n_heart());
        guard_size(n + nh)?;
        let mut pi = DenseMatrix::zeros(nh, n);
        for k in 0..nh {
            pi[(k, k)] = 1.0;
        }
        Ok(DenseBlocks {
            s1: sys.s1.to_dense(),
            si: sys.si.to_dense(),
            se: sys.se.to_dense(),
            mass_heart: sys.mass_heart.to_dense(),
            pi,
            gamma: sys.gamma,
        })
    }

    fn n(&self) -> usize {
        self.s1.nrows()
    }

    fn nh(&self) -> usize {
        self.si.nrows()
    }

    pub fn lambda(&self) -> DenseMatrix {
        let (n, nh) = (self.n(), self.nh());
        let mut l = DenseMatrix::zeros(n + nh, n + nh);
        l.view_mut((0, 0), (n, n)).copy_from(&self.s1);
        l.view_mut((0, n), (n, nh)).copy_from(&(self.pi.transpose() * &self.si));
        l.view_mut((n, 0), (nh, n)).copy_from(&(&self.si * &self.pi));
        l.view_mut((n, n), (nh, nh))
            .copy_from(&(&self.mass_heart * self.gamma + &self.si));
        l
    }

    /// `K = γ M_H + S_i − S_i Π S_1† Πᵀ S_i`.
    pub fn exact_k(&self, s1_pinv: &DenseMatrix) -> DenseMatrix {
        &self.mass_heart * self.gamma + self.k0(s1_pinv)
    }

    /// `K_0 = S_i − S_i Π S_1† Πᵀ S_i`.
    pub fn k0(&self, s1_pinv: &DenseMatrix) -> DenseMatrix {
        let sip = &self.si * &self.pi;
        &self.si - &sip * s1_pinv * sip.transpose()
    }
}

/// The dense Schur complement `K` of a system.
pub fn exact_k(sys: &BidomainSystem) -> Result<DenseMatrix> {
    let d = DenseBlocks::new(sys)?;
    let s1p = pseudo_inverse(&d.s1)?;
    Ok(d.exact_k(&s1p))
}

/// Dense `L` and `U` factors of `Λ`.
pub fn block_lu_factors(sys: &BidomainSystem) -> Result<(DenseMatrix, DenseMatrix)> {
    let d = DenseBlocks::new(sys)?;
    let (n, nh) = (d.n(), d.nh());
    let s1p = pseudo_inverse(&d.s1)?;
    let k = d.exact_k(&s1p);
    let sip = &d.si * &d.pi;

    let mut l = DenseMatrix::zeros(n + nh, n + nh);
    l.view_mut((0, 0), (n, n)).copy_from(&d.s1);
    l.view_mut((n, 0), (nh, n)).copy_from(&sip);
    l.view_mut((n, n), (nh, nh)).copy_from(&k);

    let mut u = DenseMatrix::identity(n + nh, n + nh);
    u.view_mut((0, n), (n, nh)).copy_from(&(&s1p * sip.transpose()));
    Ok((l, u))
}

/// `‖L U − Λ‖_F / ‖Λ‖_F`.
pub fn verify_block_lu(sys: &BidomainSystem) -> Result<f64> {
    let (l, u) = block_lu_factors(sys)?;
    let lambda = DenseBlocks::new(sys)?.lambda();
    Ok((l * u - &lambda).norm() / lambda.norm())
}

/// Errors of the pseudo-inverse identities of the block factors.
#[derive(Clone, Copy, Debug)]
pub struct LuInverseReport {
    /// `max(‖L L† − D‖, ‖L† L − D‖)`, `D = blockdiag(p_Ω, id)`, max-norm.
    pub l_pinv: f64,
    /// `max(‖U U⁻¹ − id‖, ‖U⁻¹ U − id‖)`, max-norm.
    pub u_inv: f64,
    /// Worst relative residual `‖Λ X − Y‖ / ‖Y‖` with `X = U⁻¹ L† Y`.
    pub solve: f64,
}

impl LuInverseReport {
    pub fn max_error(&self) -> f64 {
        self.l_pinv.max(self.u_inv).max(self.solve)
    }
}

/// Dense `L†` and `U⁻¹`.
pub fn block_lu_inverses(sys: &BidomainSystem) -> Result<(DenseMatrix, DenseMatrix)> {
    let d = DenseBlocks::new(sys)?;
    let (n, nh) = (d.n(), d.nh());
    let s1p = pseudo_inverse(&d.s1)?;
    let k = d.exact_k(&s1p);
    let kinv = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Oracle("K is not positive definite".into()))?
        .inverse();
    let sip = &d.si * &d.pi;

    let mut lp = DenseMatrix::zeros(n + nh, n + nh);
    lp.view_mut((0, 0), (n, n)).copy_from(&s1p);
    lp.view_mut((n, 0), (nh, n)).copy_from(&(-(&kinv * &sip * &s1p)));
    lp.view_mut((n, n), (nh, nh)).copy_from(&kinv);

    let mut uinv = DenseMatrix::identity(n + nh, n + nh);
    uinv.view_mut((0, n), (n, nh)).copy_from(&(-(&s1p * sip.transpose())));
    Ok((lp, uinv))
}

/// Checks the pseudo-inverse of `L`, the inverse of `U`, and that
/// `U⁻¹ L† Y` solves `Λ X = Y` for `count` random `Y ∈ ran Λ`.
pub fn verify_lu_inverses<R: Rng>(sys: &BidomainSystem, rng: &mut R, count: usize) -> Result<LuInverseReport> {
    let (l, u) = block_lu_factors(sys)?;
    let (lp, uinv) = block_lu_inverses(sys)?;
    let (n, nh) = (sys.n(), sys.n_heart());
    let mut dproj = DenseMatrix::identity(n + nh, n + nh);
    dproj.view_mut((0, 0), (n, n)).copy_from(&mean_free_projector(n));
    let id = DenseMatrix::identity(n + nh, n + nh);

    let l_pinv = (&l * &lp - &dproj).amax().max((&lp * &l - &dproj).amax());
    let u_inv = (&u * &uinv - &id).amax().max((&uinv * &u - &id).amax());

    let lambda = DenseBlocks::new(sys)?.lambda();
    let solver = &uinv * &lp;
    let mut solve = 0.0f64;
    for _ in 0..count {
        let y = random_range_vector(rng, n, nh);
        let x = &solver * &y;
        solve = solve.max((&lambda * x - &y).norm() / y.norm());
    }
    Ok(LuInverseReport { l_pinv, u_inv, solve })
}

/// Relative residual of the factor-based solve for a given right-hand side.
pub fn lu_solve_residual(sys: &BidomainSystem, y: &DVector<f64>) -> Result<f64> {
    let (lp, uinv) = block_lu_inverses(sys)?;
    let lambda = DenseBlocks::new(sys)?.lambda();
    let x = &uinv * (&lp * y);
    Ok((&lambda * x - y).norm() / y.norm())
}

/// Random vector of `ran Λ = 𝟙^⊥ × ℝ^{N_H}`.
pub fn random_range_vector<R: Rng>(rng: &mut R, n: usize, nh: usize) -> DVector<f64> {
    let mut y = DVector::from_fn(n + nh, |_, _| rng.gen_range(-1.0..1.0));
    let mean = y.rows(0, n).sum() / n as f64;
    y.rows_mut(0, n).add_scalar_mut(-mean);
    y
}

/// Worst relative error of `K_0 (S_i† + Π S_e† Πᵀ) x = x` over `count`
/// random `x ⊥ 𝟙_H`.
pub fn verify_harmonic_mean<R: Rng>(sys: &BidomainSystem, rng: &mut R, count: usize) -> Result<f64> {
    let d = DenseBlocks::new(sys)?;
    let s1p = pseudo_inverse(&d.s1)?;
    let sip = pseudo_inverse(&d.si)?;
    let sep = pseudo_inverse(&d.se)?;
    let a = &sip + &d.pi * sep * d.pi.transpose();
    let op = d.k0(&s1p) * a;
    let nh = d.nh();
    let mut worst = 0.0f64;
    for _ in 0..count {
        let mut x = DVector::from_fn(nh, |_, _| rng.gen_range(-1.0..1.0));
        let mean = x.mean();
        x.add_scalar_mut(-mean);
        worst = worst.max((&op * &x - &x).norm() / x.norm());
    }
    Ok(worst)
}

/// Positive semi-definiteness and kernel of `Λ`.
#[derive(Clone, Copy, Debug)]
pub struct SpsdReport {
    /// `min XᵀΛX / (‖Λ‖₂ ‖X‖²)` over the random trials.
    pub min_rayleigh: f64,
    /// `‖Λ (𝟙, 0)‖_∞`.
    pub kernel_residual: f64,
    pub kernel_dimension: usize,
    /// Whether the computed kernel vector is `(𝟙, 0)` up to scaling.
    pub kernel_is_constant_u: bool,
}

pub fn verify_spsd<R: Rng>(sys: &BidomainSystem, rng: &mut R, trials: usize) -> Result<SpsdReport> {
    let lambda = DenseBlocks::new(sys)?.lambda();
    let (n, nh) = (sys.n(), sys.n_heart());
    let eig = symmetric_eigen(&lambda)?;
    let norm2 = eig.eigenvalues.amax();
    let mut min_rayleigh = f64::INFINITY;
    for _ in 0..trials {
        let x = DVector::from_fn(n + nh, |_, _| rng.gen_range(-1.0..1.0));
        let q = x.dot(&(&lambda * &x));
        min_rayleigh = min_rayleigh.min(q / (norm2 * x.norm_squared()));
    }
    let mut kvec = DVector::zeros(n + nh);
    kvec.rows_mut(0, n).fill(1.0);
    let kernel_residual = (&lambda * &kvec).amax();

    let cutoff = EIGEN_CUTOFF * norm2;
    let kernel: Vec<usize> = (0..n + nh).filter(|&k| eig.eigenvalues[k].abs() <= cutoff).collect();
    let kernel_is_constant_u = match kernel.as_slice() {
        [k] => {
            let q = eig.eigenvectors.column(*k);
            let c = q[0];
            let u_ok = q.rows(0, n).iter().all(|x| (x - c).abs() < 1e-8);
            let v_ok = q.rows(n, nh).iter().all(|x| x.abs() < 1e-8);
            u_ok && v_ok
        }
        _ => false,
    };
    Ok(SpsdReport {
        min_rayleigh,
        kernel_residual,
        kernel_dimension: kernel.len(),
        kernel_is_constant_u,
    })
}

/// Named small system used by the structural checks.
pub struct Instance {
    pub name: &'static str,
    pub system: BidomainSystem,
}

/// The three reference instances: coupled heart-torso slice (8 cells per
/// side), isolated 2D heart (8 cells), isolated 3D cube (2 cells).
pub fn standard_instances() -> Result<Vec<Instance>> {
    let p2 = ConductivityParams::default_2d();
    let p3 = ConductivityParams::default_3d();
    let model2 = Conductivity::new(p2.clone(), FiberField::default_for_dim(2));
    let model3 = Conductivity::new(p3.clone(), FiberField::Rotating3d);
    let g2 = gamma(p2.chi, p2.c_m, 0.05)?;
    let g3 = gamma(p3.chi, p3.c_m, 0.2)?;
    Ok(vec![
        Instance {
            name: "2d-coupled-8",
            system: BidomainSystem::assemble(&build_heart_torso_2d(8)?, &model2, g2)?,
        },
        Instance {
            name: "2d-isolated-8",
            system: BidomainSystem::assemble(&build_square_mesh(8)?, &model2, g2)?,
        },
        Instance {
            name: "3d-cube-2",
            system: BidomainSystem::assemble(&build_cube_mesh(2)?, &model3, g3)?,
        },
    ])
}

/// One named identity check.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: String, value: f64, tolerance: f64) -> Check {
        Check { name, value, tolerance, passed: value <= tolerance }
    }
}

/// Runs every structural identity on the standard instances.
pub fn run_all_checks<R: Rng>(rng: &mut R) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for inst in standard_instances()? {
        let sys = &inst.system;
        let tag = inst.name;
        let spsd = verify_spsd(sys, rng, 100)?;
        out.push(Check {
            name: format!("{tag}: X^T Lambda X >= -1e-12 |Lambda| |X|^2"),
            value: spsd.min_rayleigh,
            tolerance: -1e-12,
            passed: spsd.min_rayleigh >= -1e-12,
        });
        out.push(Check::at_most(format!("{tag}: |Lambda (1,0)|_inf"), spsd.kernel_residual, 1e-13));
        out.push(Check {
            name: format!("{tag}: kernel of Lambda is span{{(1,0)}}"),
            value: spsd.kernel_dimension as f64,
            tolerance: 1.0,
            passed: spsd.kernel_dimension == 1 && spsd.kernel_is_constant_u,
        });
        out.push(Check::at_most(format!("{tag}: block LU relative error"), verify_block_lu(sys)?, 1e-10));
        let k = exact_k(sys)?;
        let kmin = min_eigenvalue(&k)?;
        out.push(Check {
            name: format!("{tag}: K positive definite (min eigenvalue)"),
            value: kmin,
            tolerance: 0.0,
            passed: kmin > 0.0,
        });
        out.push(Check::at_most(
            format!("{tag}: harmonic-mean form of K_0"),
            verify_harmonic_mean(sys, rng, 50)?,
            1e-9,
        ));
        let inv = verify_lu_inverses(sys, rng, 20)?;
        out.push(Check::at_most(format!("{tag}: L pseudo-inverse / U inverse"), inv.l_pinv.max(inv.u_inv), 1e-9));
        out.push(Check::at_most(format!("{tag}: U^-1 L^+ Y solves Lambda X = Y"), inv.solve, 1e-9));
    }
    Ok(out)
}
