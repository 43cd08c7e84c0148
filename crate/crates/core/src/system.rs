//! The coupled system solved at every time step,
//!
//! ```text
//!     Λ = [ S_1     Πᵀ S_i        ]
//!         [ S_i Π   γ M_H + S_i   ]
//! ```
//!
//! stored as its sparse blocks. `Λ` is symmetric positive semi-definite with
//! kernel `span{(𝟙, 0)}`; solutions are made unique by requiring the extra
//! cellular potential to have zero mean over `Ω`.

use crate::assembly::{assemble_lumped_mass, assemble_stiffness, Space};
use crate::conductivity::{Conductivity, Medium};
use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, RestrictionMap};
use crate::sparse::{dot, SparseMatrix};

/// `γ = χ c / Δt`, in μF/(cm³·ms).
pub fn gamma(chi: f64, c_m: f64, dt: f64) -> Result<f64> {
    for (name, v) in [("chi", chi), ("c_m", c_m), ("dt", dt)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(chi * c_m / dt)
}

/// Pair `(u, v)`: `u` on all of `Ω` (length `N`), `v` on the heart (`N_H`).
#[derive(Clone, Debug, PartialEq)]
pub struct BlockVector {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl BlockVector {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Self {
        BlockVector { u, v }
    }

    pub fn zeros(n: usize, n_heart: usize) -> Self {
        BlockVector { u: vec![0.0; n], v: vec![0.0; n_heart] }
    }

    pub fn len(&self) -> usize {
        self.u.len() + self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dot(&self, other: &BlockVector) -> f64 {
        dot(&self.u, &other.u) + dot(&self.v, &other.v)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += a · x`
    pub fn axpy(&mut self, a: f64, x: &BlockVector) {
        for (s, xi) in self.u.iter_mut().zip(&x.u) {
            *s += a * xi;
        }
        for (s, xi) in self.v.iter_mut().zip(&x.v) {
            *s += a * xi;
        }
    }

    /// `self = x + b · self`
    pub fn xpby(&mut self, x: &BlockVector, b: f64) {
        for (s, xi) in self.u.iter_mut().zip(&x.u) {
            *s = xi + b * *s;
        }
        for (s, xi) in self.v.iter_mut().zip(&x.v) {
            *s = xi + b * *s;
        }
    }

    /// Concatenation `[u; v]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut x = self.u.clone();
        x.extend_from_slice(&self.v);
        x
    }

    pub fn from_flat(x: &[f64], n: usize) -> Self {
        BlockVector { u: x[..n].to_vec(), v: x[n..].to_vec() }
    }

    /// Euclidean projection of `u` onto `𝟙^⊥`.
    pub fn project_u_mean_free(&mut self) {
        let n = self.u.len() as f64;
        if n == 0.0 {
            return;
        }
        let mean = self.u.iter().sum::<f64>() / n;
        self.u.iter_mut().for_each(|x| *x -= mean);
    }
}

/// Assembled blocks of `Λ`.
#[derive(Clone, Debug)]
pub struct BidomainSystem {
    pub s1: SparseMatrix,
    pub si: SparseMatrix,
    pub se: SparseMatrix,
    pub mass: SparseMatrix,
    pub mass_heart: SparseMatrix,
    pub gamma: f64,
    pub restriction: RestrictionMap,
}

impl BidomainSystem {
    /// Assembles every block on `mesh`. `gamma` comes from [`gamma`].
    pub fn assemble(mesh: &Mesh, model: &Conductivity, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        model.params.validate()?;
        if mesh.n_heart() == 0 {
            return Err(Error::InvalidArgument("mesh has no heart elements".into()));
        }
        Ok(BidomainSystem {
            s1: assemble_stiffness(mesh, &model.field(Medium::Bulk), Space::Full)?,
            si: assemble_stiffness(mesh, &model.field(Medium::Intra), Space::HeartOnly)?,
            se: assemble_stiffness(mesh, &model.field(Medium::BulkExtra), Space::Full)?,
            mass: assemble_lumped_mass(mesh, Space::Full)?,
            mass_heart: assemble_lumped_mass(mesh, Space::HeartOnly)?,
            gamma,
            restriction: mesh.restriction(),
        })
    }

    pub fn n(&self) -> usize {
        self.restriction.n()
    }

    pub fn n_heart(&self) -> usize {
        self.restriction.n_heart()
    }

    fn check_dims(&self, x: &BlockVector) -> Result<()> {
        check_len("u block", x.u.len(), self.n())?;
        check_len("v block", x.v.len(), self.n_heart())
    }

    /// `Λ X`, using one product with `S_1`, two with `S_i` and one with `M_H`.
    pub fn apply_lambda(&self, x: &BlockVector) -> Result<BlockVector> {
        self.check_dims(x)?;
        let mut y = BlockVector::zeros(self.n(), self.n_heart());
        self.apply_lambda_into(x, &mut y);
        Ok(y)
    }

    pub(crate) fn apply_lambda_into(&self, x: &BlockVector, y: &mut BlockVector) {
        let nh = self.n_heart();
        let mh = self.mass_heart.values();
        // y_u = S_1 u + Πᵀ S_i v
        self.s1.mul_vec_into(&x.u, &mut y.u);
        let mut tmp = vec![0.0; nh];
        self.si.mul_vec_into(&x.v, &mut tmp);
        for (yu, t) in y.u[..nh].iter_mut().zip(&tmp) {
            *yu += t;
        }
        // y_v = S_i (Π u + v) + γ M_H v, i.e. S_i Π u + S_i v + γ M_H v
        self.si.mul_vec_into(&x.u[..nh], &mut y.v);
        for k in 0..nh {
            y.v[k] += tmp[k] + self.gamma * mh[k] * x.v[k];
        }
    }

    /// Step-1 right-hand side `(0, M_H (γ V − χ (I_ion − I_st)))`.
    pub fn build_rhs(
        &self,
        v_prev: &[f64],
        ion_current: &[f64],
        stim_current: &[f64],
        chi: f64,
    ) -> Result<BlockVector> {
        let nh = self.n_heart();
        check_len("V^n", v_prev.len(), nh)?;
        check_len("ionic current", ion_current.len(), nh)?;
        check_len("stimulus current", stim_current.len(), nh)?;
        let mh = self.mass_heart.values();
        let v = (0..nh)
            .map(|k| mh[k] * (self.gamma * v_prev[k] - chi * (ion_current[k] - stim_current[k])))
            .collect();
        Ok(BlockVector { u: vec![0.0; self.n()], v })
    }

    /// Shifts `u` by the constant that makes `∫_Ω u = (M u, 𝟙)` vanish.
    pub fn normalize_u(&self, x: &BlockVector) -> BlockVector {
        let m = self.mass.values();
        let total: f64 = m.iter().sum();
        let alpha = dot(m, &x.u) / total;
        BlockVector { u: x.u.iter().map(|u| u - alpha).collect(), v: x.v.clone() }
    }

    /// `(M u, 𝟙) / (M 𝟙, 𝟙)`.
    pub fn mass_weighted_mean(&self, u: &[f64]) -> f64 {
        let m = self.mass.values();
        dot(m, u) / m.iter().sum::<f64>()
    }

    /// Dense `Λ`, for the oracle paths only.
    pub fn to_dense(&self) -> Result<nalgebra::DMatrix<f64>> {
        let (n, nh) = (self.n(), self.n_heart());
        crate::oracle::guard_size(n + nh)?;
        let mut d = nalgebra::DMatrix::zeros(n + nh, n + nh);
        d.view_mut((0, 0), (n, n)).copy_from(&self.s1.to_dense());
        let si = self.si.to_dense();
        d.view_mut((0, n), (nh, nh)).copy_from(&si);
        d.view_mut((n, 0), (nh, nh)).copy_from(&si);
        let mut k = si;
        for (i, m) in self.mass_heart.values().iter().enumerate() {
            k[(i, i)] += self.gamma * m;
        }
        d.view_mut((n, n), (nh, nh)).copy_from(&k);
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductivity::{ConductivityParams, FiberField};
    use crate::mesh::build_heart_torso_2d;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_system() -> BidomainSystem {
        let mesh = build_heart_torso_2d(8).unwrap();
        let model = Conductivity::new(ConductivityParams::default_2d(), FiberField::default_for_dim(2));
        BidomainSystem::assemble(&mesh, &model, gamma(1500.0, 1.0, 0.05).unwrap()).unwrap()
    }

    fn random_block(rng: &mut ChaCha8Rng, n: usize, nh: usize) -> BlockVector {
        BlockVector {
            u: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            v: (0..nh).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn gamma_values() {
        assert_abs_diff_eq!(gamma(500.0, 1.0, 0.2).unwrap(), 2500.0, epsilon = 1e-9);
        assert_abs_diff_eq!(gamma(1500.0, 1.0, 0.05).unwrap(), 30000.0, epsilon = 1e-9);
        assert!(matches!(gamma(1500.0, 1.0, 0.0), Err(Error::InvalidArgument(_))));
        assert!(gamma(-1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn constant_u_is_in_kernel() {
        let sys = small_system();
        let x = BlockVector::new(vec![1.0; sys.n()], vec![0.0; sys.n_heart()]);
        let y = sys.apply_lambda(&x).unwrap();
        assert!(y.u.iter().chain(&y.v).all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn pure_v_input_has_mean_free_u_block() {
        let sys = small_system();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = BlockVector::new(vec![0.0; sys.n()], (0..sys.n_heart()).map(|_| rng.gen()).collect());
        let y = sys.apply_lambda(&x).unwrap();
        let s: f64 = y.u.iter().sum();
        assert!(s.abs() < 1e-12);
    }

    #[test]
    fn matches_dense_operator() {
        let sys = small_system();
        let dense = sys.to_dense().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random_block(&mut rng, sys.n(), sys.n_heart());
            let y = sys.apply_lambda(&x).unwrap().to_flat();
            let yd = &dense * nalgebra::DVector::from_vec(x.to_flat());
            let err = (nalgebra::DVector::from_vec(y) - &yd).norm() / yd.norm();
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn symmetric_and_quadratic_form_identity() {
        let sys = small_system();
        let se_minus = sys.s1.add_scaled(-1.0, &sys.se).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let x = random_block(&mut rng, sys.n(), sys.n_heart());
            let z = random_block(&mut rng, sys.n(), sys.n_heart());
            let lx = sys.apply_lambda(&x).unwrap();
            let lz = sys.apply_lambda(&z).unwrap();
            let (a, b) = (lx.dot(&z), x.dot(&lz));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));

            let q = lx.dot(&x);
            let mut w = x.u.clone();
            for (wk, vk) in w.iter_mut().zip(&x.v) {
                *wk += vk;
            }
            let q_e = dot(&sys.se.mul_vec(&x.u).unwrap(), &x.u);
            let q_i = dot(&se_minus.mul_vec(&w).unwrap(), &w);
            let q_m = sys.gamma * dot(&sys.mass_heart.mul_vec(&x.v).unwrap(), &x.v);
            assert!((q - (q_e + q_i + q_m)).abs() <= 1e-10 * q.abs());
            assert!(q >= 0.0);
        }
    }

    #[test]
    fn rhs_formula() {
        let sys = small_system();
        let nh = sys.n_heart();
        let zero = vec![0.0; nh];
        let y = sys.build_rhs(&zero, &zero, &zero, 1500.0).unwrap();
        assert!(y.u.iter().chain(&y.v).all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vn: Vec<f64> = (0..nh).map(|_| rng.gen_range(-90.0..50.0)).collect();
        let ion: Vec<f64> = (0..nh).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let stim: Vec<f64> = (0..nh).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y = sys.build_rhs(&vn, &ion, &ion, 1500.0).unwrap();
        for k in 0..nh {
            assert_abs_diff_eq!(y.v[k], sys.gamma * sys.mass_heart.get(k, k) * vn[k], epsilon = 1e-9);
        }
        let y = sys.build_rhs(&vn, &ion, &stim, 1500.0).unwrap();
        assert!(y.u.iter().all(|&u| u == 0.0));
        for k in 0..nh {
            let m = sys.mass_heart.get(k, k);
            let expected = m * sys.gamma * vn[k] - m * 1500.0 * ion[k] + m * 1500.0 * stim[k];
            assert!((y.v[k] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }
        assert!(sys.build_rhs(&vn[1..], &ion, &stim, 1500.0).is_err());
    }

    #[test]
    fn normalization() {
        let sys = small_system();
        let (n, nh) = (sys.n(), sys.n_heart());
        let c = BlockVector::new(vec![3.5; n], vec![1.0; nh]);
        let out = sys.normalize_u(&c);
        assert!(out.u.iter().all(|u| u.abs() < 1e-14));
        assert_eq!(out.v, c.v);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_block(&mut rng, n, nh);
        let once = sys.normalize_u(&x);
        let m = sys.mass.values();
        let integral: f64 = m.iter().zip(&once.u).map(|(a, b)| a * b).sum();
        let scale: f64 = m.iter().zip(&x.u).map(|(a, b)| (a * b).abs()).sum();
        assert!(integral.abs() <= 1e-12 * scale);
        let twice = sys.normalize_u(&once);
        for (a, b) in once.u.iter().zip(&twice.u) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }
}
