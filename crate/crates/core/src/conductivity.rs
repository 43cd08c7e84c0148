//! Conductivity tensors of the heart and torso media.
//!
//! Heart tissue is transversely isotropic around the local fibre direction;
//! torso organs are isotropic with a piecewise constant conductivity. All
//! tensors are evaluated once per element at its centroid.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Region;

/// Tissue parameters, conductivities in mS/cm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConductivityParams {
    pub g_i_l: f64,
    pub g_i_t: f64,
    pub g_e_l: f64,
    pub g_e_t: f64,
    pub k_lung: f64,
    pub k_cavity: f64,
    pub k_other: f64,
    /// Membrane surface-to-volume ratio, cm⁻¹.
    pub chi: f64,
    /// Membrane capacitance, μF/cm².
    pub c_m: f64,
}

impl Default for ConductivityParams {
    fn default() -> Self {
        Self::default_3d()
    }
}

impl ConductivityParams {
    pub fn default_3d() -> Self {
        ConductivityParams {
            g_i_l: 1.741,
            g_i_t: 0.1934,
            g_e_l: 3.906,
            g_e_t: 1.970,
            k_lung: 0.5,
            k_cavity: 6.7,
            k_other: 2.2,
            chi: 500.0,
            c_m: 1.0,
        }
    }

    pub fn default_2d() -> Self {
        ConductivityParams { chi: 1500.0, ..Self::default_3d() }
    }

    /// Parameters with `σ_e = ratio · σ_i`, the equal-anisotropy case in which
    /// the monodomain approximation of the Schur complement is exact.
    pub fn equal_anisotropy(ratio: f64) -> Self {
        let base = Self::default_3d();
        ConductivityParams {
            g_e_l: ratio * base.g_i_l,
            g_e_t: ratio * base.g_i_t,
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g_i_l", self.g_i_l),
            ("g_i_t", self.g_i_t),
            ("g_e_l", self.g_e_l),
            ("g_e_t", self.g_e_t),
            ("k_lung", self.k_lung),
            ("k_cavity", self.k_cavity),
            ("k_other", self.k_other),
            ("chi", self.chi),
            ("c_m", self.c_m),
        ];
        for (name, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")));
            }
        }
        Ok(())
    }

    /// Isotropic conductivity of a torso region.
    pub fn torso_conductivity(&self, region: Region) -> Result<f64> {
        match region {
            Region::TorsoLung => Ok(self.k_lung),
            Region::TorsoCavity => Ok(self.k_cavity),
            Region::TorsoOther => Ok(self.k_other),
            Region::Heart => Err(Error::InvalidArgument(
                "heart tissue has no isotropic torso conductivity".into(),
            )),
        }
    }
}

/// Symmetric `d×d` tensor (`d` = 2 or 3) stored in a 3×3 array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor {
    dim: usize,
    m: [[f64; 3]; 3],
}

impl Tensor {
    pub fn zero(dim: usize) -> Tensor {
        assert!(dim == 2 || dim == 3, "tensor dimension must be 2 or 3");
        Tensor { dim, m: [[0.0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Tensor {
        Tensor::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, k: f64) -> Tensor {
        let mut t = Tensor::zero(dim);
        for i in 0..dim {
            t.m[i][i] = k;
        }
        t
    }

    pub fn diag(values: &[f64]) -> Tensor {
        let mut t = Tensor::zero(values.len());
        for (i, &v) in values.iter().enumerate() {
            t.m[i][i] = v;
        }
        t
    }

    /// Builds a tensor from a row-major `d×d` slice; only the upper triangle
    /// is read so the result is symmetric by construction.
    pub fn from_rows(dim: usize, rows: &[&[f64]]) -> Tensor {
        let mut t = Tensor::zero(dim);
        for i in 0..dim {
            for j in i..dim {
                t.m[i][j] = rows[i][j];
                t.m[j][i] = rows[i][j];
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    /// `aᵀ T b` over the first `dim` components.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += a[i] * self.m[i][j] * b[j];
            }
        }
        s
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// Inverse via the adjugate.
    pub fn inverse(&self) -> Result<Tensor> {
        let det = self.determinant();
        let scale = self.max_abs().powi(self.dim as i32);
        if !(det.abs() > 1e-14 * scale) || !det.is_finite() {
            return Err(Error::NumericalDegeneracy(format!(
                "tensor is singular (det = {det:e})"
            )));
        }
        let m = &self.m;
        let mut inv = Tensor::zero(self.dim);
        match self.dim {
            2 => {
                inv.m[0][0] = m[1][1] / det;
                inv.m[1][1] = m[0][0] / det;
                inv.m[0][1] = -m[0][1] / det;
                inv.m[1][0] = inv.m[0][1];
            }
            _ => {
                let cof = |i: usize, j: usize| {
                    let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
                    let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
                    m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
                };
                for i in 0..3 {
                    for j in i..3 {
                        // symmetric input: adj(M)_{ij} = cof(j, i) = cof(i, j)
                        let v = cof(j, i) / det;
                        inv.m[i][j] = v;
                        inv.m[j][i] = v;
                    }
                }
            }
        }
        Ok(inv)
    }

    fn max_abs(&self) -> f64 {
        self.m.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()))
    }

    /// Cholesky-based positive definiteness test.
    pub fn is_positive_definite(&self) -> bool {
        let n = self.dim;
        let mut l = [[0.0f64; 3]; 3];
        for j in 0..n {
            let mut d = self.m[j][j];
            for k in 0..j {
                d -= l[j][k] * l[j][k];
            }
            if !(d > 0.0) {
                return false;
            }
            l[j][j] = d.sqrt();
            for i in j + 1..n {
                let mut s = self.m[i][j];
                for k in 0..j {
                    s -= l[i][k] * l[j][k];
                }
                l[i][j] = s / l[j][j];
            }
        }
        true
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.m[i][j] == self.m[j][i]))
    }
}

impl Add for Tensor {
    type Output = Tensor;

    fn add(self, rhs: Tensor) -> Tensor {
        let mut t = self;
        for i in 0..3 {
            for j in 0..3 {
                t.m[i][j] += rhs.m[i][j];
            }
        }
        t
    }
}

impl Sub for Tensor {
    type Output = Tensor;

    fn sub(self, rhs: Tensor) -> Tensor {
        self + rhs * -1.0
    }
}

impl Mul<f64> for Tensor {
    type Output = Tensor;

    fn mul(self, k: f64) -> Tensor {
        let mut t = self;
        t.m.iter_mut().flatten().for_each(|x| *x *= k);
        t
    }
}

/// Fibre direction of the 3D slab: horizontal, rotating linearly from
/// `+π/4` at `z = 0` to `−π/4` at `z = 1`.
pub fn fiber_direction_3d(x: [f64; 3]) -> [f64; 3] {
    let z = x[2].clamp(0.0, 1.0);
    let theta = FRAC_PI_4 - FRAC_PI_2 * z;
    [theta.cos(), theta.sin(), 0.0]
}

/// Circular fibres around `center` in the plane; `(1,0)` at the center.
pub fn fiber_direction_circular(x: [f64; 3], center: [f64; 2]) -> [f64; 3] {
    let (dx, dy) = (x[0] - center[0], x[1] - center[1]);
    let r = dx.hypot(dy);
    if r < 1e-12 {
        return [1.0, 0.0, 0.0];
    }
    [-dy / r, dx / r, 0.0]
}

/// `g_l f fᵀ + g_t (I − f fᵀ)`.
pub fn tensor_from_fiber(f: &[f64], g_l: f64, g_t: f64) -> Result<Tensor> {
    let dim = f.len();
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidArgument(format!("fibre must have 2 or 3 components, got {dim}")));
    }
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!("fibre is not a unit vector (|f| = {norm})")));
    }
    let mut t = Tensor::zero(dim);
    for i in 0..dim {
        for j in i..dim {
            let delta = if i == j { 1.0 } else { 0.0 };
            let v = g_t * delta + (g_l - g_t) * f[i] * f[j];
            t.m[i][j] = v;
            t.m[j][i] = v;
        }
    }
    Ok(t)
}

/// `(σ_i⁻¹ + σ_e⁻¹)⁻¹`.
pub fn harmonic_mean_tensor(si: &Tensor, se: &Tensor) -> Result<Tensor> {
    if si.dim() != se.dim() {
        return Err(Error::InvalidArgument("tensor dimensions differ".into()));
    }
    (si.inverse()? + se.inverse()?).inverse()
}

/// Fibre orientation rule of a geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiberField {
    /// Rotating horizontal fibres of the 3D slab.
    Rotating3d,
    /// Circles around a center point (2D).
    Circular { center: [f64; 2] },
    /// Constant direction (tests and analytic cases).
    Uniform([f64; 3]),
}

impl FiberField {
    /// Default for a mesh dimension: rotating slab fibres in 3D, circles
    /// around the heart block center in 2D.
    pub fn default_for_dim(dim: usize) -> FiberField {
        if dim == 3 {
            FiberField::Rotating3d
        } else {
            FiberField::Circular { center: [0.5, 0.5] }
        }
    }

    pub fn direction(&self, x: [f64; 3], dim: usize) -> Vec<f64> {
        let f = match *self {
            FiberField::Rotating3d => fiber_direction_3d(x),
            FiberField::Circular { center } => fiber_direction_circular(x, center),
            FiberField::Uniform(f) => f,
        };
        f[..dim].to_vec()
    }
}

/// Anything that yields a conductivity tensor per element.
pub trait TensorField {
    fn tensor_at(&self, centroid: [f64; 3], region: Region, dim: usize) -> Result<Tensor>;
}

/// Which medium a [`Conductivity`] field evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Medium {
    /// `σ_i`, heart only.
    Intra,
    /// `σ_e`, heart only.
    Extra,
    /// `σ_m`, harmonic mean of `σ_i` and `σ_e`, heart only.
    Monodomain,
    /// `σ̄_1`: `σ_i + σ_e` in the heart, `k·I` in the torso.
    Bulk,
    /// `σ̄_e`: `σ_e` in the heart, `k·I` in the torso.
    BulkExtra,
}

/// Conductivity model of the whole thorax.
#[derive(Clone, Debug, PartialEq)]
pub struct Conductivity {
    pub params: ConductivityParams,
    pub fibers: FiberField,
}

impl Conductivity {
    pub fn new(params: ConductivityParams, fibers: FiberField) -> Self {
        Conductivity { params, fibers }
    }

    pub fn sigma_i(&self, centroid: [f64; 3], dim: usize) -> Result<Tensor> {
        let f = self.fibers.direction(centroid, dim);
        tensor_from_fiber(&f, self.params.g_i_l, self.params.g_i_t)
    }

    pub fn sigma_e(&self, centroid: [f64; 3], dim: usize) -> Result<Tensor> {
        let f = self.fibers.direction(centroid, dim);
        tensor_from_fiber(&f, self.params.g_e_l, self.params.g_e_t)
    }

    pub fn sigma_m(&self, centroid: [f64; 3], dim: usize) -> Result<Tensor> {
        harmonic_mean_tensor(&self.sigma_i(centroid, dim)?, &self.sigma_e(centroid, dim)?)
    }

    pub fn sigma_bar_1(&self, centroid: [f64; 3], region: Region, dim: usize) -> Result<Tensor> {
        match region {
            Region::Heart => Ok(self.sigma_i(centroid, dim)? + self.sigma_e(centroid, dim)?),
            torso => Ok(Tensor::scalar(dim, self.params.torso_conductivity(torso)?)),
        }
    }

    pub fn sigma_bar_e(&self, centroid: [f64; 3], region: Region, dim: usize) -> Result<Tensor> {
        match region {
            Region::Heart => self.sigma_e(centroid, dim),
            torso => Ok(Tensor::scalar(dim, self.params.torso_conductivity(torso)?)),
        }
    }

    pub fn field(&self, medium: Medium) -> MediumField<'_> {
        MediumField { model: self, medium }
    }
}

/// A [`Conductivity`] restricted to one medium.
#[derive(Clone, Copy, Debug)]
pub struct MediumField<'a> {
    model: &'a Conductivity,
    medium: Medium,
}

impl TensorField for MediumField<'_> {
    fn tensor_at(&self, centroid: [f64; 3], region: Region, dim: usize) -> Result<Tensor> {
        let heart_only = |what: &str| {
            if region.is_heart() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} is only defined in the heart")))
            }
        };
        match self.medium {
            Medium::Intra => heart_only("σ_i").and_then(|_| self.model.sigma_i(centroid, dim)),
            Medium::Extra => heart_only("σ_e").and_then(|_| self.model.sigma_e(centroid, dim)),
            Medium::Monodomain => {
                heart_only("σ_m").and_then(|_| self.model.sigma_m(centroid, dim))
            }
            Medium::Bulk => self.model.sigma_bar_1(centroid, region, dim),
            Medium::BulkExtra => self.model.sigma_bar_e(centroid, region, dim),
        }
    }
}

/// Same tensor everywhere.
#[derive(Clone, Copy, Debug)]
pub struct UniformField(pub Tensor);

impl TensorField for UniformField {
    fn tensor_at(&self, _: [f64; 3], _: Region, dim: usize) -> Result<Tensor> {
        if self.0.dim() != dim {
            return Err(Error::InvalidArgument("tensor dimension does not match mesh".into()));
        }
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const S2: f64 = std::f64::consts::SQRT_2 / 2.0;

    #[test]
    fn fiber_rotation_3d() {
        let f0 = fiber_direction_3d([0.3, 0.7, 0.0]);
        assert_abs_diff_eq!(f0[0], S2, epsilon = 1e-15);
        assert_abs_diff_eq!(f0[1], S2, epsilon = 1e-15);
        let f5 = fiber_direction_3d([0.0, 0.0, 0.5]);
        assert_abs_diff_eq!(f5[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f5[1], 0.0, epsilon = 1e-15);
        let f1 = fiber_direction_3d([1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(f1[0], S2, epsilon = 1e-15);
        assert_abs_diff_eq!(f1[1], -S2, epsilon = 1e-15);
        assert_eq!(f1[2], 0.0);
        // clamped outside the slab
        assert_eq!(fiber_direction_3d([0.0, 0.0, 2.0]), f1);
    }

    #[test]
    fn axis_aligned_and_isotropic_tensors() {
        let t = tensor_from_fiber(&[1.0, 0.0], 2.0, 1.0).unwrap();
        assert_eq!(t, Tensor::diag(&[2.0, 1.0]));
        let f = [0.6, 0.8];
        let t = tensor_from_fiber(&f, 1.5, 1.5).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.5 } else { 0.0 };
                assert_abs_diff_eq!(t.get(i, j), expected, epsilon = 1e-15);
            }
        }
        assert!(tensor_from_fiber(&[1.0, 1.0], 1.0, 1.0).is_err());
    }

    #[test]
    fn diagonal_fiber_tensor() {
        // oracle: f fᵀ = [[1/2, 1/2], [1/2, 1/2]], so entries are
        // (g_l + g_t)/2 on the diagonal and (g_l − g_t)/2 off it.
        let t = tensor_from_fiber(&[S2, S2], 1.741, 0.1934).unwrap();
        assert_abs_diff_eq!(t.get(0, 0), 0.9672, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(1, 1), 0.9672, epsilon = 1e-12);
        assert_abs_diff_eq!(t.get(0, 1), 0.7738, epsilon = 1e-12);
        assert!(t.is_symmetric());
        // eigenvalues {g_l, g_t}: trace and determinant
        assert_abs_diff_eq!(t.get(0, 0) + t.get(1, 1), 1.741 + 0.1934, epsilon = 1e-12);
        assert_abs_diff_eq!(t.determinant(), 1.741 * 0.1934, epsilon = 1e-12);
    }

    #[test]
    fn scalar_harmonic_means() {
        let hm = |a: f64, b: f64| {
            harmonic_mean_tensor(&Tensor::scalar(2, a), &Tensor::scalar(2, b))
                .unwrap()
                .get(0, 0)
        };
        assert_abs_diff_eq!(hm(1.741, 3.906), 1.0 / (1.0 / 1.741 + 1.0 / 3.906), epsilon = 1e-14);
        assert_abs_diff_eq!(hm(1.741, 3.906), 1.2042, epsilon = 5e-5);
        assert_abs_diff_eq!(hm(0.1934, 1.970), 0.17611, epsilon = 5e-6);
        let a = tensor_from_fiber(&[0.6, 0.0, 0.8], 3.0, 1.0).unwrap();
        let half = harmonic_mean_tensor(&a, &a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(half.get(i, j), a.get(i, j) / 2.0, epsilon = 1e-14);
            }
        }
        assert!(matches!(
            harmonic_mean_tensor(&Tensor::zero(2), &a),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            harmonic_mean_tensor(&Tensor::zero(3), &a),
            Err(Error::NumericalDegeneracy(_))
        ));
    }

    #[test]
    fn bulk_tensors() {
        let model = Conductivity::new(ConductivityParams::default_2d(), FiberField::Uniform([1.0, 0.0, 0.0]));
        let c = [0.5, 0.5, 0.0];
        let s1 = model.sigma_bar_1(c, Region::Heart, 2).unwrap();
        assert_abs_diff_eq!(s1.get(0, 0), 5.647, epsilon = 1e-12);
        assert_abs_diff_eq!(s1.get(1, 1), 2.1634, epsilon = 1e-12);
        assert_eq!(s1.get(0, 1), 0.0);
        assert_eq!(model.sigma_bar_1(c, Region::TorsoCavity, 2).unwrap(), Tensor::scalar(2, 6.7));
        assert_eq!(model.sigma_bar_e(c, Region::TorsoLung, 2).unwrap(), Tensor::scalar(2, 0.5));
        let diff = s1 - model.sigma_bar_e(c, Region::Heart, 2).unwrap();
        let si = model.sigma_i(c, 2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(diff.get(i, j), si.get(i, j), epsilon = 1e-15);
            }
        }
        assert!(model.field(Medium::Intra).tensor_at(c, Region::TorsoOther, 2).is_err());
    }

    #[test]
    fn equal_anisotropy_monodomain_tensor() {
        let model = Conductivity::new(ConductivityParams::equal_anisotropy(2.0), FiberField::Rotating3d);
        for z in [0.0, 0.1, 0.37, 0.5, 0.9] {
            let c = [0.2, 0.4, z];
            let sm = model.sigma_m(c, 3).unwrap();
            let si = model.sigma_i(c, 3).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert_abs_diff_eq!(sm.get(i, j), si.get(i, j) * 2.0 / 3.0, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn monodomain_tensor_dominated_by_both() {
        let model = Conductivity::new(ConductivityParams::default_3d(), FiberField::Rotating3d);
        for z in [0.0, 0.25, 0.5, 0.8] {
            let c = [0.5, 0.5, z];
            let sm = model.sigma_m(c, 3).unwrap();
            assert!(sm.is_positive_definite());
            assert!((model.sigma_i(c, 3).unwrap() - sm).is_positive_definite());
            assert!((model.sigma_e(c, 3).unwrap() - sm).is_positive_definite());
        }
    }

    #[test]
    fn circular_fibers() {
        let f = fiber_direction_circular([0.75, 0.5, 0.0], [0.5, 0.5]);
        assert_abs_diff_eq!(f[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], 1.0, epsilon = 1e-15);
        assert_eq!(fiber_direction_circular([0.5, 0.5, 0.0], [0.5, 0.5]), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn inverse_3d() {
        let t = tensor_from_fiber(&[0.6, 0.0, 0.8], 3.0, 0.5).unwrap();
        let inv = t.inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += t.get(i, k) * inv.get(k, j);
                }
                assert_abs_diff_eq!(s, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
            }
        }
    }
}
