//! P1 finite element assembly on simplices: stiffness matrices for a tensor
//! field and row-sum lumped (diagonal) mass matrices.

use crate::conductivity::{Tensor, TensorField};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::SparseMatrix;

/// Coefficient space a matrix acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// All `N` vertices, all elements.
    Full,
    /// The `N_H` heart vertices, heart elements only.
    HeartOnly,
}

impl Space {
    fn size(self, mesh: &Mesh) -> usize {
        match self {
            Space::Full => mesh.n_vertices(),
            Space::HeartOnly => mesh.n_heart(),
        }
    }

    fn includes(self, mesh: &Mesh, e: usize) -> bool {
        self == Space::Full || mesh.region(e).is_heart()
    }
}

/// Gradients of the barycentric coordinates of element `e` together with its
/// measure. Gradients are padded to 3 components.
pub fn shape_gradients(mesh: &Mesh, e: usize) -> Result<(Vec<[f64; 3]>, f64)> {
    let vol = mesh.signed_volume(e);
    if !(vol > 0.0) {
        return Err(Error::Assembly(format!("element {e} is degenerate (volume {vol:e})")));
    }
    let cell = mesh.element(e);
    let d = mesh.dim();
    let x0 = mesh.vertex(cell[0]);
    // columns of J are the edge vectors x_k − x_0
    let mut j = [[0.0f64; 3]; 3];
    for k in 0..d {
        let xk = mesh.vertex(cell[k + 1]);
        for a in 0..d {
            j[a][k] = xk[a] - x0[a];
        }
    }
    // ∇λ_k (k ≥ 1) is row k−1 of J⁻¹
    let jinv = invert_small(&j, d)
        .ok_or_else(|| Error::Assembly(format!("element {e} has a singular Jacobian")))?;
    let mut grads = vec![[0.0; 3]; d + 1];
    for k in 0..d {
        for a in 0..d {
            grads[k + 1][a] = jinv[k][a];
            grads[0][a] -= jinv[k][a];
        }
    }
    Ok((grads, vol))
}

fn invert_small(m: &[[f64; 3]; 3], d: usize) -> Option<[[f64; 3]; 3]> {
    let mut inv = [[0.0; 3]; 3];
    if d == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det == 0.0 {
            return None;
        }
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
        return Some(inv);
    }
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det == 0.0 {
        return None;
    }
    for i in 0..3 {
        for k in 0..3 {
            let (r0, r1) = ((k + 1) % 3, (k + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][k] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    Some(inv)
}

/// Element stiffness matrix `|T| ∇λ_aᵀ σ ∇λ_b`. Off-diagonal entries are
/// computed once; each diagonal entry is minus the sum of its row, so rows
/// sum to zero exactly and the matrix is exactly symmetric.
pub fn element_stiffness(grads: &[[f64; 3]], vol: f64, sigma: &Tensor) -> Vec<Vec<f64>> {
    let n = grads.len();
    let mut k = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let v = vol * sigma.bilinear(&grads[a], &grads[b]);
            k[a][b] = v;
            k[b][a] = v;
        }
    }
    for a in 0..n {
        k[a][a] = -(0..n).filter(|&b| b != a).map(|b| k[a][b]).sum::<f64>();
    }
    k
}

/// Global stiffness matrix of `∫ σ ∇u · ∇ψ` over the chosen space.
pub fn assemble_stiffness(mesh: &Mesh, field: &dyn TensorField, space: Space) -> Result<SparseMatrix> {
    let n = space.size(mesh);
    let npe = mesh.nodes_per_element();
    let mut trip = Vec::with_capacity(mesh.n_elements() * npe * npe);
    for e in 0..mesh.n_elements() {
        if !space.includes(mesh, e) {
            continue;
        }
        let (grads, vol) = shape_gradients(mesh, e)?;
        let sigma = field.tensor_at(mesh.centroid(e), mesh.region(e), mesh.dim())?;
        let ke = element_stiffness(&grads, vol, &sigma);
        let cell = mesh.element(e);
        for (a, &i) in cell.iter().enumerate() {
            for (b, &j) in cell.iter().enumerate() {
                trip.push((i, j, ke[a][b]));
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &trip).map_err(|e| Error::Assembly(e.to_string()))
}

/// Row-sum lumped mass: vertex `i` receives `|T|/(d+1)` from every element
/// `T` containing it.
pub fn assemble_lumped_mass(mesh: &Mesh, space: Space) -> Result<SparseMatrix> {
    let mut diag = vec![0.0; space.size(mesh)];
    let share = 1.0 / mesh.nodes_per_element() as f64;
    for e in 0..mesh.n_elements() {
        if !space.includes(mesh, e) {
            continue;
        }
        let vol = mesh.signed_volume(e);
        if !(vol > 0.0) {
            return Err(Error::Assembly(format!("element {e} is degenerate (volume {vol:e})")));
        }
        for &i in mesh.element(e) {
            diag[i] += vol * share;
        }
    }
    Ok(SparseMatrix::diagonal_matrix(&diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductivity::{Conductivity, ConductivityParams, FiberField, Medium, UniformField};
    use crate::mesh::{build_cube_mesh, build_heart_torso_2d, Mesh, Region};
    use approx::assert_abs_diff_eq;

    fn unit_triangle() -> Mesh {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        Mesh::new(2, v, vec![0, 1, 2], vec![Region::Heart]).unwrap()
    }

    #[test]
    fn unit_triangle_stiffness() {
        // ∇λ = (−1,−1), (1,0), (0,1); area 1/2
        let m = unit_triangle();
        let s = assemble_stiffness(&m, &UniformField(Tensor::identity(2)), Space::Full).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(s.get(i, j), expected[i][j], epsilon = 1e-15);
            }
        }
        let s2 = assemble_stiffness(&m, &UniformField(Tensor::scalar(2, 2.0)), Space::Full).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(s2.get(i, j), 2.0 * s.get(i, j), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn unit_triangle_mass() {
        let mass = assemble_lumped_mass(&unit_triangle(), Space::Full).unwrap();
        for d in mass.diagonal() {
            assert_abs_diff_eq!(d, 1.0 / 6.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn mass_traces() {
        let cube = build_cube_mesh(4).unwrap();
        let tr: f64 = assemble_lumped_mass(&cube, Space::Full).unwrap().diagonal().iter().sum();
        assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-12);
        let m2 = build_heart_torso_2d(8).unwrap();
        let tr: f64 = assemble_lumped_mass(&m2, Space::HeartOnly).unwrap().diagonal().iter().sum();
        assert_abs_diff_eq!(tr, 0.25, epsilon = 1e-12);
        let tr: f64 = assemble_lumped_mass(&m2, Space::Full).unwrap().diagonal().iter().sum();
        assert_abs_diff_eq!(tr, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constants_in_kernel_and_exact_symmetry() {
        let model = Conductivity::new(ConductivityParams::default_2d(), FiberField::default_for_dim(2));
        let m = build_heart_torso_2d(8).unwrap();
        for (medium, space) in [
            (Medium::Bulk, Space::Full),
            (Medium::BulkExtra, Space::Full),
            (Medium::Intra, Space::HeartOnly),
            (Medium::Monodomain, Space::HeartOnly),
        ] {
            let s = assemble_stiffness(&m, &model.field(medium), space).unwrap();
            assert!(s.is_symmetric());
            let ones = vec![1.0; s.n_rows()];
            let r = s.mul_vec(&ones).unwrap();
            assert!(r.iter().all(|x| x.abs() < 1e-13 * s.norm_inf()), "{medium:?}");
        }
    }

    #[test]
    fn heart_only_requires_heart_tensor() {
        let model = Conductivity::new(ConductivityParams::default_2d(), FiberField::default_for_dim(2));
        let m = build_heart_torso_2d(4).unwrap();
        // σ_i is undefined in the torso, so a full-space assembly must fail
        assert!(assemble_stiffness(&m, &model.field(Medium::Intra), Space::Full).is_err());
    }

    #[test]
    fn intra_expansion_identity() {
        // Πᵀ S_i Π = S_1 − S_e
        let model = Conductivity::new(ConductivityParams::default_2d(), FiberField::default_for_dim(2));
        let m = build_heart_torso_2d(8).unwrap();
        let s1 = assemble_stiffness(&m, &model.field(Medium::Bulk), Space::Full).unwrap();
        let se = assemble_stiffness(&m, &model.field(Medium::BulkExtra), Space::Full).unwrap();
        let si = assemble_stiffness(&m, &model.field(Medium::Intra), Space::HeartOnly).unwrap();
        let diff = s1.add_scaled(-1.0, &se).unwrap();
        let scale = s1.norm_inf();
        for i in 0..m.n_vertices() {
            for j in 0..m.n_vertices() {
                let expanded = if i < m.n_heart() && j < m.n_heart() { si.get(i, j) } else { 0.0 };
                assert!((diff.get(i, j) - expanded).abs() <= 1e-12 * scale);
            }
        }
    }
}
