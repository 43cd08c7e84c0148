//! Structured simplicial meshes of the thorax `Ω` carrying the heart `H` as an
//! exact submesh, plus the coefficient restriction between the two spaces.
//!
//! Vertices are numbered heart-first: indices `0..n_heart` are exactly the
//! vertices of the heart submesh. With that numbering the restriction to the
//! heart is a truncation of the coefficient vector and its transpose pads
//! with zeros.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Tissue label carried by every element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Heart,
    TorsoLung,
    TorsoCavity,
    TorsoOther,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::Heart,
        Region::TorsoLung,
        Region::TorsoCavity,
        Region::TorsoOther,
    ];

    /// Integer tag used in file formats.
    pub fn code(self) -> i32 {
        match self {
            Region::Heart => 0,
            Region::TorsoLung => 1,
            Region::TorsoCavity => 2,
            Region::TorsoOther => 3,
        }
    }

    pub fn from_code(code: i32) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.code() == code)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown region tag {code}")))
    }

    pub fn is_heart(self) -> bool {
        self == Region::Heart
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::Heart => "HEART",
            Region::TorsoLung => "TORSO_LUNG",
            Region::TorsoCavity => "TORSO_CAVITY",
            Region::TorsoOther => "TORSO_OTHER",
        };
        f.write_str(s)
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Region> {
        Region::ALL
            .into_iter()
            .find(|r| r.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown region tag {s:?}")))
    }
}

/// Simplicial mesh of `Ω` (triangles in 2D, tetrahedra in 3D).
///
/// Coordinates are in cm. 2D meshes store `z = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<[f64; 3]>,
    cells: Vec<usize>,
    regions: Vec<Region>,
    n_heart: usize,
}

impl Mesh {
    /// Validates and wraps raw mesh data. `cells` is flat with `dim + 1`
    /// vertex indices per element.
    pub fn new(
        dim: usize,
        vertices: Vec<[f64; 3]>,
        cells: Vec<usize>,
        regions: Vec<Region>,
    ) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        let npe = dim + 1;
        if !cells.len().is_multiple_of(npe) || cells.len() / npe != regions.len() {
            return Err(Error::InvalidArgument(
                "cell connectivity does not match the region tag count".into(),
            ));
        }
        let n = vertices.len();
        let mut in_heart = vec![false; n];
        for (cell, region) in cells.chunks(npe).zip(&regions) {
            for (a, &i) in cell.iter().enumerate() {
                if i >= n {
                    return Err(Error::InvalidArgument(format!("vertex index {i} out of range")));
                }
                if cell[..a].contains(&i) {
                    return Err(Error::InvalidArgument("element with repeated vertex".into()));
                }
                if region.is_heart() {
                    in_heart[i] = true;
                }
            }
        }
        let n_heart = in_heart.iter().filter(|&&h| h).count();
        if in_heart[..n_heart].iter().any(|&h| !h) {
            return Err(Error::InvalidArgument(
                "heart vertices must be numbered first".into(),
            ));
        }
        let mesh = Mesh { dim, vertices, cells, regions, n_heart };
        for e in 0..mesh.n_elements() {
            if mesh.signed_volume(e) <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "element {e} has non-positive volume"
                )));
            }
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Total vertex count `N`.
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Heart vertex count `N_H`.
    pub fn n_heart(&self) -> usize {
        self.n_heart
    }

    pub fn n_elements(&self) -> usize {
        self.regions.len()
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn vertex(&self, i: usize) -> [f64; 3] {
        self.vertices[i]
    }

    /// Heart vertex indices, which by construction are `0..N_H`.
    pub fn heart_vertex_ids(&self) -> Range<usize> {
        0..self.n_heart
    }

    pub fn nodes_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let npe = self.dim + 1;
        &self.cells[e * npe..(e + 1) * npe]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.dim + 1)
    }

    pub fn region(&self, e: usize) -> Region {
        self.regions[e]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// True when the heart fills the whole domain (no torso elements).
    pub fn is_isolated_heart(&self) -> bool {
        self.regions.iter().all(|r| r.is_heart())
    }

    pub fn centroid(&self, e: usize) -> [f64; 3] {
        let cell = self.element(e);
        let mut c = [0.0; 3];
        for &i in cell {
            for (ck, xk) in c.iter_mut().zip(self.vertices[i]) {
                *ck += xk;
            }
        }
        let w = 1.0 / cell.len() as f64;
        c.map(|x| x * w)
    }

    /// Signed measure of element `e` (area in 2D, volume in 3D).
    pub fn signed_volume(&self, e: usize) -> f64 {
        let cell = self.element(e);
        let x0 = self.vertices[cell[0]];
        let d = |k: usize, axis: usize| self.vertices[cell[k]][axis] - x0[axis];
        match self.dim {
            2 => 0.5 * (d(1, 0) * d(2, 1) - d(2, 0) * d(1, 1)),
            _ => {
                let det = d(1, 0) * (d(2, 1) * d(3, 2) - d(3, 1) * d(2, 2))
                    - d(2, 0) * (d(1, 1) * d(3, 2) - d(3, 1) * d(1, 2))
                    + d(3, 0) * (d(1, 1) * d(2, 2) - d(2, 1) * d(1, 2));
                det / 6.0
            }
        }
    }

    /// Total measure of the elements tagged `region`.
    pub fn region_volume(&self, region: Region) -> f64 {
        (0..self.n_elements())
            .filter(|&e| self.regions[e] == region)
            .map(|e| self.signed_volume(e))
            .sum()
    }

    pub fn restriction(&self) -> RestrictionMap {
        RestrictionMap { n: self.n_vertices(), n_heart: self.n_heart }
    }
}

/// `Π`: whole-domain coefficients to heart coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestrictionMap {
    n: usize,
    n_heart: usize,
}

impl RestrictionMap {
    pub fn new(n: usize, n_heart: usize) -> Result<Self> {
        if n_heart > n {
            return Err(Error::InvalidArgument(format!("N_H = {n_heart} exceeds N = {n}")));
        }
        Ok(RestrictionMap { n, n_heart })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_heart(&self) -> usize {
        self.n_heart
    }

    /// `Π U`: truncation to the first `N_H` coefficients.
    pub fn restrict(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len("restrict", u.len(), self.n)?;
        Ok(u[..self.n_heart].to_vec())
    }

    /// `Πᵀ V`: pads with zeros. This is coefficient padding, not the
    /// prolongation of the heart function by zero.
    pub fn transpose_restrict(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("transpose_restrict", v.len(), self.n_heart)?;
        let mut u = vec![0.0; self.n];
        u[..self.n_heart].copy_from_slice(v);
        Ok(u)
    }
}

fn check_cells(cells_per_side: usize, min: usize) -> Result<()> {
    if cells_per_side < min {
        return Err(Error::InvalidArgument(format!(
            "cells_per_side must be at least {min}, got {cells_per_side}"
        )));
    }
    Ok(())
}

/// Unit cube `[0,1]³` with each of the `n³` cubes split into six
/// tetrahedra (Kuhn triangulation). Every element is heart tissue.
pub fn build_cube_mesh(cells_per_side: usize) -> Result<Mesh> {
    check_cells(cells_per_side, 2)?;
    let n = cells_per_side;
    let np = n + 1;
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize, k: usize| i + np * (j + np * k);

    let mut vertices = Vec::with_capacity(np * np * np);
    for k in 0..np {
        for j in 0..np {
            for i in 0..np {
                vertices.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }

    const PERMS: [[usize; 3]; 6] =
        [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut cells = Vec::with_capacity(24 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in PERMS {
                    let mut p = [i, j, k];
                    let mut tet = [idx(p[0], p[1], p[2]), 0, 0, 0];
                    for (step, &axis) in perm.iter().enumerate() {
                        p[axis] += 1;
                        tet[step + 1] = idx(p[0], p[1], p[2]);
                    }
                    // odd permutations walk the diagonal with negative orientation
                    if matches!(perm, [0, 2, 1] | [1, 0, 2] | [2, 1, 0]) {
                        tet.swap(2, 3);
                    }
                    cells.extend_from_slice(&tet);
                }
            }
        }
    }
    let regions = vec![Region::Heart; 6 * n * n * n];
    Mesh::new(3, vertices, cells, regions)
}

/// Unit square `[0,1]²`, two triangles per cell, all heart tissue
/// (isolated-heart counterpart of [`build_heart_torso_2d`]).
pub fn build_square_mesh(cells_per_side: usize) -> Result<Mesh> {
    check_cells(cells_per_side, 2)?;
    square_grid(cells_per_side, |_, _| Region::Heart, |_, _| true)
}

/// Synthetic heart-in-torso slice: `Ω = [0,1]²`, heart block
/// `[0.25,0.75]²`, a lung block on its left and a cavity block on its right,
/// everything else generic torso. Heart vertices are numbered first.
pub fn build_heart_torso_2d(cells_per_side: usize) -> Result<Mesh> {
    if cells_per_side == 0 || !cells_per_side.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "cells_per_side must be a positive multiple of 4, got {cells_per_side}"
        )));
    }
    let n = cells_per_side;
    let (lo, hi) = (n / 4, 3 * n / 4);
    let band = |c: usize| (lo..hi).contains(&c);
    let tag = move |ci: usize, cj: usize| {
        if !band(cj) {
            Region::TorsoOther
        } else if band(ci) {
            Region::Heart
        } else if ci < lo {
            Region::TorsoLung
        } else {
            Region::TorsoCavity
        }
    };
    let heart_vertex = move |i: usize, j: usize| (lo..=hi).contains(&i) && (lo..=hi).contains(&j);
    square_grid(n, tag, heart_vertex)
}

fn square_grid(
    n: usize,
    tag: impl Fn(usize, usize) -> Region,
    heart_vertex: impl Fn(usize, usize) -> bool,
) -> Result<Mesh> {
    let np = n + 1;
    let h = 1.0 / n as f64;
    // heart-first numbering, lexicographic (row-major in j) inside each group
    let mut number = vec![usize::MAX; np * np];
    let mut next = 0;
    for pass in [true, false] {
        for j in 0..np {
            for i in 0..np {
                if heart_vertex(i, j) == pass {
                    number[i + np * j] = next;
                    next += 1;
                }
            }
        }
    }
    let mut vertices = vec![[0.0; 3]; np * np];
    for j in 0..np {
        for i in 0..np {
            vertices[number[i + np * j]] = [i as f64 * h, j as f64 * h, 0.0];
        }
    }
    let id = |i: usize, j: usize| number[i + np * j];
    let mut cells = Vec::with_capacity(6 * n * n);
    let mut regions = Vec::with_capacity(2 * n * n);
    for cj in 0..n {
        for ci in 0..n {
            let (a, b, c, d) = (id(ci, cj), id(ci + 1, cj), id(ci + 1, cj + 1), id(ci, cj + 1));
            cells.extend_from_slice(&[a, b, c, a, c, d]);
            let r = tag(ci, cj);
            regions.push(r);
            regions.push(r);
        }
    }
    Mesh::new(2, vertices, cells, regions)
}

/// Which generated mesh to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    /// 2 or 3.
    pub dim: usize,
    /// Cells per side of the unit square or cube.
    pub cells: usize,
    /// 2D only: heart embedded in a torso instead of an isolated heart.
    #[serde(default)]
    pub coupled: bool,
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh> {
        match (self.dim, self.coupled) {
            (2, true) => build_heart_torso_2d(self.cells),
            (2, false) => build_square_mesh(self.cells),
            (3, false) => build_cube_mesh(self.cells),
            (3, true) => Err(Error::InvalidArgument("no coupled 3D geometry is available".into())),
            (d, _) => Err(Error::InvalidArgument(format!("mesh dimension must be 2 or 3, got {d}"))),
        }
    }
}

impl Default for MeshSpec {
    fn default() -> Self {
        MeshSpec { dim: 3, cells: 8, coupled: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_counts() {
        let m = build_cube_mesh(2).unwrap();
        assert_eq!(m.n_vertices(), 27);
        assert_eq!(m.n_elements(), 48);
        assert_eq!(m.n_heart(), 27);
        assert_eq!(build_cube_mesh(8).unwrap().n_vertices(), 729);
        assert!(matches!(build_cube_mesh(1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cube_volume_partition() {
        let m = build_cube_mesh(3).unwrap();
        let total = m.region_volume(Region::Heart);
        assert!((total - 1.0).abs() < 1e-12);
        for e in 0..m.n_elements() {
            assert!((m.signed_volume(e) - 1.0 / (6.0 * 27.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn heart_torso_counts() {
        let m = build_heart_torso_2d(4).unwrap();
        assert_eq!((m.n_vertices(), m.n_heart()), (25, 9));
        let m = build_heart_torso_2d(8).unwrap();
        assert_eq!((m.n_vertices(), m.n_heart()), (81, 25));
        assert!(build_heart_torso_2d(6).is_err());
    }

    #[test]
    fn heart_torso_layout() {
        let m = build_heart_torso_2d(8).unwrap();
        assert!((m.region_volume(Region::Heart) - 0.25).abs() < 1e-12);
        assert!((m.region_volume(Region::TorsoLung) - 0.125).abs() < 1e-12);
        assert!((m.region_volume(Region::TorsoCavity) - 0.125).abs() < 1e-12);
        assert!((m.region_volume(Region::TorsoOther) - 0.5).abs() < 1e-12);
        // every vertex of a heart element lies in the heart index range
        let max_heart = (0..m.n_elements())
            .filter(|&e| m.region(e).is_heart())
            .flat_map(|e| m.element(e).to_vec())
            .max()
            .unwrap();
        assert_eq!(max_heart, m.n_heart() - 1);
        for i in m.heart_vertex_ids() {
            let [x, y, _] = m.vertex(i);
            assert!((0.25..=0.75).contains(&x) && (0.25..=0.75).contains(&y));
        }
        // heart boundary stays away from the outer boundary
        for i in m.heart_vertex_ids() {
            let [x, y, _] = m.vertex(i);
            assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn restriction_examples() {
        let map = RestrictionMap::new(5, 2).unwrap();
        assert_eq!(map.restrict(&[3.0, 1.0, 4.0, 1.0, 5.0]).unwrap(), vec![3.0, 1.0]);
        assert_eq!(map.restrict(&[0.0; 5]).unwrap(), vec![0.0; 2]);
        assert!(map.restrict(&[1.0; 4]).is_err());

        let map = RestrictionMap::new(4, 2).unwrap();
        assert_eq!(map.transpose_restrict(&[7.0, 2.0]).unwrap(), vec![7.0, 2.0, 0.0, 0.0]);
        assert_eq!(map.transpose_restrict(&[0.0; 2]).unwrap(), vec![0.0; 4]);
        assert!(map.transpose_restrict(&[1.0; 3]).is_err());
    }

    #[test]
    fn mesh_new_rejects_bad_ordering() {
        // single heart triangle whose vertices are not numbered first
        let v = vec![[5.0, 5.0, 0.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = Mesh::new(2, v, vec![1, 2, 3], vec![Region::Heart]);
        assert!(err.is_err());
    }

    #[test]
    fn mesh_new_rejects_inverted_element() {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(Mesh::new(2, v, vec![0, 2, 1], vec![Region::Heart]).is_err());
    }

    #[test]
    fn region_tags_round_trip() {
        for r in Region::ALL {
            assert_eq!(Region::from_code(r.code()).unwrap(), r);
            assert_eq!(r.to_string().parse::<Region>().unwrap(), r);
        }
        assert!(Region::from_code(9).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn restrict_after_pad_is_identity(v in proptest::collection::vec(-1e3f64..1e3, 1..40), extra in 0usize..20) {
            let map = RestrictionMap::new(v.len() + extra, v.len()).unwrap();
            let back = map.restrict(&map.transpose_restrict(&v).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn restriction_adjoint(u in proptest::collection::vec(-10f64..10.0, 12), v in proptest::collection::vec(-10f64..10.0, 5)) {
            let map = RestrictionMap::new(12, 5).unwrap();
            let lhs: f64 = map.restrict(&u).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum();
            let pv = map.transpose_restrict(&v).unwrap();
            let rhs: f64 = u.iter().zip(&pv).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
