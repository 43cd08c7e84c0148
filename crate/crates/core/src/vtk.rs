//! Legacy ASCII VTK unstructured grids: mesh output with region labels,
//! point-data snapshots, and a reader for the files this module writes.
//!
//! Coordinates are written with the shortest representation that parses
//! back to the same `f64`, so a write/read cycle reproduces the mesh
//! exactly.

use std::io::{BufRead, Write};

use crate::error::{check_len, Error, Result};
use crate::mesh::{Mesh, Region};

const VTK_TRIANGLE: u8 = 5;
const VTK_TETRA: u8 = 10;

fn cell_type(dim: usize) -> u8 {
    if dim == 2 {
        VTK_TRIANGLE
    } else {
        VTK_TETRA
    }
}

fn write_grid<W: Write>(w: &mut W, mesh: &Mesh, title: &str) -> Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.n_vertices())?;
    for p in mesh.vertices() {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    let npe = mesh.nodes_per_element();
    writeln!(w, "CELLS {} {}", mesh.n_elements(), mesh.n_elements() * (npe + 1))?;
    for cell in mesh.elements() {
        write!(w, "{npe}")?;
        for i in cell {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_elements())?;
    let t = cell_type(mesh.dim());
    for _ in 0..mesh.n_elements() {
        writeln!(w, "{t}")?;
    }
    writeln!(w, "CELL_DATA {}", mesh.n_elements())?;
    writeln!(w, "SCALARS region int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for r in mesh.regions() {
        writeln!(w, "{}", r.code())?;
    }
    Ok(())
}

/// Writes the mesh with its region codes as cell data.
pub fn write_mesh<W: Write>(mut w: W, mesh: &Mesh) -> Result<()> {
    write_grid(&mut w, mesh, "bidomain mesh")
}

/// Writes the mesh plus point data: `u` on every vertex and `v` on the
/// heart vertices (`nan` elsewhere).
pub fn write_snapshot<W: Write>(mut w: W, mesh: &Mesh, time_ms: f64, v: &[f64], u: &[f64]) -> Result<()> {
    check_len("v", v.len(), mesh.n_heart())?;
    check_len("u", u.len(), mesh.n_vertices())?;
    write_grid(&mut w, mesh, &format!("bidomain snapshot t = {time_ms} ms"))?;
    writeln!(w, "POINT_DATA {}", mesh.n_vertices())?;
    writeln!(w, "SCALARS v double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for k in 0..mesh.n_vertices() {
        match v.get(k) {
            Some(x) => writeln!(w, "{x}")?,
            None => writeln!(w, "nan")?,
        }
    }
    writeln!(w, "SCALARS u double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for x in u {
        writeln!(w, "{x}")?;
    }
    Ok(())
}

struct Tokens<R> {
    lines: std::io::Lines<R>,
    pending: std::vec::IntoIter<String>,
    line_no: usize,
}

impl<R: BufRead> Tokens<R> {
    fn new(r: R) -> Self {
        Tokens { lines: r.lines(), pending: Vec::new().into_iter(), line_no: 0 }
    }

    fn next_line(&mut self) -> Result<Option<String>> {
        match self.lines.next() {
            Some(line) => {
                self.line_no += 1;
                Ok(Some(line?))
            }
            None => Ok(None),
        }
    }

    fn next(&mut self) -> Result<String> {
        loop {
            if let Some(t) = self.pending.next() {
                return Ok(t);
            }
            let line = self.next_line()?.ok_or_else(|| self.error("unexpected end of file"))?;
            self.pending = line.split_whitespace().map(String::from).collect::<Vec<_>>().into_iter();
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let t = self.next()?;
        t.parse().map_err(|_| self.error(&format!("expected {what}, found {t:?}")))
    }

    fn expect(&mut self, keyword: &str) -> Result<()> {
        let t = self.next()?;
        if t.eq_ignore_ascii_case(keyword) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {keyword}, found {t:?}")))
        }
    }

    fn error(&self, msg: &str) -> Error {
        Error::Parse(format!("VTK line {}: {msg}", self.line_no))
    }
}

/// Reads a mesh written by [`write_mesh`] (or [`write_snapshot`]).
pub fn read_mesh<R: BufRead>(r: R) -> Result<Mesh> {
    let mut tok = Tokens::new(r);
    let header = tok.next_line()?.unwrap_or_default();
    if !header.starts_with("# vtk DataFile") {
        return Err(Error::Parse("missing VTK header".into()));
    }
    tok.next_line()?; // title
    tok.expect("ASCII")?;
    tok.expect("DATASET")?;
    tok.expect("UNSTRUCTURED_GRID")?;

    tok.expect("POINTS")?;
    let n: usize = tok.parse("point count")?;
    tok.next()?; // scalar type
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        vertices.push([tok.parse("coordinate")?, tok.parse("coordinate")?, tok.parse("coordinate")?]);
    }

    tok.expect("CELLS")?;
    let ne: usize = tok.parse("cell count")?;
    let _size: usize = tok.parse("cell list size")?;
    let mut cells = Vec::new();
    let mut npe = None;
    for _ in 0..ne {
        let k: usize = tok.parse("cell size")?;
        if *npe.get_or_insert(k) != k {
            return Err(tok.error("mixed cell sizes"));
        }
        for _ in 0..k {
            cells.push(tok.parse("vertex index")?);
        }
    }
    let dim = match npe {
        Some(3) => 2,
        Some(4) => 3,
        Some(k) => return Err(tok.error(&format!("unsupported cell size {k}"))),
        None => return Err(tok.error("no cells")),
    };

    tok.expect("CELL_TYPES")?;
    let nt: usize = tok.parse("cell type count")?;
    if nt != ne {
        return Err(tok.error("CELL_TYPES count differs from CELLS count"));
    }
    for _ in 0..ne {
        let t: u8 = tok.parse("cell type")?;
        if t != cell_type(dim) {
            return Err(tok.error(&format!("unexpected cell type {t}")));
        }
    }

    tok.expect("CELL_DATA")?;
    let nd: usize = tok.parse("cell data count")?;
    if nd != ne {
        return Err(tok.error("CELL_DATA count differs from CELLS count"));
    }
    tok.expect("SCALARS")?;
    let name = tok.next()?;
    if name != "region" {
        return Err(tok.error(&format!("expected region cell data, found {name:?}")));
    }
    tok.next()?; // type
    let mut t = tok.next()?;
    if t != "LOOKUP_TABLE" {
        t = tok.next()?; // optional component count
    }
    if t != "LOOKUP_TABLE" {
        return Err(tok.error("expected LOOKUP_TABLE"));
    }
    tok.next()?;
    let mut regions = Vec::with_capacity(ne);
    for _ in 0..ne {
        regions.push(Region::from_code(tok.parse("region code")?)?);
    }
    Mesh::new(dim, vertices, cells, regions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_cube_mesh, build_heart_torso_2d};

    #[test]
    fn mesh_round_trip_is_exact() {
        for mesh in [build_heart_torso_2d(12).unwrap(), build_cube_mesh(3).unwrap()] {
            let mut buf = Vec::new();
            write_mesh(&mut buf, &mesh).unwrap();
            let back = read_mesh(buf.as_slice()).unwrap();
            assert_eq!(back.dim(), mesh.dim());
            assert_eq!(back.vertices(), mesh.vertices());
            assert_eq!(back.elements().collect::<Vec<_>>(), mesh.elements().collect::<Vec<_>>());
            assert_eq!(back.regions(), mesh.regions());
            assert_eq!(back.n_heart(), mesh.n_heart());
        }
    }

    #[test]
    fn snapshot_layout() {
        let mesh = build_heart_torso_2d(4).unwrap();
        let v = vec![-90.0; mesh.n_heart()];
        let u = vec![0.5; mesh.n_vertices()];
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &mesh, 1.5, &v, &u).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert!(s.contains(&format!("POINT_DATA {}", mesh.n_vertices())));
        assert!(s.contains("SCALARS v double 1"));
        assert_eq!(s.matches("nan").count(), mesh.n_vertices() - mesh.n_heart());
        // still readable as a mesh
        assert_eq!(read_mesh(buf.as_slice()).unwrap().n_vertices(), mesh.n_vertices());
        assert!(write_snapshot(Vec::new(), &mesh, 0.0, &u, &u).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_mesh("hello".as_bytes()), Err(Error::Parse(_))));
        let mut buf = Vec::new();
        write_mesh(&mut buf, &build_cube_mesh(2).unwrap()).unwrap();
        let truncated = &buf[..buf.len() / 2];
        assert!(read_mesh(truncated).is_err());
    }
}
