//! Compressed sparse row matrices.

use std::io::{BufRead, Write};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Wraps raw CSR arrays, checking that column indices are in range and
    /// strictly increasing within each row.
    pub fn from_csr(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n_rows + 1
            || row_offsets[0] != 0
            || *row_offsets.last().unwrap() != col_indices.len()
            || col_indices.len() != values.len()
        {
            return Err(Error::InvalidArgument("inconsistent CSR arrays".into()));
        }
        for r in 0..n_rows {
            let (a, b) = (row_offsets[r], row_offsets[r + 1]);
            if a > b {
                return Err(Error::InvalidArgument("row offsets must be non-decreasing".into()));
            }
            let cols = &col_indices[a..b];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= n_cols) {
                return Err(Error::InvalidArgument(format!(
                    "row {r}: column indices must be in range and strictly increasing"
                )));
            }
        }
        Ok(SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values })
    }

    /// Sums duplicate entries. Duplicates are accumulated in input order, so
    /// the result depends only on the triplet sequence.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|t| t.0 >= n_rows || t.1 >= n_cols) {
            return Err(Error::InvalidArgument(format!("entry ({r}, {c}) out of range")));
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut row_offsets = vec![0; n_rows + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for k in order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(SparseMatrix { n_rows, n_cols, row_offsets, col_indices, values })
    }

    pub fn diagonal_matrix(diag: &[f64]) -> Self {
        let n = diag.len();
        SparseMatrix {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal_matrix(&vec![1.0; n])
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[r], self.row_offsets[r + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0.0)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    /// `y ← A x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_offsets[r], self.row_offsets[r + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * x[self.col_indices[k]];
            }
            *yr = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matrix-vector product", x.len(), self.n_cols)?;
        let mut y = vec![0.0; self.n_rows];
        self.mul_vec_into(x, &mut y);
        Ok(y)
    }

    pub fn same_pattern(&self, other: &SparseMatrix) -> bool {
        self.n_rows == other.n_rows
            && self.n_cols == other.n_cols
            && self.row_offsets == other.row_offsets
            && self.col_indices == other.col_indices
    }

    pub fn scaled(&self, k: f64) -> SparseMatrix {
        SparseMatrix { values: self.values.iter().map(|v| v * k).collect(), ..self.clone() }
    }

    /// `self + k · other`; patterns are merged.
    pub fn add_scaled(&self, k: f64, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::InvalidArgument("matrix shapes differ".into()));
        }
        if self.same_pattern(other) {
            let values = self.values.iter().zip(&other.values).map(|(a, b)| a + k * b).collect();
            return Ok(SparseMatrix { values, ..self.clone() });
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for (m, s) in [(self, 1.0), (other, k)] {
            for r in 0..m.n_rows {
                let (cols, vals) = m.row(r);
                trip.extend(cols.iter().zip(vals).map(|(&c, &v)| (r, c, s * v)));
            }
        }
        SparseMatrix::from_triplets(self.n_rows, self.n_cols, &trip)
    }

    /// Adds `d[i]` to every diagonal entry (inserting entries when absent).
    pub fn add_diagonal(&self, d: &[f64]) -> Result<SparseMatrix> {
        check_len("diagonal", d.len(), self.n_rows.min(self.n_cols))?;
        self.add_scaled(1.0, &SparseMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            ..SparseMatrix::diagonal_matrix(d)
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && (0..self.n_rows).all(|r| {
                let (cols, vals) = self.row(r);
                cols.iter().zip(vals).all(|(&c, &v)| self.get(c, r) == v)
            })
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n_rows)
            .map(|r| self.row(r).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(r, c)] += v;
            }
        }
        d
    }

    /// MatrixMarket coordinate format (general, 1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<SparseMatrix> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty MatrixMarket file".into()))??;
        if !header.starts_with("%%MatrixMarket matrix coordinate real") {
            return Err(Error::Parse(format!("unsupported MatrixMarket header: {header}")));
        }
        let symmetric = header.contains("symmetric");
        let mut size: Option<(usize, usize)> = None;
        let mut trip = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse_idx = |s: &str| {
                s.parse::<usize>().map_err(|e| Error::Parse(format!("bad index {s:?}: {e}")))
            };
            match size {
                None => {
                    if fields.len() != 3 {
                        return Err(Error::Parse(format!("bad size line: {line}")));
                    }
                    size = Some((parse_idx(fields[0])?, parse_idx(fields[1])?));
                }
                Some(_) => {
                    if fields.len() != 3 {
                        return Err(Error::Parse(format!("bad entry line: {line}")));
                    }
                    let (i, j) = (parse_idx(fields[0])?, parse_idx(fields[1])?);
                    if i == 0 || j == 0 {
                        return Err(Error::Parse("MatrixMarket indices are 1-based".into()));
                    }
                    let v: f64 = fields[2]
                        .parse()
                        .map_err(|e| Error::Parse(format!("bad value {:?}: {e}", fields[2])))?;
                    trip.push((i - 1, j - 1, v));
                    if symmetric && i != j {
                        trip.push((j - 1, i - 1, v));
                    }
                }
            }
        }
        let (nr, nc) = size.ok_or_else(|| Error::Parse("missing size line".into()))?;
        SparseMatrix::from_triplets(nr, nc, &trip)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> SparseMatrix {
        SparseMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (1, 1, 3.0), (0, 1, -1.0), (1, 0, -1.0), (2, 2, 1.0), (0, 0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = example();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 5);
        assert_eq!(a.row(0).0, &[0, 1]);
        assert!(a.is_symmetric());
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]).unwrap(), vec![2.0, 2.0, 1.0]);
        assert!(a.mul_vec(&[1.0]).is_err());
    }

    #[test]
    fn from_csr_rejects_unsorted_rows() {
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![1, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn add_and_diagonal() {
        let a = example();
        let b = a.add_diagonal(&[1.0, 1.0, 1.0]).unwrap();
        assert!(b.same_pattern(&a));
        assert_eq!(b.diagonal(), vec![4.0, 4.0, 2.0]);
        let c = a.add_scaled(-1.0, &a).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));
        let off = SparseMatrix::from_triplets(3, 3, &[(2, 0, 5.0)]).unwrap();
        let d = a.add_scaled(2.0, &off).unwrap();
        assert_eq!(d.get(2, 0), 10.0);
        assert_eq!(d.nnz(), 6);
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = example().scaled(0.1);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let b = SparseMatrix::read_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(a, b);
        assert!(SparseMatrix::read_matrix_market("junk\n".as_bytes()).is_err());
    }
}
