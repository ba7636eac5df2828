use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{BasisIndex, Family};
use crate::error::{Error, Result};

/// Immutable sparse mixing matrix stored as sorted coordinate lists per row.
///
/// Indices are 0-based. `family` and `basis_index` record how the matrix was
/// produced; they do not affect arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct GossipMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    family: Family,
    basis_index: Option<BasisIndex>,
}

impl GossipMatrix {
    /// Builds a matrix from `(row, col, weight)` triplets. Duplicate
    /// coordinates are summed and exact zeros dropped.
    pub fn from_triplets<I>(n: usize, triplets: I, family: Family) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, w) in triplets {
            if r >= n || c >= n {
                return Err(Error::Parse(format!(
                    "entry ({r}, {c}) outside a {n}x{n} matrix"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Parse(format!("non-finite weight at ({r}, {c})")));
            }
            *acc.entry((r, c)).or_insert(0.0) += w;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(acc.len());
        let mut vals = Vec::with_capacity(acc.len());
        row_ptr.push(0);
        let mut row = 0;
        for ((r, c), w) in acc {
            if w == 0.0 {
                continue;
            }
            while row < r {
                row_ptr.push(cols.len());
                row += 1;
            }
            cols.push(c);
            vals.push(w);
        }
        while row < n {
            row_ptr.push(cols.len());
            row += 1;
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
            family,
            basis_index: None,
        })
    }

    pub(crate) fn with_basis(mut self, basis: BasisIndex) -> Self {
        self.basis_index = Some(basis);
        self
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0)), Family::Custom)
            .expect("identity of positive size")
    }

    /// The exact averaging matrix `J = 11ᵀ/n`.
    pub fn averaging(n: usize) -> Self {
        let w = 1.0 / n as f64;
        let trip = (0..n).flat_map(move |i| (0..n).map(move |j| (i, j, w)));
        Self::from_triplets(n, trip, Family::Complete).expect("J of positive size")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn basis_index(&self) -> Option<&BasisIndex> {
        self.basis_index.as_ref()
    }

    /// Nonzeros of row `i` as `(col, weight)`, sorted by column.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.vals[span].iter().copied())
    }

    /// All nonzeros in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, w)| (i, j, w)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[span.clone()].binary_search(&j) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::from_triplets(self.n, self.entries().map(|(i, j, w)| (j, i, w)), self.family)
            .expect("transpose of a valid matrix");
        t.basis_index = self.basis_index.clone();
        t
    }

    /// Number of off-diagonal nonzeros in each row.
    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| self.row(i).filter(|&(j, _)| j != i).count())
            .collect()
    }

    /// Number of off-diagonal nonzeros in each column.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for (i, j, _) in self.entries() {
            if i != j {
                deg[j] += 1;
            }
        }
        deg
    }

    /// Maximum of the row and column off-diagonal degrees.
    pub fn max_degree(&self) -> usize {
        self.out_degrees()
            .into_iter()
            .chain(self.in_degrees())
            .max()
            .unwrap_or(0)
    }

    /// `out = W x`.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(j, w)| w * x[j]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.mul_vec_into(x, &mut out);
        out
    }

    /// `out = Wᵀ x`.
    pub fn mul_vec_transpose_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(out.len(), self.n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            for (j, w) in self.row(i) {
                out[j] += w * xi;
            }
        }
    }

    /// `W X` for an `n × d` matrix whose rows are node states.
    pub fn mix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: x.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.n, x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            for i in 0..self.n {
                out[(i, c)] = self.row(i).map(|(j, w)| w * col[j]).sum();
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (i, j, w) in self.entries() {
            d[(i, j)] = w;
        }
        d
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.n, (0..self.n).map(|i| self.row(i).map(|(_, w)| w).sum()))
    }

    pub fn col_sums(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.n);
        for (_, j, w) in self.entries() {
            s[j] += w;
        }
        s
    }
}
