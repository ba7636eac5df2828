use std::fmt;

use super::{Family, GossipMatrix};
use crate::error::{Error, Result};

/// Multiset of label differences in `[1, n-1]`.
///
/// Negative differences are stored canonically: `-u` is kept as `n - u`,
/// since `A^(-u) = A^(n-u) = (A^(u))ᵀ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisIndex {
    n: usize,
    values: Vec<usize>,
}

impl BasisIndex {
    pub fn new(n: usize, values: Vec<usize>) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("n", "a basis index needs n >= 2"));
        }
        if let Some(&bad) = values.iter().find(|&&u| u == 0 || u >= n) {
            return Err(Error::param("u", format!("{bad} is outside [1, {}]", n - 1)));
        }
        Ok(Self { n, values })
    }

    /// `{1, 2, ..., n-1}`, whose average basis matrix is exactly `J`.
    pub fn complete(n: usize) -> Self {
        Self {
            n,
            values: (1..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `{u_i} ∪ {-u_i}` in canonical form, each original value followed by
    /// its negation.
    pub fn signed(&self) -> Self {
        let values = self
            .values
            .iter()
            .flat_map(|&u| [u, self.n - u])
            .collect();
        Self { n: self.n, values }
    }

    /// Multiplicity of each label difference, indexed by `u` (entry 0 unused).
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n];
        for &u in &self.values {
            c[u] += 1;
        }
        c
    }

    /// Comma-joined values, as written to metadata sidecars.
    pub fn joined(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for BasisIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, u) in self.values.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{u}")?;
        }
        Ok(())
    }
}

/// The basis matrix `A^(u)`: node `j` sends weight `(n-1)/n` to node
/// `(j + u) mod n` and keeps `1/n`.
pub fn basis_matrix(u: usize, n: usize) -> Result<GossipMatrix> {
    if n < 2 {
        return Err(Error::param("n", "basis matrices need n >= 2"));
    }
    if u == 0 || u >= n {
        return Err(Error::param("u", format!("{u} is outside [1, {}]", n - 1)));
    }
    let off = (n - 1) as f64 / n as f64;
    let diag = 1.0 / n as f64;
    let trip = (0..n).flat_map(|j| [((j + u) % n, j, off), (j, j, diag)]);
    Ok(GossipMatrix::from_triplets(n, trip, Family::Basis)?
        .with_basis(BasisIndex::new(n, vec![u])?))
}
