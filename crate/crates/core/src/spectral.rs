//! Consensus factors of mixing matrices.
//!
//! For a fixed doubly stochastic `W` the consensus factor is `‖ΠW‖₂` with
//! `Π = I - 11ᵀ/n`; since `W1 = 1`, this equals the largest singular value of
//! `ΠWΠ`. Random samplers are measured by the one-step mean squared
//! contraction `E‖ΠWx‖² / ‖Πx‖²`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::topology::{GossipMatrix, Topology};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Matrices up to this size are measured with a dense SVD.
pub const DENSE_MAX_N: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    PowerIteration,
    Lanczos,
    DenseEig,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::PowerIteration => "power-iteration",
            Method::Lanczos => "lanczos",
            Method::DenseEig => "dense-eig",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusEstimate {
    /// `‖ΠW‖₂` for static matrices; mean squared contraction for samplers.
    pub value: f64,
    pub method: Method,
    pub iterations_or_trials: usize,
    /// Requested tolerance, achieved eigen-residual when not converged, or
    /// the standard error of a Monte Carlo mean.
    pub tolerance_or_stderr: f64,
    pub converged: bool,
}

/// `‖ΠW‖₂` to relative accuracy `tol`: dense SVD up to [`DENSE_MAX_N`],
/// Lanczos above with a budget of `10n` operator applications.
pub fn consensus_factor(w: &GossipMatrix, tol: f64) -> ConsensusEstimate {
    if w.n() <= DENSE_MAX_N {
        dense_consensus_factor(w)
    } else {
        let mut rng = seed::derived_rng(w.n() as u64, stream::SPECTRAL, 0);
        lanczos_consensus_factor(w, tol, 10 * w.n(), &mut rng)
    }
}

/// Largest singular value of the dense `ΠWΠ`.
pub fn dense_consensus_factor(w: &GossipMatrix) -> ConsensusEstimate {
    let n = w.n();
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let m = &proj * w.to_dense() * &proj;
    let value = m
        .singular_values()
        .iter()
        .copied()
        .fold(0.0_f64, f64::max);
    ConsensusEstimate {
        value,
        method: Method::DenseEig,
        iterations_or_trials: 0,
        tolerance_or_stderr: 0.0,
        converged: true,
    }
}

fn center(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `z = (ΠWΠ)ᵀ(ΠWΠ) x` for mean-zero `x`, re-centring both halves.
fn gram_apply(w: &GossipMatrix, x: &[f64], tmp: &mut [f64], z: &mut [f64]) {
    w.mul_vec_into(x, tmp);
    center(tmp);
    w.mul_vec_transpose_into(tmp, z);
    center(z);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit_mean_zero<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    center(&mut x);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    x
}

/// Power iteration on `(ΠWΠ)ᵀ(ΠWΠ)`, with every iterate re-centred onto the
/// mean-zero subspace. Converged once the eigen-residual
/// `‖Gx - λx‖` drops to `tol·λ`; otherwise the estimate after `max_iter`
/// iterations is returned with `converged = false` and the residual.
///
/// Slow when the top singular values are clustered; see
/// [`lanczos_consensus_factor`].
pub fn power_consensus_factor<R: Rng + ?Sized>(
    w: &GossipMatrix,
    tol: f64,
    max_iter: usize,
    rng: &mut R,
) -> ConsensusEstimate {
    let n = w.n();
    let mut x = random_unit_mean_zero(n, rng);
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut lambda: f64 = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter.max(1) {
        gram_apply(w, &x, &mut y, &mut z);
        lambda = dot(&x, &z);
        let nz = norm(&z);
        if nz <= f64::MIN_POSITIVE || lambda <= 0.0 {
            // ΠWΠ annihilates the start vector: the factor is zero.
            return ConsensusEstimate {
                value: 0.0,
                method: Method::PowerIteration,
                iterations_or_trials: it,
                tolerance_or_stderr: tol,
                converged: true,
            };
        }
        residual = x
            .iter()
            .zip(&z)
            .map(|(a, b)| (b - lambda * a).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda {
            return ConsensusEstimate {
                value: lambda.sqrt(),
                method: Method::PowerIteration,
                iterations_or_trials: it,
                tolerance_or_stderr: tol,
                converged: true,
            };
        }
        x.iter_mut().zip(&z).for_each(|(a, b)| *a = b / nz);
    }
    ConsensusEstimate {
        value: lambda.max(0.0).sqrt(),
        method: Method::PowerIteration,
        iterations_or_trials: max_iter,
        tolerance_or_stderr: residual,
        converged: false,
    }
}

/// Largest Krylov dimension before a restart.
const LANCZOS_MAX_DIM: usize = 300;

/// Top eigenpair `(θ, s)` of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`.
fn top_ritz(alpha: &[f64], beta: &[f64]) -> (f64, DVector<f64>) {
    let k = alpha.len();
    let t = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let top = eig.eigenvalues.imax();
    (eig.eigenvalues[top], eig.eigenvectors.column(top).into_owned())
}

/// Restarted Lanczos with full reorthogonalisation on `(ΠWΠ)ᵀ(ΠWΠ)`
/// restricted to the mean-zero subspace.
///
/// The Ritz residual `|β_k s_k|` bounds the distance from the Ritz value to
/// the spectrum, so stopping at `|β_k s_k| ≤ tol·θ` gives the squared factor to
/// relative accuracy `tol`. `max_apply` caps operator applications across
/// restarts; when it runs out the estimate is flagged with its residual.
pub fn lanczos_consensus_factor<R: Rng + ?Sized>(
    w: &GossipMatrix,
    tol: f64,
    max_apply: usize,
    rng: &mut R,
) -> ConsensusEstimate {
    let n = w.n();
    let dim_cap = (n - 1).clamp(1, LANCZOS_MAX_DIM);
    let mut start = random_unit_mean_zero(n, rng);
    let mut tmp = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut applied = 0;
    let mut theta: f64 = 0.0;
    let mut residual = f64::INFINITY;
    let finish = |theta: f64, applied, tolerance_or_stderr, converged| ConsensusEstimate {
        value: theta.max(0.0).sqrt(),
        method: Method::Lanczos,
        iterations_or_trials: applied,
        tolerance_or_stderr,
        converged,
    };
    while applied < max_apply.max(1) {
        let mut basis: Vec<Vec<f64>> = vec![start.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut next_check = 4;
        loop {
            let q = basis.last().expect("non-empty basis");
            gram_apply(w, q, &mut tmp, &mut z);
            applied += 1;
            alpha.push(dot(q, &z));
            // Two passes of classical Gram-Schmidt against the whole basis.
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &z);
                    z.iter_mut().zip(b).for_each(|(zi, bi)| *zi -= c * bi);
                }
            }
            center(&mut z);
            let b = norm(&z);
            let k = alpha.len();
            let breakdown = b <= 1e-14 * alpha.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(f64::MIN_POSITIVE);
            let full = k >= dim_cap || applied >= max_apply;
            if breakdown || full || k >= next_check {
                let (t, s) = top_ritz(&alpha, &beta);
                theta = t;
                residual = if breakdown { 0.0 } else { (b * s[k - 1]).abs() };
                if theta <= 0.0 && breakdown {
                    return finish(0.0, applied, tol, true);
                }
                if residual <= tol * theta.abs() || breakdown {
                    return finish(theta, applied, tol, true);
                }
                if full {
                    // Restart from the current top Ritz vector.
                    let mut y = vec![0.0; n];
                    for (sj, qj) in s.iter().zip(&basis) {
                        y.iter_mut().zip(qj).for_each(|(yi, qi)| *yi += sj * qi);
                    }
                    center(&mut y);
                    let ny = norm(&y);
                    start = if ny > 0.0 {
                        y.iter().map(|v| v / ny).collect()
                    } else {
                        random_unit_mean_zero(n, rng)
                    };
                    break;
                }
                next_check = k + (k / 8).max(4);
            }
            beta.push(b);
            basis.push(z.iter().map(|v| v / b).collect());
        }
    }
    finish(theta, applied, residual, false)
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    count: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / total as f64;
        self.m2 += other.m2 + delta * delta * (self.count * other.count) as f64 / total as f64;
        self.count = total;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Monte Carlo mean of `‖ΠW^(t)x‖² / ‖Πx‖²` over fresh matrices and random
/// mean-zero unit vectors `x`.
pub fn empirical_contraction<R: Rng + ?Sized>(
    topology: &mut Topology,
    trials: usize,
    rng: &mut R,
) -> Result<ConsensusEstimate> {
    if trials < 100 {
        return Err(Error::param("trials", format!("need at least 100, got {trials}")));
    }
    let n = topology.n();
    let mut stats = RunningStats::default();
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for _ in 0..trials {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        center(&mut x);
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let w = topology.advance();
        w.mul_vec_into(&x, &mut y);
        center(&mut y);
        stats.push(y.iter().map(|v| v * v).sum::<f64>());
    }
    Ok(ConsensusEstimate {
        value: stats.mean(),
        method: Method::MonteCarlo,
        iterations_or_trials: trials,
        tolerance_or_stderr: stats.stderr(),
        converged: true,
    })
}

/// Structural checks on a mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n: usize,
    pub max_row_sum_deviation: f64,
    pub max_col_sum_deviation: f64,
    pub min_entry: f64,
    /// `max |w_ij - w_ji|`.
    pub symmetry_defect: f64,
    /// Off-diagonal row degree → number of nodes.
    pub degree_histogram: BTreeMap<usize, usize>,
    pub max_in_degree: usize,
}

impl ValidationReport {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn is_doubly_stochastic(&self) -> bool {
        self.max_row_sum_deviation <= Self::SUM_TOL
            && self.max_col_sum_deviation <= Self::SUM_TOL
            && self.min_entry >= 0.0
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_defect == 0.0
    }

    /// Maximum off-diagonal degree over rows and columns.
    pub fn max_degree(&self) -> usize {
        let rows = self.degree_histogram.keys().next_back().copied().unwrap_or(0);
        rows.max(self.max_in_degree)
    }
}

pub fn validate_matrix(w: &GossipMatrix) -> ValidationReport {
    let dev = |v: nalgebra::DVector<f64>| v.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let min_entry = if w.nnz() < w.n() * w.n() {
        w.entries().map(|(_, _, v)| v).fold(0.0, f64::min)
    } else {
        w.entries().map(|(_, _, v)| v).fold(f64::INFINITY, f64::min)
    };
    let symmetry_defect = w
        .entries()
        .map(|(i, j, v)| (v - w.get(j, i)).abs())
        .fold(0.0, f64::max);
    let mut degree_histogram = BTreeMap::new();
    for d in w.out_degrees() {
        *degree_histogram.entry(d).or_insert(0) += 1;
    }
    ValidationReport {
        n: w.n(),
        max_row_sum_deviation: dev(w.row_sums()),
        max_col_sum_deviation: dev(w.col_sums()),
        min_entry,
        symmetry_defect,
        degree_histogram,
        max_in_degree: w.in_degrees().into_iter().max().unwrap_or(0),
    }
}
