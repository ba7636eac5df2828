use rand::Rng;

use super::{BasisIndex, Family, GossipMatrix, TopologySpec};
use crate::error::{Error, Result};
use crate::spectral::{consensus_factor, DEFAULT_TOL};

/// Resampling attempts before static construction gives up.
pub const MAX_ATTEMPTS: usize = 50;

/// `ceil((8 / (3 rho^2)) ln(2n / p))`, the basis count that makes a single
/// draw succeed with probability at least `1 - p`.
pub fn derived_basis_count(n: usize, rho: f64, p: f64) -> usize {
    let m = (8.0 / (3.0 * rho * rho)) * (2.0 * n as f64 / p).ln();
    (m.ceil() as usize).max(1)
}

/// `(1/M) Σ A^(u_i)` for the given basis index.
pub(crate) fn average_of_basis(basis: &BasisIndex) -> GossipMatrix {
    let n = basis.n();
    let m = basis.len() as f64;
    let counts = basis.counts();
    let diag = 1.0 / n as f64;
    let scale = (n - 1) as f64 / (n as f64 * m);
    let mut trip = Vec::with_capacity(n * (basis.len() + 1));
    for j in 0..n {
        trip.push((j, j, diag));
        for (u, &c) in counts.iter().enumerate().skip(1) {
            if c > 0 {
                trip.push(((j + u) % n, j, c as f64 * scale));
            }
        }
    }
    GossipMatrix::from_triplets(n, trip, Family::DEquiStatic)
        .expect("indices are in range")
        .with_basis(basis.clone())
}

/// Samples basis indices until `‖ΠW‖₂ ≤ rho`.
///
/// With `spec.complete_basis` the basis is `{1, ..., n-1}` and `W = J`.
pub fn build_d_equistatic<R: Rng + ?Sized>(
    spec: &TopologySpec,
    rng: &mut R,
) -> Result<(GossipMatrix, BasisIndex)> {
    spec.validate()?;
    let n = spec.n;
    if spec.complete_basis {
        let basis = BasisIndex::complete(n);
        return Ok((average_of_basis(&basis), basis));
    }
    let m = spec.basis_count();
    let mut best: Option<(f64, BasisIndex)> = None;
    for _ in 0..MAX_ATTEMPTS {
        let values = (0..m).map(|_| rng.random_range(1..n)).collect();
        let basis = BasisIndex::new(n, values)?;
        let w = average_of_basis(&basis);
        let factor = consensus_factor(&w, DEFAULT_TOL).value;
        if factor <= spec.rho {
            return Ok((w, basis));
        }
        if best.as_ref().is_none_or(|(f, _)| factor < *f) {
            best = Some((factor, basis));
        }
    }
    let (best_factor, basis) = best.expect("at least one attempt");
    Err(Error::ConstructionFailed {
        attempts: MAX_ATTEMPTS,
        target: spec.rho,
        best_factor,
        best_basis: basis.values().to_vec(),
    })
}

/// `(W + Wᵀ)/2`, with the signed basis index `{u_i, -u_i}` when `w` carries one.
pub fn build_u_equistatic(w: &GossipMatrix) -> (GossipMatrix, Option<BasisIndex>) {
    let n = w.n();
    let trip = w
        .entries()
        .flat_map(|(i, j, v)| [(i, j, 0.5 * v), (j, i, 0.5 * v)]);
    let mut sym = GossipMatrix::from_triplets(n, trip, Family::UEquiStatic)
        .expect("indices are in range");
    let signed = w.basis_index().map(BasisIndex::signed);
    if let Some(b) = &signed {
        sym = sym.with_basis(b.clone());
    }
    (sym, signed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn complete_basis_gives_exact_averaging() {
        for n in [2, 3, 7, 16] {
            let w = average_of_basis(&BasisIndex::complete(n));
            for i in 0..n {
                for j in 0..n {
                    assert!((w.get(i, j) - 1.0 / n as f64).abs() < 1e-15);
                }
            }
            assert!(consensus_factor(&w, DEFAULT_TOL).value < 1e-7);
        }
    }

    #[test]
    fn derived_count_reference() {
        // ceil(10.666.. * ln 1200) = ceil(75.63..)
        assert_eq!(derived_basis_count(300, 0.5, 0.5), 76);
    }

    #[test]
    fn construction_meets_target_and_degree_bound() {
        let spec = TopologySpec::new(Family::DEquiStatic, 60).with_m(12);
        let mut rng = seed::rng(11);
        let (w, basis) = build_d_equistatic(&spec, &mut rng).unwrap();
        assert_eq!(basis.len(), 12);
        assert!(consensus_factor(&w, DEFAULT_TOL).value <= 0.5);
        assert!(w.in_degrees().iter().all(|&d| d <= 12));
        assert!(w.out_degrees().iter().all(|&d| d <= 12));
    }

    #[test]
    fn impossible_target_reports_best_attempt() {
        // A single basis matrix has a factor close to 1, far above 0.1.
        let spec = TopologySpec::new(Family::DEquiStatic, 20).with_m(1).with_rho(0.1);
        let err = build_d_equistatic(&spec, &mut seed::rng(0)).unwrap_err();
        match err {
            Error::ConstructionFailed {
                attempts,
                best_factor,
                best_basis,
                ..
            } => {
                assert_eq!(attempts, MAX_ATTEMPTS);
                assert_eq!(best_basis.len(), 1);
                let a = crate::topology::basis_matrix(best_basis[0], 20).unwrap();
                let exact = consensus_factor(&a, DEFAULT_TOL).value;
                assert!((best_factor - exact).abs() < 1e-12);
                assert!(best_factor > 0.9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn symmetrization_is_exact_and_does_not_increase_factor() {
        let spec = TopologySpec::new(Family::DEquiStatic, 45).with_m(10);
        let (w, basis) = build_d_equistatic(&spec, &mut seed::rng(5)).unwrap();
        let (u, signed) = build_u_equistatic(&w);
        let d = u.to_dense();
        assert_eq!(d, d.transpose());
        assert_eq!(signed.unwrap().len(), 2 * basis.len());
        assert!(u.max_degree() <= 2 * basis.len());
        let fw = consensus_factor(&w, DEFAULT_TOL).value;
        let fu = consensus_factor(&u, DEFAULT_TOL).value;
        assert!(fu <= fw + 1e-9, "{fu} > {fw}");
    }

    #[test]
    fn symmetrized_averaging_is_averaging() {
        let (u, _) = build_u_equistatic(&GossipMatrix::averaging(5));
        assert!(u.entries().all(|(_, _, w)| (w - 0.2).abs() < 1e-16));
    }
}
