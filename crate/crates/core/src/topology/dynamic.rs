//! One-peer samplers: OD-EquiDyn, OU-EquiDyn (scan, node and Euclidean
//! constructions) and the one-peer exponential baseline.

use rand::Rng as _;

use super::{basis_matrix, BasisIndex, Family, GossipMatrix};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DynKind {
    OdEquiDyn,
    OuEquiDyn,
    OuEquiDynEuclid,
    OnePeerExp,
}

impl DynKind {
    pub fn family(self) -> Family {
        match self {
            DynKind::OdEquiDyn => Family::OdEquiDyn,
            DynKind::OuEquiDyn => Family::OuEquiDyn,
            DynKind::OuEquiDynEuclid => Family::OuEquiDynEuclid,
            DynKind::OnePeerExp => Family::OnePeerExp,
        }
    }
}

/// Per-iteration generator of one-peer mixing matrices.
///
/// The emitted sequence is a pure function of the basis index, `eta` and
/// the initial RNG state.
#[derive(Debug, Clone)]
pub struct DynSampler {
    kind: DynKind,
    basis: BasisIndex,
    /// Values drawn from: the basis for OD, the signed basis for OU.
    support: Vec<usize>,
    eta: f64,
    rng: Rng,
    iteration: u64,
    last: Option<(usize, usize)>,
    current: Option<GossipMatrix>,
}

impl DynSampler {
    pub fn new(kind: DynKind, basis: BasisIndex, eta: f64, rng: Rng) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::param("basis", "the basis index is empty"));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::param("eta", format!("must lie in (0, 1), got {eta}")));
        }
        let support = match kind {
            DynKind::OuEquiDyn | DynKind::OuEquiDynEuclid => basis.signed().values().to_vec(),
            DynKind::OdEquiDyn | DynKind::OnePeerExp => basis.values().to_vec(),
        };
        Ok(Self {
            kind,
            basis,
            support,
            eta,
            rng,
            iteration: 0,
            last: None,
            current: None,
        })
    }

    /// One-peer exponential graph: at iteration `t` node `i` averages with
    /// node `i + 2^(t mod τ)`, `τ = ⌊log2(n-1)⌋ + 1`, with weight 1/2.
    pub fn one_peer_exponential(n: usize, rng: Rng) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("n", "must be at least 2"));
        }
        let hops = exponential_hops(n);
        Self::new(DynKind::OnePeerExp, BasisIndex::new(n, hops)?, 0.5, rng)
    }

    pub fn kind(&self) -> DynKind {
        self.kind
    }

    pub fn family(&self) -> Family {
        self.kind.family()
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// The unsigned basis index the sampler was built from.
    pub fn basis(&self) -> &BasisIndex {
        &self.basis
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// `(v, s)` of the most recent draw; `s` is a 1-based start label and
    /// is 0 for the directed and exponential samplers.
    pub fn last_draw(&self) -> Option<(usize, usize)> {
        self.last
    }

    /// Draws the next matrix and advances the sampler.
    pub fn sample(&mut self) -> &GossipMatrix {
        let n = self.n();
        let w = match self.kind {
            DynKind::OdEquiDyn => {
                let v = self.support[self.rng.random_range(0..self.support.len())];
                self.last = Some((v, 0));
                od_matrix(v, n, self.eta)
            }
            DynKind::OuEquiDyn | DynKind::OuEquiDynEuclid => {
                let v = self.support[self.rng.random_range(0..self.support.len())];
                let s = self.rng.random_range(1..=n);
                self.last = Some((v, s));
                let partners = if self.kind == DynKind::OuEquiDyn {
                    ou_scan_partners(v, s, n)
                } else {
                    ou_euclid_partners(v, s, n)
                };
                one_peer_matrix(&partners, self.eta, self.kind.family())
            }
            DynKind::OnePeerExp => {
                let hop = self.support[(self.iteration % self.support.len() as u64) as usize];
                self.last = Some((hop, 0));
                exponential_one_peer_matrix(hop, n)
            }
        };
        self.iteration += 1;
        self.current.insert(w)
    }
}

/// Hops `2^k` for `k = 0..=⌊log2(n-1)⌋`.
pub(crate) fn exponential_hops(n: usize) -> Vec<usize> {
    let mut hops = Vec::new();
    let mut h = 1;
    while h < n {
        hops.push(h);
        h *= 2;
    }
    hops
}

fn exponential_one_peer_matrix(hop: usize, n: usize) -> GossipMatrix {
    let trip = (0..n).flat_map(|i| [(i, i, 0.5), (i, (i + hop) % n, 0.5)]);
    GossipMatrix::from_triplets(n, trip, Family::OnePeerExp).expect("indices are in range")
}

/// `(1-η)I + η A^(v)`.
fn od_matrix(v: usize, n: usize, eta: f64) -> GossipMatrix {
    let a = basis_matrix(v, n).expect("v drawn from a validated basis");
    lazy(&a, eta, Family::OdEquiDyn)
}

/// `(1-η)I + η A`.
pub(crate) fn lazy(a: &GossipMatrix, eta: f64, family: Family) -> GossipMatrix {
    let trip = a
        .entries()
        .map(|(i, j, w)| (i, j, if i == j { (1.0 - eta) + eta * w } else { eta * w }));
    let out = GossipMatrix::from_triplets(a.n(), trip, family).expect("same shape");
    match a.basis_index() {
        Some(b) => out.with_basis(b.clone()),
        None => out,
    }
}

/// Symmetric one-peer matrix `(1-η)I + ηA` where `A` pairs `i` with
/// `partners[i]` at weight `(n-1)/n`, matched diagonals `1/n`, idle diagonals 1.
pub fn one_peer_matrix(partners: &[Option<usize>], eta: f64, family: Family) -> GossipMatrix {
    let n = partners.len();
    let off = eta * ((n - 1) as f64 / n as f64);
    let diag = (1.0 - eta) + eta * (1.0 / n as f64);
    let mut trip = Vec::with_capacity(2 * n);
    for (i, p) in partners.iter().enumerate() {
        match *p {
            Some(j) => {
                trip.push((i, i, diag));
                trip.push((i, j, off));
            }
            None => trip.push((i, i, 1.0)),
        }
    }
    GossipMatrix::from_triplets(n, trip, family).expect("partners are in range")
}

/// The un-lazy matching matrix `A` for a partner vector.
fn matching_matrix(partners: &[Option<usize>], family: Family) -> GossipMatrix {
    let n = partners.len();
    let off = (n - 1) as f64 / n as f64;
    let diag = 1.0 / n as f64;
    let trip = partners.iter().enumerate().flat_map(|(i, p)| match *p {
        Some(j) => vec![(i, i, diag), (i, j, off)],
        None => vec![(i, i, 1.0)],
    });
    GossipMatrix::from_triplets(n, trip, family).expect("partners are in range")
}

fn check_draw(v: usize, s: usize, n: usize) {
    assert!(n >= 2, "n must be at least 2");
    assert!((1..n).contains(&v), "v = {v} outside [1, {}]", n - 1);
    assert!((1..=n).contains(&s), "s = {s} outside [1, {n}]");
}

/// Greedy scan: visit `j = s, s+1, ..., s+n-1` (mod n) and pair `j` with
/// `j + v` whenever both are still free. `s` is a 1-based label; the
/// returned partners are 0-based.
pub fn ou_scan_partners(v: usize, s: usize, n: usize) -> Vec<Option<usize>> {
    check_draw(v, s, n);
    let mut partner = vec![None; n];
    let start = s - 1;
    for step in 0..n {
        let j = (start + step) % n;
        let i = (j + v) % n;
        if partner[i].is_none() && partner[j].is_none() {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
    }
    partner
}

/// Node-local computation of the same pairing as [`ou_scan_partners`]:
/// each node derives its partner from `(v, s)` alone.
pub fn ou_node_partners(v: usize, s: usize, n: usize) -> Vec<Option<usize>> {
    check_draw(v, s, n);
    let start = s - 1;
    let (q, shift) = if 2 * v <= n { (v, 0) } else { (n - v, n - v) };
    (0..n)
        .map(|i| {
            let k = (i + n - start + shift) % n;
            let r = k % q;
            let d = k / q;
            let last = (n - 1 - r) / q;
            if last % 2 == 1 || d < last {
                Some(if d.is_multiple_of(2) { (i + q) % n } else { (i + n - q) % n })
            } else {
                None
            }
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `b` in `[1, m-1]` with `a·b ≡ 1 (mod m)`, for coprime `a`, `m ≥ 2`.
fn mod_inverse(a: usize, m: usize) -> usize {
    // Extended Euclid on (a, m), tracking only the coefficient of a.
    let (mut r0, mut r1) = (m as i64, (a % m) as i64);
    let (mut t0, mut t1) = (0i64, 1i64);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    debug_assert_eq!(r0, 1, "arguments must be coprime");
    t0.rem_euclid(m as i64) as usize
}

/// Pairing built from the Bézout coefficient of `v` and `n`: nodes are split
/// into `d = gcd(v, n)` cycles of step `v`, and consecutive cycle positions
/// `(0,1), (2,3), ...` are paired.
pub fn ou_euclid_partners(v: usize, s: usize, n: usize) -> Vec<Option<usize>> {
    check_draw(v, s, n);
    let d = gcd(v, n);
    let cycle = n / d;
    let b = mod_inverse(v / d, cycle) as i64;
    let start = (s - 1) as i64;
    (0..n)
        .map(|i| {
            let offset = (i as i64 - start).div_euclid(d as i64);
            let m = (offset * b).rem_euclid(cycle as i64) as usize;
            if cycle.is_multiple_of(2) || m < cycle - 1 {
                Some(if m.is_multiple_of(2) { (i + v) % n } else { (i + n - v) % n })
            } else {
                None
            }
        })
        .collect()
}

/// Matching matrix `A` produced by the greedy scan for `(v, s)`.
pub fn ou_scan_matrix(v: usize, s: usize, n: usize) -> GossipMatrix {
    matching_matrix(&ou_scan_partners(v, s, n), Family::OuEquiDyn)
}

/// Matching matrix `A` computed node by node for `(v, s)`.
pub fn ou_equidyn_node_view(v: usize, s: usize, n: usize) -> GossipMatrix {
    matching_matrix(&ou_node_partners(v, s, n), Family::OuEquiDyn)
}

/// Matching matrix `A` of the Euclidean construction for `(v, s)`.
pub fn ou_equidyn_euclid(v: usize, s: usize, n: usize) -> GossipMatrix {
    matching_matrix(&ou_euclid_partners(v, s, n), Family::OuEquiDynEuclid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn pairs(partners: &[Option<usize>]) -> Vec<(usize, usize)> {
        // 1-based, each pair once.
        let mut out: Vec<_> = partners
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.filter(|&j| i < j).map(|j| (i + 1, j + 1)))
            .collect();
        out.sort();
        out
    }

    #[test]
    fn scan_n6_v2_s1_leaves_5_and_6_idle() {
        let p = ou_scan_partners(2, 1, 6);
        assert_eq!(pairs(&p), vec![(1, 3), (2, 4)]);
        assert_eq!(p[4], None);
        assert_eq!(p[5], None);
    }

    #[test]
    fn scan_n6_v2_s3_connects_3_5_and_4_6() {
        let p = ou_scan_partners(2, 3, 6);
        assert_eq!(pairs(&p), vec![(3, 5), (4, 6)]);
        assert_eq!(p[0], None);
        assert_eq!(p[1], None);
    }

    #[test]
    fn scan_half_shift_is_perfect_matching_for_every_start() {
        for s in 1..=6 {
            assert_eq!(pairs(&ou_scan_partners(3, s, 6)), vec![(1, 4), (2, 5), (3, 6)]);
        }
    }

    #[test]
    fn node_view_matches_scan_reference_case() {
        assert_eq!(ou_node_partners(2, 1, 6), ou_scan_partners(2, 1, 6));
    }

    #[test]
    fn node_view_half_shift_pairs_antipodes() {
        for n in (2..=16).step_by(2) {
            for s in 1..=n {
                let p = ou_node_partners(n / 2, s, n);
                for (i, j) in p.iter().enumerate() {
                    assert_eq!(*j, Some((i + n / 2) % n));
                }
            }
        }
    }

    #[test]
    fn euclid_matches_count_formula_and_is_symmetric() {
        for n in 2..=14 {
            for v in 1..n {
                let d = gcd(v, n);
                for s in 1..=n {
                    let p = ou_euclid_partners(v, s, n);
                    let matched = p.iter().filter(|x| x.is_some()).count();
                    assert_eq!(matched, 2 * d * (n / (2 * d)), "n={n} v={v} s={s}");
                    for (i, j) in p.iter().enumerate() {
                        if let Some(j) = j {
                            assert_eq!(p[*j], Some(i));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mod_inverse_small_cases() {
        assert_eq!(mod_inverse(3, 7), 5);
        assert_eq!(mod_inverse(1, 2), 1);
        assert_eq!(mod_inverse(5, 12), 5);
    }

    #[test]
    fn od_sample_with_half_eta() {
        let n = 8;
        let basis = BasisIndex::new(n, vec![3]).unwrap();
        let mut s = DynSampler::new(DynKind::OdEquiDyn, basis, 0.5, seed::rng(1)).unwrap();
        let w = s.sample().clone();
        for j in 0..n {
            assert!((w.get(j, j) - (0.5 + 0.5 / n as f64)).abs() < 1e-15);
            assert!((w.get((j + 3) % n, j) - 0.5 * (n - 1) as f64 / n as f64).abs() < 1e-15);
        }
        assert_eq!(w.out_degrees(), vec![1; n]);
        assert_eq!(s.iteration(), 1);
    }

    #[test]
    fn empty_basis_is_rejected() {
        let basis = BasisIndex::new(5, vec![]).unwrap();
        assert!(DynSampler::new(DynKind::OdEquiDyn, basis, 0.5, seed::rng(0)).is_err());
    }

    #[test]
    fn one_peer_exponential_cycles_hops() {
        let mut s = DynSampler::one_peer_exponential(10, seed::rng(0)).unwrap();
        let hops: Vec<_> = (0..9)
            .map(|_| {
                s.sample();
                s.last_draw().unwrap().0
            })
            .collect();
        assert_eq!(hops, vec![1, 2, 4, 8, 1, 2, 4, 8, 1]);
    }

    #[test]
    fn sampler_sequence_is_reproducible() {
        let basis = BasisIndex::new(11, vec![1, 4, 4, 9]).unwrap();
        let run = || {
            let mut s =
                DynSampler::new(DynKind::OuEquiDyn, basis.clone(), 0.4, seed::rng(99)).unwrap();
            (0..20).map(|_| s.sample().clone()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
