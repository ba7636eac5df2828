use std::collections::BTreeSet;

use super::dynamic::exponential_hops;
use super::{DynSampler, Family, GossipMatrix, Topology, TopologySpec};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Classical topologies.
///
/// Undirected families use Metropolis–Hastings weights
/// `w_ij = 1/(max(deg_i, deg_j) + 1)`, which reduce to the uniform
/// `1/(deg + 1)` on regular graphs (ring, torus, hypercube) and keep the
/// non-regular grid doubly stochastic.
pub fn build_baseline(spec: &TopologySpec) -> Result<Topology> {
    let n = spec.n;
    if n < 2 {
        return Err(Error::param("n", format!("must be at least 2, got {n}")));
    }
    let w = match spec.family {
        Family::Ring => metropolis(n, &ring_neighbors(n), Family::Ring),
        Family::Grid => {
            let side = square_side(n, "grid")?;
            metropolis(n, &grid_neighbors(side, false), Family::Grid)
        }
        Family::Torus => {
            let side = square_side(n, "torus")?;
            metropolis(n, &grid_neighbors(side, true), Family::Torus)
        }
        Family::Hypercube => {
            if !n.is_power_of_two() {
                return Err(Error::param(
                    "n",
                    format!("hypercube needs a power of two, got {n}"),
                ));
            }
            let bits = n.trailing_zeros();
            let nbrs = (0..n)
                .map(|i| (0..bits).map(|b| i ^ (1 << b)).collect())
                .collect::<Vec<BTreeSet<_>>>();
            metropolis(n, &nbrs, Family::Hypercube)
        }
        Family::StaticExp => static_exponential(n),
        Family::Complete => GossipMatrix::averaging(n),
        Family::OnePeerExp => {
            let rng = seed::derived_rng(spec.seed, stream::SAMPLER, 0);
            return Ok(Topology::Dynamic(DynSampler::one_peer_exponential(n, rng)?));
        }
        other => {
            return Err(Error::param(
                "family",
                format!("`{other}` is not a baseline family"),
            ))
        }
    };
    Ok(Topology::Static(w))
}

fn square_side(n: usize, what: &str) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::param(
            "n",
            format!("{what} needs a perfect square, got {n}"),
        ));
    }
    Ok(side)
}

fn ring_neighbors(n: usize) -> Vec<BTreeSet<usize>> {
    (0..n)
        .map(|i| [(i + 1) % n, (i + n - 1) % n].into_iter().collect())
        .collect()
}

fn grid_neighbors(side: usize, wrap: bool) -> Vec<BTreeSet<usize>> {
    let idx = |r: usize, c: usize| r * side + c;
    let mut out = vec![BTreeSet::new(); side * side];
    for r in 0..side {
        for c in 0..side {
            let me = idx(r, c);
            let mut link = |other: usize| {
                if other != me {
                    out[me].insert(other);
                }
            };
            if wrap {
                link(idx((r + 1) % side, c));
                link(idx((r + side - 1) % side, c));
                link(idx(r, (c + 1) % side));
                link(idx(r, (c + side - 1) % side));
            } else {
                if r + 1 < side {
                    link(idx(r + 1, c));
                }
                if r > 0 {
                    link(idx(r - 1, c));
                }
                if c + 1 < side {
                    link(idx(r, c + 1));
                }
                if c > 0 {
                    link(idx(r, c - 1));
                }
            }
        }
    }
    out
}

fn metropolis(n: usize, nbrs: &[BTreeSet<usize>], family: Family) -> GossipMatrix {
    let mut trip = Vec::new();
    for i in 0..n {
        let mut off_sum = 0.0;
        for &j in &nbrs[i] {
            let w = 1.0 / (nbrs[i].len().max(nbrs[j].len()) + 1) as f64;
            off_sum += w;
            trip.push((i, j, w));
        }
        trip.push((i, i, 1.0 - off_sum));
    }
    GossipMatrix::from_triplets(n, trip, family).expect("indices are in range")
}

/// Node `i` sends to `i + 2^k` for every hop `2^k < n`, uniform weights.
fn static_exponential(n: usize) -> GossipMatrix {
    let hops = exponential_hops(n);
    let w = 1.0 / (hops.len() + 1) as f64;
    let trip = (0..n).flat_map(|j| {
        std::iter::once((j, j, w)).chain(hops.iter().map(move |&h| ((j + h) % n, j, w)))
    });
    GossipMatrix::from_triplets(n, trip.collect::<Vec<_>>(), Family::StaticExp)
        .expect("indices are in range")
}
