//! Gossip topologies: the EquiTopo constructions and the classical baselines.
//!
//! Nodes are indexed from 0 internally. The 1-based modular labelling used in
//! the literature (`mod_n`) is exposed for display and for boundary checks.

mod baseline;
mod basis;
mod dynamic;
mod equistatic;
mod matrix;

use std::fmt;
use std::str::FromStr;

pub use baseline::build_baseline;
pub use basis::{basis_matrix, BasisIndex};
pub use dynamic::{
    one_peer_matrix, ou_equidyn_euclid, ou_equidyn_node_view, ou_euclid_partners, ou_node_partners,
    ou_scan_matrix, ou_scan_partners, DynKind, DynSampler,
};
pub use equistatic::{build_d_equistatic, build_u_equistatic, derived_basis_count, MAX_ATTEMPTS};
pub use matrix::GossipMatrix;

use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// The 1-based modular reduction: returns `n` when `i` is a multiple of `n`,
/// otherwise the residue in `[1, n-1]`.
pub fn mod_n(i: i64, n: i64) -> i64 {
    assert!(n >= 1, "mod_n requires n >= 1");
    let r = i.rem_euclid(n);
    if r == 0 {
        n
    } else {
        r
    }
}

/// Topology family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    DEquiStatic,
    UEquiStatic,
    OdEquiDyn,
    OuEquiDyn,
    OuEquiDynEuclid,
    Ring,
    Grid,
    Torus,
    Hypercube,
    StaticExp,
    OnePeerExp,
    Complete,
    /// A single basis matrix `A^(u)`.
    Basis,
    /// Anything assembled by hand or loaded from disk.
    Custom,
}

impl Family {
    pub const BUILDABLE: [Family; 12] = [
        Family::DEquiStatic,
        Family::UEquiStatic,
        Family::OdEquiDyn,
        Family::OuEquiDyn,
        Family::OuEquiDynEuclid,
        Family::Ring,
        Family::Grid,
        Family::Torus,
        Family::Hypercube,
        Family::StaticExp,
        Family::OnePeerExp,
        Family::Complete,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::DEquiStatic => "d-equistatic",
            Family::UEquiStatic => "u-equistatic",
            Family::OdEquiDyn => "od-equidyn",
            Family::OuEquiDyn => "ou-equidyn",
            Family::OuEquiDynEuclid => "ou-equidyn-euclid",
            Family::Ring => "ring",
            Family::Grid => "grid",
            Family::Torus => "torus",
            Family::Hypercube => "hypercube",
            Family::StaticExp => "static-exp",
            Family::OnePeerExp => "one-peer-exp",
            Family::Complete => "complete",
            Family::Basis => "basis",
            Family::Custom => "custom",
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(
            self,
            Family::OdEquiDyn | Family::OuEquiDyn | Family::OuEquiDynEuclid | Family::OnePeerExp
        )
    }

    /// Families whose construction samples an EquiTopo basis index.
    pub fn uses_basis(self) -> bool {
        matches!(
            self,
            Family::DEquiStatic
                | Family::UEquiStatic
                | Family::OdEquiDyn
                | Family::OuEquiDyn
                | Family::OuEquiDynEuclid
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::BUILDABLE
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Family::BUILDABLE.iter().map(|f| f.as_str()).collect();
                Error::param("family", format!("unknown family `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Declarative description of a topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySpec {
    pub family: Family,
    pub n: usize,
    /// Target consensus factor for the basis-sampling loop.
    pub rho: f64,
    /// Failure probability used to derive `m`.
    pub p: f64,
    /// Basis count. `None` derives it from `rho`, `p` and `n`.
    pub m: Option<usize>,
    /// Lazy-mixing weight for the one-peer samplers.
    pub eta: f64,
    /// Use the complete basis `{1, ..., n-1}` instead of sampling one.
    pub complete_basis: bool,
    pub seed: u64,
}

impl TopologySpec {
    pub const DEFAULT_RHO: f64 = 0.5;
    pub const DEFAULT_P: f64 = 0.5;
    pub const DEFAULT_ETA: f64 = 0.5;

    pub fn new(family: Family, n: usize) -> Self {
        Self {
            family,
            n,
            rho: Self::DEFAULT_RHO,
            p: Self::DEFAULT_P,
            m: None,
            eta: Self::DEFAULT_ETA,
            complete_basis: false,
            seed: 0,
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = Some(m);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_complete_basis(mut self, yes: bool) -> Self {
        self.complete_basis = yes;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::param("n", format!("must be at least 2, got {}", self.n)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::param("rho", format!("must lie in (0, 1), got {}", self.rho)));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::param("p", format!("must lie in (0, 1), got {}", self.p)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param("eta", format!("must lie in (0, 1), got {}", self.eta)));
        }
        if self.m == Some(0) {
            return Err(Error::param("m", "must be at least 1"));
        }
        Ok(())
    }

    /// The basis count used by the EquiTopo constructions.
    pub fn basis_count(&self) -> usize {
        if self.complete_basis {
            return self.n - 1;
        }
        self.m
            .unwrap_or_else(|| derived_basis_count(self.n, self.rho, self.p))
    }
}

/// A static matrix or a per-iteration sampler.
// Built once per run, so the sampler's inline size is not worth a box.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum Topology {
    Static(GossipMatrix),
    Dynamic(DynSampler),
}

impl Topology {
    /// Builds the topology described by `spec`.
    pub fn build(spec: &TopologySpec) -> Result<Self> {
        spec.validate()?;
        let mut construct = seed::derived_rng(spec.seed, stream::CONSTRUCT, 0);
        match spec.family {
            Family::DEquiStatic => {
                let (w, _) = build_d_equistatic(spec, &mut construct)?;
                Ok(Topology::Static(w))
            }
            Family::UEquiStatic => {
                let (w, _) = build_d_equistatic(spec, &mut construct)?;
                let (u, _) = build_u_equistatic(&w);
                Ok(Topology::Static(u))
            }
            Family::OdEquiDyn | Family::OuEquiDyn | Family::OuEquiDynEuclid => {
                let basis = if spec.complete_basis {
                    BasisIndex::complete(spec.n)
                } else {
                    let (_, b) = build_d_equistatic(spec, &mut construct)?;
                    b
                };
                let kind = match spec.family {
                    Family::OdEquiDyn => DynKind::OdEquiDyn,
                    Family::OuEquiDyn => DynKind::OuEquiDyn,
                    _ => DynKind::OuEquiDynEuclid,
                };
                let rng = seed::derived_rng(spec.seed, stream::SAMPLER, 0);
                Ok(Topology::Dynamic(DynSampler::new(kind, basis, spec.eta, rng)?))
            }
            Family::Basis | Family::Custom => Err(Error::param(
                "family",
                format!("`{}` cannot be built from a spec", spec.family),
            )),
            _ => build_baseline(spec),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Topology::Static(w) => w.n(),
            Topology::Dynamic(s) => s.n(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Topology::Static(w) => w.family(),
            Topology::Dynamic(s) => s.family(),
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self, Topology::Dynamic(_))
    }

    /// The matrix to use for the next iteration.
    pub fn advance(&mut self) -> &GossipMatrix {
        match self {
            Topology::Static(w) => w,
            Topology::Dynamic(s) => s.sample(),
        }
    }

    /// Basis index behind the topology, if any.
    pub fn basis_index(&self) -> Option<&BasisIndex> {
        match self {
            Topology::Static(w) => w.basis_index(),
            Topology::Dynamic(s) => Some(s.basis()),
        }
    }
}
