//! Gossip topologies with network-size-independent consensus rates, and the
//! decentralized optimization experiments that run over them.
//!
//! * [`topology`] builds the EquiTopo family (D/U-EquiStatic, OD/OU-EquiDyn)
//!   and classical baselines.
//! * [`spectral`] measures consensus factors, exactly or by Monte Carlo.
//! * [`consensus`] runs gossip averaging and fits decay rates.
//! * [`optim`] runs decentralized SGD and gradient tracking on synthetic
//!   least-squares and logistic problems.
//! * [`io`] writes the CSV traces and their metadata sidecars.

pub mod consensus;
pub mod error;
pub mod io;
pub mod optim;
pub mod seed;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};
pub use topology::{BasisIndex, DynSampler, Family, GossipMatrix, Topology, TopologySpec};
