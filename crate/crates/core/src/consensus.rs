//! Gossip averaging `x ← W^(t) x` and decay-rate measurements.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::topology::{Family, Topology, TopologySpec};

/// Residuals below this are treated as floating-point floor and excluded
/// from slope fits.
pub const RESIDUAL_FLOOR: f64 = 1e-13;

/// First iteration used by the slope fit.
pub const FIT_START: usize = 2;

/// Residual history of one gossip run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusTrace {
    pub family: Family,
    pub n: usize,
    pub trial: usize,
    /// `‖x^(t) - x̄^(0)·1‖` for `t = 0..=iters`.
    pub residuals: Vec<f64>,
    /// Largest `|x̄^(t) - x̄^(0)|` observed.
    pub max_mean_drift: f64,
}

impl ConsensusTrace {
    /// `(iteration, residual)` pairs.
    pub fn records(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.residuals.iter().copied().enumerate()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn residual(x: &[f64], avg: f64) -> f64 {
    x.iter().map(|v| (v - avg).powi(2)).sum::<f64>().sqrt()
}

/// Runs `iters` gossip steps from `x0`.
pub fn gossip_run(
    topology: &mut Topology,
    x0: &[f64],
    iters: usize,
    trial: usize,
) -> Result<ConsensusTrace> {
    let n = topology.n();
    if x0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x0.len(),
        });
    }
    if iters == 0 {
        return Err(Error::param("iters", "must be at least 1"));
    }
    if let Some(k) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            iteration: 0,
            what: format!("x0[{k}]"),
        });
    }
    let avg0 = mean(x0);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut residuals = Vec::with_capacity(iters + 1);
    residuals.push(residual(&x, avg0));
    let mut max_mean_drift: f64 = 0.0;
    for t in 1..=iters {
        topology.advance().mul_vec_into(&x, &mut next);
        std::mem::swap(&mut x, &mut next);
        let r = residual(&x, avg0);
        if !r.is_finite() {
            return Err(Error::NonFinite {
                iteration: t,
                what: "gossip residual".into(),
            });
        }
        max_mean_drift = max_mean_drift.max((mean(&x) - avg0).abs());
        residuals.push(r);
    }
    Ok(ConsensusTrace {
        family: topology.family(),
        n,
        trial,
        residuals,
        max_mean_drift,
    })
}

/// Standard normal start vector.
pub fn random_start<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Least-squares slope of the trial-averaged log residual over
/// `t ∈ [FIT_START, T]`, stopping before the first iteration at which any
/// trial falls below [`RESIDUAL_FLOOR`].
///
/// Returns `-∞` when the floor is reached before two points are available,
/// and `NaN` when the run is simply too short.
pub fn decay_slope(traces: &[ConsensusTrace]) -> f64 {
    if traces.is_empty() {
        return f64::NAN;
    }
    let len = traces.iter().map(|t| t.residuals.len()).min().unwrap_or(0);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    let mut floored = false;
    for t in 0..len {
        if traces.iter().any(|tr| tr.residuals[t] < RESIDUAL_FLOOR) {
            floored = true;
            break;
        }
        if t >= FIT_START {
            let y = traces.iter().map(|tr| tr.residuals[t].ln()).sum::<f64>() / traces.len() as f64;
            pts.push((t as f64, y));
        }
    }
    if pts.len() < 2 {
        return if floored { f64::NEG_INFINITY } else { f64::NAN };
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone)]
pub struct SizeDecay {
    pub n: usize,
    /// Fitted slope of the mean log residual per iteration.
    pub slope: f64,
    /// `exp(slope)`: the fitted per-iteration decay factor.
    pub decay_factor: f64,
    pub traces: Vec<ConsensusTrace>,
    /// Basis count of each trial's topology, when it has one.
    pub basis_counts: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct SizeSweep {
    pub sizes: Vec<SizeDecay>,
}

impl SizeSweep {
    fn spread(values: impl Iterator<Item = f64>) -> f64 {
        let v: Vec<f64> = values.collect();
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    /// `max - min` of the fitted decay factors across sizes.
    pub fn factor_spread(&self) -> f64 {
        Self::spread(self.sizes.iter().map(|s| s.decay_factor))
    }

    /// `max - min` of the fitted slopes across sizes.
    pub fn slope_spread(&self) -> f64 {
        Self::spread(self.sizes.iter().map(|s| s.slope))
    }
}

/// Seed of trial `trial` at size `n` under `master`.
pub fn trial_seed(master: u64, n: usize, trial: usize) -> u64 {
    seed::derive(seed::derive(master, stream::SIZE, n as u64), stream::TRIAL, trial as u64)
}

/// For every size, builds `trials` independent topologies via `spec_for`,
/// gossips from a fresh standard normal vector on each, and fits the decay
/// slope of the averaged log residual.
///
/// `spec_for(n, seed)` must return the topology spec for size `n` with the
/// given construction seed.
pub fn size_independence_experiment<F>(
    spec_for: F,
    sizes: &[usize],
    iters: usize,
    trials: usize,
    master_seed: u64,
) -> Result<SizeSweep>
where
    F: Fn(usize, u64) -> TopologySpec,
{
    if sizes.len() < 2 {
        return Err(Error::param("sizes", "need at least two sizes"));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut traces = Vec::with_capacity(trials);
        let mut basis_counts = Vec::with_capacity(trials);
        for trial in 0..trials {
            let seed = trial_seed(master_seed, n, trial);
            let spec = spec_for(n, seed);
            let mut topo = Topology::build(&spec)?;
            basis_counts.push(topo.basis_index().map(|b| b.len()));
            let x0 = random_start(n, &mut seed::derived_rng(seed, stream::INIT, 0));
            traces.push(gossip_run(&mut topo, &x0, iters, trial)?);
        }
        let slope = decay_slope(&traces);
        out.push(SizeDecay {
            n,
            slope,
            decay_factor: slope.exp(),
            traces,
            basis_counts,
        });
    }
    Ok(SizeSweep { sizes: out })
}
