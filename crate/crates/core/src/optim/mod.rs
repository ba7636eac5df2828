//! Decentralized SGD (`X ← W(X - γG)`) and gradient tracking
//! (`X ← W(X - γY)`, `Y ← WY + G_new - G_old`) over any topology.

mod problem;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::topology::{Family, GossipMatrix, Topology, TopologySpec};

pub use problem::{make_least_squares, make_logistic_ncvx, LabelRule, OptProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Dsgd,
    Dsgt,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dsgd => "dsgd",
            Algorithm::Dsgt => "dsgt",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dsgd" => Ok(Algorithm::Dsgd),
            "dsgt" => Ok(Algorithm::Dsgt),
            other => Err(Error::param("algo", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Step size as a function of the iteration counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `gamma0 / factor^⌊t / period⌋`.
    Staircase { gamma0: f64, factor: f64, period: usize },
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(g) => g,
            StepSchedule::Staircase {
                gamma0,
                factor,
                period,
            } => gamma0 / factor.powi((t / period) as i32),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::Constant(g) => check_gamma(g),
            StepSchedule::Staircase {
                gamma0,
                factor,
                period,
            } => {
                check_gamma(gamma0)?;
                if !(factor.is_finite() && factor >= 1.0) {
                    return Err(Error::param("decay", format!("must be at least 1, got {factor}")));
                }
                if period == 0 {
                    return Err(Error::param("decay_period", "must be at least 1"));
                }
                Ok(())
            }
        }
    }
}

fn check_gamma(g: f64) -> Result<()> {
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::param("gamma", format!("must be finite and non-negative, got {g}")));
    }
    Ok(())
}

/// Local models, and for tracking the tracker and the last gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    /// `n × d`, row `i` is node `i`'s model.
    pub x: DMatrix<f64>,
    pub y: Option<DMatrix<f64>>,
    pub g_prev: Option<DMatrix<f64>>,
    pub t: usize,
}

fn stochastic_grads<R: Rng + ?Sized>(
    problem: &OptProblem,
    x: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        let xi: DVector<f64> = x.row(i).transpose();
        g.set_row(i, &problem.stochastic_grad(i, &xi, rng).transpose());
    }
    g
}

fn check_shape(problem: &OptProblem, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != problem.n() {
        return Err(Error::Dimension {
            expected: problem.n(),
            got: x.nrows(),
        });
    }
    if x.ncols() != problem.d() {
        return Err(Error::Dimension {
            expected: problem.d(),
            got: x.ncols(),
        });
    }
    Ok(())
}

impl OptState {
    pub fn dsgd(problem: &OptProblem, x0: DMatrix<f64>) -> Result<Self> {
        check_shape(problem, &x0)?;
        Ok(Self {
            x: x0,
            y: None,
            g_prev: None,
            t: 0,
        })
    }

    /// Draws `G^(0)` at `x0` and sets `Y^(0) = G^(0)`.
    pub fn dsgt<R: Rng + ?Sized>(problem: &OptProblem, x0: DMatrix<f64>, rng: &mut R) -> Result<Self> {
        check_shape(problem, &x0)?;
        let g = stochastic_grads(problem, &x0, rng);
        Ok(Self {
            x: x0,
            y: Some(g.clone()),
            g_prev: Some(g),
            t: 0,
        })
    }

    pub fn new<R: Rng + ?Sized>(
        algo: Algorithm,
        problem: &OptProblem,
        x0: DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        match algo {
            Algorithm::Dsgd => Self::dsgd(problem, x0),
            Algorithm::Dsgt => Self::dsgt(problem, x0, rng),
        }
    }

    /// Row average `x̄`.
    pub fn mean(&self) -> DVector<f64> {
        self.x.row_mean().transpose()
    }

    /// `‖X - 1x̄ᵀ‖_F`.
    pub fn consensus_residual(&self) -> f64 {
        let m = self.x.row_mean();
        let mut s = 0.0;
        for i in 0..self.x.nrows() {
            s += (self.x.row(i) - &m).norm_squared();
        }
        s.sqrt()
    }

    /// Worst relative gap between the column sums of `Y` and of the latest
    /// gradients, normalised by the summed magnitudes of those gradients.
    pub fn tracking_defect(&self) -> Option<f64> {
        let (y, g) = (self.y.as_ref()?, self.g_prev.as_ref()?);
        let mut worst: f64 = 0.0;
        for c in 0..y.ncols() {
            let gap = (y.column(c).sum() - g.column(c).sum()).abs();
            let scale = g.column(c).abs().sum().max(f64::MIN_POSITIVE);
            worst = worst.max(gap / scale);
        }
        Some(worst)
    }

    fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
            && self.y.as_ref().is_none_or(|y| y.iter().all(|v| v.is_finite()))
    }
}

fn check_step(state: &OptState, w: &GossipMatrix, gamma: f64, problem: &OptProblem) -> Result<()> {
    check_gamma(gamma)?;
    if w.n() != problem.n() {
        return Err(Error::Dimension {
            expected: problem.n(),
            got: w.n(),
        });
    }
    check_shape(problem, &state.x)
}

/// `X ← W(X - γG)` with fresh stochastic gradients at `X`.
pub fn dsgd_step<R: Rng + ?Sized>(
    state: &mut OptState,
    w: &GossipMatrix,
    gamma: f64,
    problem: &OptProblem,
    rng: &mut R,
) -> Result<()> {
    check_step(state, w, gamma, problem)?;
    let g = stochastic_grads(problem, &state.x, rng);
    state.x = w.mix(&(&state.x - g * gamma))?;
    state.t += 1;
    Ok(())
}

/// `X ← W(X - γY)`, then `Y ← WY + G(X) - G_prev`.
pub fn dsgt_step<R: Rng + ?Sized>(
    state: &mut OptState,
    w: &GossipMatrix,
    gamma: f64,
    problem: &OptProblem,
    rng: &mut R,
) -> Result<()> {
    check_step(state, w, gamma, problem)?;
    let (Some(y), Some(g_prev)) = (state.y.as_ref(), state.g_prev.as_ref()) else {
        return Err(Error::param("state", "tracking state was not initialised"));
    };
    let x = w.mix(&(&state.x - y * gamma))?;
    let g = stochastic_grads(problem, &x, rng);
    let y = w.mix(y)? + &g - g_prev;
    state.x = x;
    state.y = Some(y);
    state.g_prev = Some(g);
    state.t += 1;
    Ok(())
}

/// One metric sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptRecord {
    pub iter: usize,
    /// `‖∇f(x̄)‖²` with exact gradients.
    pub grad_norm_sq: f64,
    pub loss: f64,
    /// `‖X - 1x̄ᵀ‖_F`.
    pub consensus_residual: f64,
}

impl OptRecord {
    fn is_finite(&self) -> bool {
        self.grad_norm_sq.is_finite() && self.loss.is_finite() && self.consensus_residual.is_finite()
    }
}

pub fn measure(problem: &OptProblem, state: &OptState) -> OptRecord {
    let xbar = state.mean();
    OptRecord {
        iter: state.t,
        grad_norm_sq: problem.grad(&xbar).norm_squared(),
        loss: problem.loss(&xbar),
        consensus_residual: state.consensus_residual(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<OptRecord>,
    /// First iteration with a non-finite value, if any. Records stop before it.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub iters: usize,
    pub trials: usize,
    pub seed: u64,
    /// Record every this many iterations (the last one is always kept).
    pub record_every: usize,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, schedule: StepSchedule, iters: usize) -> Self {
        Self {
            algorithm,
            schedule,
            iters,
            trials: 1,
            seed: 0,
            record_every: 1,
        }
    }

    pub fn with_trials(mut self, trials: usize) -> Self {
        self.trials = trials;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.iters == 0 {
            return Err(Error::param("iters", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::param("trials", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// All trials of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptTrace {
    pub algorithm: Algorithm,
    pub family: Family,
    pub n: usize,
    pub config: RunConfig,
    pub trials: Vec<TrialTrace>,
}

impl OptTrace {
    pub fn diverged(&self) -> bool {
        self.trials.iter().any(|t| t.diverged_at.is_some())
    }

    /// Trial-averaged records over the iterations every trial reached.
    pub fn mean_records(&self) -> Vec<OptRecord> {
        let len = self.trials.iter().map(|t| t.records.len()).min().unwrap_or(0);
        let k = self.trials.len() as f64;
        (0..len)
            .map(|j| {
                let first = self.trials[0].records[j];
                let mut acc = OptRecord {
                    iter: first.iter,
                    grad_norm_sq: 0.0,
                    loss: 0.0,
                    consensus_residual: 0.0,
                };
                for t in &self.trials {
                    let r = t.records[j];
                    acc.grad_norm_sq += r.grad_norm_sq / k;
                    acc.loss += r.loss / k;
                    acc.consensus_residual += r.consensus_residual / k;
                }
                acc
            })
            .collect()
    }

    /// Trial-averaged record at iteration `iter`, if every trial reached it.
    pub fn mean_at(&self, iter: usize) -> Option<OptRecord> {
        self.mean_records().into_iter().find(|r| r.iter == iter)
    }
}

/// Runs one trial from `x0 = 0` on the given topology.
pub fn run_trial(
    problem: &OptProblem,
    topology: &mut Topology,
    config: &RunConfig,
    trial: usize,
    seed: u64,
) -> Result<TrialTrace> {
    config.validate()?;
    if topology.n() != problem.n() {
        return Err(Error::Dimension {
            expected: problem.n(),
            got: topology.n(),
        });
    }
    let mut rng = seed::derived_rng(seed, stream::NOISE, 0);
    let x0 = DMatrix::zeros(problem.n(), problem.d());
    let mut state = OptState::new(config.algorithm, problem, x0, &mut rng)?;
    let mut records = vec![measure(problem, &state)];
    let mut diverged_at = (!records[0].is_finite()).then_some(0);
    if diverged_at.is_some() {
        records.clear();
    }
    while diverged_at.is_none() && state.t < config.iters {
        let gamma = config.schedule.at(state.t);
        let w = topology.advance();
        match config.algorithm {
            Algorithm::Dsgd => dsgd_step(&mut state, w, gamma, problem, &mut rng)?,
            Algorithm::Dsgt => dsgt_step(&mut state, w, gamma, problem, &mut rng)?,
        }
        let due = state.t % config.record_every == 0 || state.t == config.iters;
        if !state.is_finite() {
            diverged_at = Some(state.t);
        } else if due {
            let r = measure(problem, &state);
            if r.is_finite() {
                records.push(r);
            } else {
                diverged_at = Some(state.t);
            }
        }
    }
    Ok(TrialTrace {
        trial,
        seed,
        records,
        diverged_at,
    })
}

/// Runs `config.trials` independent trials. Each trial builds its own
/// topology from `spec` with a derived seed and draws its own gradient
/// noise; trials run concurrently.
pub fn run(problem: &OptProblem, spec: &TopologySpec, config: &RunConfig) -> Result<OptTrace> {
    config.validate()?;
    if spec.n != problem.n() {
        return Err(Error::Dimension {
            expected: problem.n(),
            got: spec.n,
        });
    }
    let one = |trial: usize| -> Result<TrialTrace> {
        let seed = seed::derive(config.seed, stream::TRIAL, trial as u64);
        let mut topo = Topology::build(&spec.clone().with_seed(seed))?;
        run_trial(problem, &mut topo, config, trial, seed)
    };
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(config.trials);
    let mut slots: Vec<Option<Result<TrialTrace>>> = (0..config.trials).map(|_| None).collect();
    std::thread::scope(|s| {
        for (w, chunk) in slots.chunks_mut(config.trials.div_ceil(workers)).enumerate() {
            let base = w * config.trials.div_ceil(workers);
            let one = &one;
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(one(base + k));
                }
            });
        }
    });
    let trials = slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect::<Result<Vec<_>>>()?;
    Ok(OptTrace {
        algorithm: config.algorithm,
        family: spec.family,
        n: problem.n(),
        config: *config,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ls(n: usize, sigma_n: f64) -> OptProblem {
        make_least_squares(n, 3, 6, 0.1, sigma_n, &mut seed::rng(21)).unwrap()
    }

    fn random_x(n: usize, d: usize, s: u64) -> DMatrix<f64> {
        let mut rng = seed::rng(s);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn staircase_schedule() {
        let s = StepSchedule::Staircase {
            gamma0: 0.037,
            factor: 1.4,
            period: 40,
        };
        assert_eq!(s.at(0), 0.037);
        assert_eq!(s.at(39), 0.037);
        assert!((s.at(40) - 0.037 / 1.4).abs() < 1e-16);
        assert!((s.at(85) - 0.037 / 1.96).abs() < 1e-15);
        assert!(StepSchedule::Constant(-1.0).validate().is_err());
    }

    #[test]
    fn zero_step_keeps_consensus_point() {
        let p = ls(5, 1.0);
        let x0 = DMatrix::from_fn(5, 3, |_, c| c as f64 - 1.0);
        let spec = TopologySpec::new(Family::OdEquiDyn, 5).with_m(3).with_rho(0.99);
        let mut topo = Topology::build(&spec).unwrap();
        let mut s = OptState::dsgd(&p, x0.clone()).unwrap();
        let mut rng = seed::rng(0);
        for _ in 0..10 {
            dsgd_step(&mut s, topo.advance(), 0.0, &p, &mut rng).unwrap();
        }
        assert!((&s.x - &x0).abs().max() < 1e-14);
    }

    #[test]
    fn tracking_fixed_point_with_identity() {
        let p = ls(4, 0.0);
        let x0 = random_x(4, 3, 1);
        let mut rng = seed::rng(0);
        let mut s = OptState::dsgt(&p, x0.clone(), &mut rng).unwrap();
        let g0 = s.y.clone().unwrap();
        let eye = GossipMatrix::identity(4);
        for _ in 0..5 {
            dsgt_step(&mut s, &eye, 0.0, &p, &mut rng).unwrap();
        }
        assert_eq!(s.x, x0);
        assert_eq!(s.y.unwrap(), g0);
    }

    fn gd_oracle(p: &OptProblem, x: &DVector<f64>, gamma: f64) -> DVector<f64> {
        // Plain gradient descent written against the per-node gradients.
        let mut g = DVector::zeros(x.len());
        for i in 0..p.n() {
            g += p.local_grad(i, x);
        }
        x - g * (gamma / p.n() as f64)
    }

    #[test]
    fn averaging_reduces_both_methods_to_gradient_descent() {
        let p = ls(6, 0.0);
        let j = GossipMatrix::averaging(6);
        let gamma = 0.01;
        let x0 = random_x(6, 3, 2);
        let mut rng = seed::rng(0);
        let mut sgd = OptState::dsgd(&p, x0.clone()).unwrap();
        let mut sgt = OptState::dsgt(&p, x0.clone(), &mut rng).unwrap();
        // The first step averages a non-consensus start; from then on the
        // iterates sit on the consensus line and follow gradient descent.
        dsgd_step(&mut sgd, &j, gamma, &p, &mut rng).unwrap();
        dsgt_step(&mut sgt, &j, gamma, &p, &mut rng).unwrap();
        let mut oracle = sgd.mean();
        assert!((sgt.mean() - &oracle).norm() <= 1e-12 * oracle.norm());
        for _ in 0..100 {
            oracle = gd_oracle(&p, &oracle, gamma);
            dsgd_step(&mut sgd, &j, gamma, &p, &mut rng).unwrap();
            dsgt_step(&mut sgt, &j, gamma, &p, &mut rng).unwrap();
            for s in [&sgd, &sgt] {
                for i in 0..6 {
                    let xi: DVector<f64> = s.x.row(i).transpose();
                    assert!((&xi - &oracle).norm() <= 1e-10 * oracle.norm());
                }
            }
        }
    }

    #[test]
    fn tracking_identity_holds_on_dynamic_topology() {
        let p = ls(9, 1.0);
        let spec = TopologySpec::new(Family::OuEquiDyn, 9).with_m(4).with_rho(0.99).with_seed(3);
        let mut topo = Topology::build(&spec).unwrap();
        let mut rng = seed::rng(4);
        let mut s = OptState::dsgt(&p, random_x(9, 3, 5), &mut rng).unwrap();
        for _ in 0..200 {
            dsgt_step(&mut s, topo.advance(), 0.005, &p, &mut rng).unwrap();
            assert!(s.tracking_defect().unwrap() <= 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = ls(4, 0.0);
        let mut s = OptState::dsgd(&p, DMatrix::zeros(4, 3)).unwrap();
        let err = dsgd_step(&mut s, &GossipMatrix::identity(5), 0.1, &p, &mut seed::rng(0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 4, got: 5 }));
        assert!(OptState::dsgd(&p, DMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn run_is_deterministic_and_averages() {
        let p = ls(8, 1.0);
        let spec = TopologySpec::new(Family::Ring, 8);
        let cfg = RunConfig::new(Algorithm::Dsgd, StepSchedule::Constant(0.005), 20)
            .with_trials(3)
            .with_seed(11);
        let a = run(&p, &spec, &cfg).unwrap();
        let b = run(&p, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 3);
        assert_eq!(a.mean_records().len(), 21);
        let m = a.mean_at(20).unwrap();
        let avg = a.trials.iter().map(|t| t.records[20].loss).sum::<f64>() / 3.0;
        assert!((m.loss - avg).abs() < 1e-12 * avg);
        assert_ne!(a.trials[0].records, a.trials[1].records);
    }

    #[test]
    fn huge_step_is_truncated_and_flagged() {
        let p = ls(4, 1.0);
        let spec = TopologySpec::new(Family::Complete, 4);
        let cfg = RunConfig::new(Algorithm::Dsgd, StepSchedule::Constant(50.0), 2000);
        let tr = run(&p, &spec, &cfg).unwrap();
        assert!(tr.diverged());
        let t = &tr.trials[0];
        let at = t.diverged_at.unwrap();
        assert!(at < 2000);
        assert!(t.records.iter().all(|r| r.iter < at && r.is_finite()));
    }

    #[test]
    fn thinning_keeps_last_record() {
        let p = ls(4, 0.0);
        let cfg = RunConfig::new(Algorithm::Dsgt, StepSchedule::Constant(0.01), 25).with_record_every(10);
        let tr = run(&p, &TopologySpec::new(Family::Ring, 4), &cfg).unwrap();
        let iters: Vec<_> = tr.trials[0].records.iter().map(|r| r.iter).collect();
        assert_eq!(iters, vec![0, 10, 20, 25]);
    }
}
