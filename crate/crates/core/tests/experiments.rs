use equitopo::consensus::{gossip_run, random_start, size_independence_experiment};
use equitopo::optim::{self, make_least_squares, make_logistic_ncvx, Algorithm, LabelRule, RunConfig, StepSchedule};
use equitopo::seed::{self, stream};
use equitopo::topology::{Family, Topology, TopologySpec};

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, (var / k).sqrt())
}

#[test]
fn one_peer_samplers_contract_in_expectation() {
    let n = 32;
    let trials = 60;
    let steps = 25;
    for family in [Family::OdEquiDyn, Family::OuEquiDyn, Family::OuEquiDynEuclid] {
        let mut ratios: Vec<Vec<f64>> = (0..steps).map(|_| Vec::with_capacity(trials)).collect();
        for trial in 0..trials {
            let s = seed::derive(5, stream::TRIAL, trial as u64);
            let spec = TopologySpec::new(family, n).with_complete_basis(true).with_seed(s);
            let mut t = Topology::build(&spec).unwrap();
            let x0 = random_start(n, &mut seed::derived_rng(s, stream::INIT, 0));
            let tr = gossip_run(&mut t, &x0, steps, trial).unwrap();
            for (k, w) in tr.residuals.windows(2).enumerate() {
                ratios[k].push((w[1] / w[0]).powi(2));
            }
        }
        for (k, r) in ratios.iter().enumerate() {
            let (m, se) = mean_and_stderr(r);
            assert!(m <= 1.0 + 2.0 * se, "{family} step {k}: mean ratio {m} se {se}");
        }
    }
}

#[test]
fn ring_decay_degrades_with_size() {
    let sweep = size_independence_experiment(
        |n, s| TopologySpec::new(Family::Ring, n).with_seed(s),
        &[100, 400],
        20_000,
        2,
        1,
    )
    .unwrap();
    let f: Vec<f64> = sweep.sizes.iter().map(|d| d.decay_factor).collect();
    assert!(f[0] < f[1], "{f:?}");
    assert!(f[1] < 1.0);
}

#[test]
fn complete_graph_slope_is_minus_infinity() {
    let sweep = size_independence_experiment(
        |n, s| TopologySpec::new(Family::Complete, n).with_seed(s),
        &[10, 50],
        10,
        2,
        1,
    )
    .unwrap();
    assert!(sweep.sizes.iter().all(|d| d.slope == f64::NEG_INFINITY));
}

#[test]
fn dsgd_makes_progress_at_a_stable_step() {
    let n = 50;
    let problem = make_least_squares(n, 10, 50, 0.1, 1.0, &mut seed::derived_rng(3, stream::PROBLEM, 0)).unwrap();
    let spec = TopologySpec::new(Family::DEquiStatic, n).with_m(6).with_rho(0.8);
    let cfg = RunConfig::new(Algorithm::Dsgd, StepSchedule::Constant(0.002), 100)
        .with_trials(4)
        .with_seed(3);
    let trace = optim::run(&problem, &spec, &cfg).unwrap();
    assert!(!trace.diverged());
    let recs = trace.mean_records();
    let first = recs.first().unwrap();
    let last = recs.last().unwrap();
    assert_eq!(last.iter, 100);
    assert!(last.grad_norm_sq < 1e-2 * first.grad_norm_sq, "{first:?} -> {last:?}");
    assert!(last.loss < first.loss);
}

#[test]
fn dsgt_reaches_a_plateau_below_its_start() {
    let n = 20;
    let problem = make_logistic_ncvx(
        n,
        5,
        50,
        0.001,
        0.2,
        0.01,
        LabelRule::Literal,
        &mut seed::derived_rng(4, stream::PROBLEM, 0),
    )
    .unwrap();
    let spec = TopologySpec::new(Family::OuEquiDyn, n).with_m(19).with_rho(0.9);
    let cfg = RunConfig::new(Algorithm::Dsgt, StepSchedule::Constant(1.0), 300).with_trials(3).with_seed(4);
    let trace = optim::run(&problem, &spec, &cfg).unwrap();
    assert!(!trace.diverged());
    let recs = trace.mean_records();
    let start = recs[0].grad_norm_sq;
    let tail: Vec<f64> = recs[200..].iter().map(|r| r.grad_norm_sq).collect();
    let plateau = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(plateau < 0.5 * start, "start {start} plateau {plateau}");
    assert!(tail.iter().all(|g| g.is_finite()));
}
