//! Command runners. Each writes a CSV plus a `.meta` sidecar holding the
//! resolved config, so `--config <file>.meta` reruns it byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use equitopo::consensus::{self, decay_slope, gossip_run, random_start, ConsensusTrace};
use equitopo::io::{self, Sidecar};
use equitopo::optim::{self, make_least_squares, make_logistic_ncvx, OptProblem, RunConfig};
use equitopo::seed::{self, stream};
use equitopo::spectral::{self, consensus_factor, ConsensusEstimate, DEFAULT_TOL};
use equitopo::topology::{Family, GossipMatrix, Topology};

use crate::config::{Cmd, Config, ProblemKind, OUT_DIR_ENV};
use crate::CliError;

pub fn run_command(cfg: &Config) -> Result<(), CliError> {
    match cfg.cmd {
        Cmd::TopoBuild => topo_build(cfg),
        Cmd::TopoVerify => topo_verify(cfg),
        Cmd::Consensus => run_consensus(cfg),
        Cmd::SizeSweep => size_sweep(cfg),
        Cmd::Dsgd | Cmd::Dsgt => run_optim(cfg),
    }
}

fn default_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn output_path(cfg: &Config, default_name: String) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| default_dir().join(default_name))
}

/// Writes `csv` and its sidecar. `results` become `#` comment lines so the
/// sidecar still parses as a config file.
fn write_artifact(path: &Path, csv: &str, echo: &Sidecar, results: &[(&str, String)]) -> Result<(), CliError> {
    io::write_atomic(path, csv.as_bytes())?;
    let mut meta = echo.render();
    for (k, v) in results {
        let _ = writeln!(meta, "# {k} = {v}");
    }
    io::write_atomic(&io::sidecar_path(path), meta.as_bytes())?;
    Ok(())
}

fn family_of(cfg: &Config) -> Family {
    cfg.family.unwrap_or(Family::Custom)
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn warn_unconverged(est: &ConsensusEstimate) {
    if !est.converged {
        eprintln!(
            "warning: {} did not converge (residual {:.3e})",
            est.method, est.tolerance_or_stderr
        );
    }
}

fn topo_build(cfg: &Config) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let mut topo = Topology::build(&spec)?;
    let basis = topo.basis_index().cloned();
    let dynamic = topo.is_dynamic();
    let w: GossipMatrix = topo.advance().clone();
    let path = output_path(cfg, format!("topology-{}-n{}.csv", spec.family, spec.n));

    let mut results = Vec::new();
    if let Some(b) = &basis {
        results.push(("basis_index", join(b.values())));
    }
    let mut summary = format!("{} n={}", spec.family, spec.n);
    if let Some(b) = &basis {
        let _ = write!(summary, " M={}", b.len());
    }
    if dynamic {
        results.push(("realization", "0".to_string()));
        summary.push_str(" (first sampled realization)");
    } else {
        let est = consensus_factor(&w, DEFAULT_TOL);
        warn_unconverged(&est);
        results.push(("rho_measured", est.value.to_string()));
        results.push(("method", est.method.to_string()));
        let _ = write!(summary, " rho_measured={:.6}", est.value);
    }
    write_artifact(&path, &io::topology_csv(&w), &cfg.echo(), &results)?;
    println!("{summary} -> {}", path.display());
    Ok(())
}

fn topo_verify(cfg: &Config) -> Result<(), CliError> {
    let (family, n, m, target, measured, method, trials) = match &cfg.input {
        Some(input) => {
            let text = std::fs::read_to_string(input)
                .map_err(|e| CliError::Usage(format!("cannot read `{}`: {e}", input.display())))?;
            let w = io::parse_topology_csv(&text, cfg.n, family_of(cfg))?;
            let report = spectral::validate_matrix(&w);
            if !report.is_doubly_stochastic() {
                eprintln!(
                    "warning: not doubly stochastic (row dev {:.3e}, col dev {:.3e})",
                    report.max_row_sum_deviation, report.max_col_sum_deviation
                );
            }
            let est = consensus_factor(&w, DEFAULT_TOL);
            warn_unconverged(&est);
            let target = cfg.rho_given.then_some(cfg.rho);
            (family_of(cfg), w.n(), None, target, est.value, est.method, est.iterations_or_trials)
        }
        None => {
            let spec = cfg.spec()?;
            let mut topo = Topology::build(&spec)?;
            let m = topo.basis_index().map(|b| b.len());
            match &topo {
                Topology::Static(w) => {
                    let est = consensus_factor(w, DEFAULT_TOL);
                    warn_unconverged(&est);
                    // The sampling loop guarantees the target for the directed
                    // graph, and symmetrizing cannot raise the norm.
                    let target = spec.family.uses_basis().then_some(spec.rho);
                    (spec.family, spec.n, m, target, est.value, est.method, est.iterations_or_trials)
                }
                Topology::Dynamic(_) => {
                    let mut rng = seed::derived_rng(cfg.seed, stream::SPECTRAL, 0);
                    let est = spectral::empirical_contraction(&mut topo, cfg.contraction_trials, &mut rng)?;
                    // Root of the mean squared contraction, comparable to a static factor.
                    (spec.family, spec.n, m, None, est.value.sqrt(), est.method, est.iterations_or_trials)
                }
            }
        }
    };
    let line = io::verify_line(family, n, m, target, measured, method.as_str(), trials);
    println!("{}", io::VERIFY_HEADER);
    println!("{line}");
    if let Some(path) = &cfg.out {
        let csv = format!("{}\n{line}\n", io::VERIFY_HEADER);
        write_artifact(path, &csv, &cfg.echo(), &[])?;
    }
    match target {
        Some(t) if measured <= t => {
            println!("rho_measured {measured:.6} <= rho_target {t}");
            Ok(())
        }
        Some(t) => Err(CliError::Construction(format!(
            "rho_measured {measured:.6} > rho_target {t}"
        ))),
        None => {
            println!("rho_measured {measured:.6}");
            Ok(())
        }
    }
}

/// Same trial layout as the size sweep, so a sweep cell reruns as a
/// single `consensus` call.
fn consensus_traces(cfg: &Config, n: usize) -> Result<Vec<ConsensusTrace>, CliError> {
    let spec = cfg.spec_for(n);
    (0..cfg.trials)
        .map(|trial| {
            let s = consensus::trial_seed(cfg.seed, n, trial);
            let mut topo = Topology::build(&spec.clone().with_seed(s))?;
            let x0 = random_start(n, &mut seed::derived_rng(s, stream::INIT, 0));
            Ok(gossip_run(&mut topo, &x0, cfg.iters, trial)?)
        })
        .collect()
}

fn run_consensus(cfg: &Config) -> Result<(), CliError> {
    let spec = cfg.spec()?;
    let traces = consensus_traces(cfg, spec.n)?;
    let slope = decay_slope(&traces);
    let drift = traces.iter().map(|t| t.max_mean_drift).fold(0.0, f64::max);
    let path = output_path(cfg, format!("consensus-{}-n{}.csv", spec.family, spec.n));
    let results = [
        ("slope", slope.to_string()),
        ("decay_factor", slope.exp().to_string()),
        ("max_mean_drift", drift.to_string()),
    ];
    write_artifact(&path, &io::consensus_csv(&traces), &cfg.echo(), &results)?;
    println!(
        "{} n={} trials={} iters={}: slope {slope:.6} decay factor {:.6} -> {}",
        spec.family,
        spec.n,
        cfg.trials,
        cfg.iters,
        slope.exp(),
        path.display()
    );
    Ok(())
}

fn size_sweep(cfg: &Config) -> Result<(), CliError> {
    let family = family_of(cfg);
    let dir = cfg.out.clone().unwrap_or_else(default_dir);
    let sweep = consensus::size_independence_experiment(
        |n, s| cfg.spec_for(n).with_seed(s),
        &cfg.sizes,
        cfg.iters,
        cfg.trials,
        cfg.seed,
    )?;

    let mut summary = String::from("family,n,M,slope,decay_factor\n");
    println!("{:<20} {:>6} {:>5} {:>12} {:>12}", "family", "n", "M", "slope", "decay_factor");
    for cell in &sweep.sizes {
        // The echo of an equivalent single `consensus` run.
        let mut single = cfg.clone();
        single.cmd = Cmd::Consensus;
        single.n = Some(cell.n);
        single.m = cfg.spec_for(cell.n).m;
        single.m_scale = None;
        single.sizes.clear();
        single.out = None;
        let path = dir.join(format!("consensus-{family}-n{}.csv", cell.n));
        let results = [
            ("slope", cell.slope.to_string()),
            ("decay_factor", cell.decay_factor.to_string()),
        ];
        write_artifact(&path, &io::consensus_csv(&cell.traces), &single.echo(), &results)?;

        let m = if family.uses_basis() && !cfg.complete_basis {
            cfg.spec_for(cell.n).basis_count().to_string()
        } else {
            String::new()
        };
        let _ = writeln!(summary, "{family},{},{m},{},{}", cell.n, cell.slope, cell.decay_factor);
        println!(
            "{:<20} {:>6} {:>5} {:>12.6} {:>12.6}",
            family.as_str(),
            cell.n,
            m,
            cell.slope,
            cell.decay_factor
        );
    }
    let path = dir.join(format!("size-sweep-{family}.csv"));
    let results = [
        ("slope_spread", sweep.slope_spread().to_string()),
        ("factor_spread", sweep.factor_spread().to_string()),
    ];
    write_artifact(&path, &summary, &cfg.echo(), &results)?;
    println!(
        "slope spread {:.6}, decay factor spread {:.6} -> {}",
        sweep.slope_spread(),
        sweep.factor_spread(),
        path.display()
    );
    Ok(())
}

fn make_problem(cfg: &Config, n: usize) -> Result<OptProblem, CliError> {
    let p = cfg
        .problem
        .as_ref()
        .ok_or_else(|| CliError::Usage("missing problem settings".into()))?;
    let mut rng = seed::derived_rng(cfg.seed, stream::PROBLEM, 0);
    Ok(match p.kind {
        ProblemKind::LeastSquares => make_least_squares(n, p.d, p.k, p.sigma_s, p.sigma_n, &mut rng)?,
        ProblemKind::LogisticNcvx => {
            make_logistic_ncvx(n, p.d, p.l, p.reg, p.sigma_h, p.sigma_n, p.label_rule, &mut rng)?
        }
    })
}

fn run_optim(cfg: &Config) -> Result<(), CliError> {
    let algo = cfg
        .algorithm()
        .ok_or_else(|| CliError::Usage(format!("`{}` is not an optimizer", cfg.cmd.name())))?;
    let spec = cfg.spec()?;
    let problem = make_problem(cfg, spec.n)?;
    let rc = RunConfig::new(algo, cfg.schedule(), cfg.iters)
        .with_trials(cfg.trials)
        .with_seed(cfg.seed)
        .with_record_every(cfg.record_every);
    let trace = optim::run(&problem, &spec, &rc)?;
    let path = output_path(cfg, format!("{algo}-{}-n{}.csv", spec.family, spec.n));

    let mut results = vec![("diverged", trace.diverged().to_string())];
    let diverged: Vec<String> = trace
        .trials
        .iter()
        .filter_map(|t| t.diverged_at.map(|i| format!("trial {} at iteration {i}", t.trial)))
        .collect();
    if !diverged.is_empty() {
        results.push(("diverged_at", diverged.join("; ")));
    }
    let last = trace.mean_records().last().copied();
    if let Some(r) = last {
        results.push(("final_iter", r.iter.to_string()));
        results.push(("final_grad_norm_sq", r.grad_norm_sq.to_string()));
        results.push(("final_loss", r.loss.to_string()));
    }
    write_artifact(&path, &io::optim_csv(&trace), &cfg.echo(), &results)?;

    if !diverged.is_empty() {
        return Err(CliError::Diverged(format!(
            "{algo} on {} diverged ({}); truncated trace flagged diverged in {}",
            spec.family,
            diverged.join("; "),
            path.display()
        )));
    }
    match last {
        Some(r) => println!(
            "{algo} {} n={} iter {}: grad_norm_sq {:.6e} loss {:.6e} consensus_residual {:.6e} -> {}",
            spec.family,
            spec.n,
            r.iter,
            r.grad_norm_sq,
            r.loss,
            r.consensus_residual,
            path.display()
        ),
        None => println!("{algo} {}: no records -> {}", spec.family, path.display()),
    }
    Ok(())
}
