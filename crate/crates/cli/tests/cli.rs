use std::path::Path;
use std::process::{Command, Output};

fn equitopo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equitopo"))
        .args(args)
        .env("EQUITOPO_OUT_DIR", dir)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn consensus_writes_trace_and_resolved_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(
        dir.path(),
        &[
            "consensus", "--family", "d-equistatic", "--n", "300", "--rho", "0.5", "--iters", "30",
            "--trials", "3", "--seed", "7",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = read(dir.path().join("consensus-d-equistatic-n300.csv"));
    assert_eq!(csv.lines().next(), Some("family,n,trial,iter,residual"));
    assert_eq!(csv.lines().count(), 1 + 3 * 31);
    let meta = read(dir.path().join("consensus-d-equistatic-n300.meta"));
    for line in ["command = consensus", "m = 76", "seed = 7", "rho = 0.5", "iters = 30"] {
        assert!(meta.lines().any(|l| l == line), "missing `{line}` in\n{meta}");
    }
    assert!(stdout(&o).contains("slope"));
}

#[test]
fn range_errors_exit_with_usage_status() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(dir.path(), &["consensus", "--family", "ring", "--n", "10", "--rho", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`rho`"), "{}", stderr(&o));

    let o = equitopo(dir.path(), &["consensus", "--family", "hexagon", "--n", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`family`"));

    let o = equitopo(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# ring sweep\nfamily = ring\nn = 100\niters = 4\ntrials = 1\n").unwrap();
    let o = equitopo(dir.path(), &["consensus", "--config", cfg.to_str().unwrap(), "--n", "300"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta = read(dir.path().join("consensus-ring-n300.meta"));
    assert!(meta.lines().any(|l| l == "n = 300"));
    assert!(meta.lines().any(|l| l == "iters = 4"));

    std::fs::write(&cfg, "family = ring\nn = 10\nbogus = 1\n").unwrap();
    let o = equitopo(dir.path(), &["consensus", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key `bogus`"));

    let o = equitopo(dir.path(), &["consensus", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn build_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(dir.path(), &["topo-build", "--family", "d-equistatic", "--n", "80", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = dir.path().join("topology-d-equistatic-n80.csv");
    assert_eq!(read(&csv).lines().next(), Some("row,col,weight"));
    assert!(read(dir.path().join("topology-d-equistatic-n80.meta")).contains("# basis_index = "));

    let o = equitopo(dir.path(), &["topo-verify", "--family", "d-equistatic", "--n", "80", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("family,n,M,rho_target,rho_measured,method,trials"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..2], ["d-equistatic", "80"]);
    assert!(out.contains("<= rho_target 0.5"));

    let loaded = equitopo(dir.path(), &["topo-verify", "--input", csv.to_str().unwrap()]);
    assert_eq!(loaded.status.code(), Some(0), "{}", stderr(&loaded));
    let loaded_row = stdout(&loaded).lines().nth(1).unwrap().to_string();
    assert_eq!(loaded_row.split(',').nth(4), Some(row[4]));
}

#[test]
fn dynamic_verify_reports_monte_carlo_contraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(
        dir.path(),
        &["topo-verify", "--family", "od-equidyn", "--n", "30", "--complete-basis", "--contraction-trials", "500"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let row = stdout(&o).lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[5], "monte-carlo");
    assert_eq!(cols[6], "500");
    let rho: f64 = cols[4].parse().unwrap();
    assert!(rho > 0.5 && rho < 0.8, "{rho}");
}

#[test]
fn construction_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(dir.path(), &["topo-build", "--family", "d-equistatic", "--n", "100", "--m", "1", "--rho", "0.1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("construction failed"));
}

#[test]
fn huge_step_is_flagged_as_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(dir.path(), &["dsgd", "--family", "ring", "--n", "20", "--gamma", "1e6", "--decay", "1"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
    let csv = read(dir.path().join("dsgd-ring-n20.csv"));
    assert_eq!(csv.lines().next(), Some("algo,family,n,trial,iter,grad_norm_sq,loss,consensus_residual"));
    assert!(csv.lines().count() < 202);
    assert!(read(dir.path().join("dsgd-ring-n20.meta")).contains("# diverged = true"));
}

#[test]
fn artifacts_reproduce_from_their_sidecars() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["dsgt", "--family", "ou-equidyn", "--n", "16", "--m", "15", "--iters", "40", "--trials", "2", "--seed", "11"];
    assert_eq!(equitopo(a.path(), &args).status.code(), Some(0));
    assert_eq!(equitopo(b.path(), &args).status.code(), Some(0));
    let name = "dsgt-ou-equidyn-n16.csv";
    assert_eq!(read(a.path().join(name)), read(b.path().join(name)));

    let meta = a.path().join("dsgt-ou-equidyn-n16.meta");
    let again = b.path().join("again.csv");
    let o = equitopo(b.path(), &["dsgt", "--config", meta.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read(a.path().join(name)), read(&again));
}

#[test]
fn size_sweep_writes_one_trace_per_size_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = equitopo(
        dir.path(),
        &["size-sweep", "--family", "d-equistatic", "--sizes", "40,80", "--m-scale", "5", "--iters", "20", "--seed", "7"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for n in [40, 80] {
        let csv = read(dir.path().join(format!("consensus-d-equistatic-n{n}.csv")));
        assert_eq!(csv.lines().next(), Some("family,n,trial,iter,residual"));
    }
    let summary = read(dir.path().join("size-sweep-d-equistatic.csv"));
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "family,n,M,slope,decay_factor");
    assert_eq!(lines.len(), 3);
    // M = ceil(5 ln 40) = 19
    assert!(lines[1].starts_with("d-equistatic,40,19,"));

    // A sweep cell reruns as a plain consensus call.
    let cell = dir.path().join("consensus-d-equistatic-n80.meta");
    let again = dir.path().join("again.csv");
    let o = equitopo(dir.path(), &["consensus", "--config", cell.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read(&again), read(dir.path().join("consensus-d-equistatic-n80.csv")));
}
