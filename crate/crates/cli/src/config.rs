//! Flags, config files and the resolved experiment configuration.
//!
//! Every setting has one name, used both as a `--flag` and as a config-file
//! key. Files hold `key = value` lines; flags given on the command line win.

use std::ffi::OsString;
use std::path::PathBuf;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use equitopo::io::Sidecar;
use equitopo::optim::{Algorithm, LabelRule, StepSchedule};
use equitopo::topology::{Family, TopologySpec};

use crate::CliError;

/// Default output directory when `--out` is not given.
pub const OUT_DIR_ENV: &str = "EQUITOPO_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    TopoBuild,
    TopoVerify,
    Consensus,
    SizeSweep,
    Dsgd,
    Dsgt,
}

impl Cmd {
    pub const ALL: [Cmd; 6] = [
        Cmd::TopoBuild,
        Cmd::TopoVerify,
        Cmd::Consensus,
        Cmd::SizeSweep,
        Cmd::Dsgd,
        Cmd::Dsgt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::TopoBuild => "topo-build",
            Cmd::TopoVerify => "topo-verify",
            Cmd::Consensus => "consensus",
            Cmd::SizeSweep => "size-sweep",
            Cmd::Dsgd => "dsgd",
            Cmd::Dsgt => "dsgt",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Cmd::TopoBuild => "Build a topology and write its matrix as row,col,weight CSV",
            Cmd::TopoVerify => "Measure the consensus factor of a built or loaded topology",
            Cmd::Consensus => "Run gossip averaging and write the residual trace",
            Cmd::SizeSweep => "Run gossip averaging over several network sizes and fit decay slopes",
            Cmd::Dsgd => "Run decentralized SGD on a synthetic problem",
            Cmd::Dsgt => "Run decentralized gradient tracking on a synthetic problem",
        }
    }

    fn is_optim(self) -> bool {
        matches!(self, Cmd::Dsgd | Cmd::Dsgt)
    }
}

impl FromStr for Cmd {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Cmd::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown command `{s}`")))
    }
}

const ALL: &[Cmd] = &Cmd::ALL;
const BUILDING: &[Cmd] = &[Cmd::TopoBuild, Cmd::TopoVerify, Cmd::Consensus, Cmd::Dsgd, Cmd::Dsgt];
const RUNS: &[Cmd] = &[Cmd::Consensus, Cmd::SizeSweep, Cmd::Dsgd, Cmd::Dsgt];
const OPTIM: &[Cmd] = &[Cmd::Dsgd, Cmd::Dsgt];
const VERIFY: &[Cmd] = &[Cmd::TopoVerify];
const SWEEP: &[Cmd] = &[Cmd::SizeSweep];

struct Key {
    name: &'static str,
    help: &'static str,
    cmds: &'static [Cmd],
    switch: bool,
}

const fn key(name: &'static str, help: &'static str, cmds: &'static [Cmd]) -> Key {
    Key {
        name,
        help,
        cmds,
        switch: false,
    }
}

// Order here is the order of the echoed sidecar.
const KEYS: &[Key] = &[
    key("family", "Topology family, e.g. d-equistatic, ou-equidyn, ring", ALL),
    key("n", "Number of nodes", BUILDING),
    key("sizes", "Comma-separated network sizes [default: 100,300,1000]", SWEEP),
    key("rho", "Target consensus factor of the basis sampling loop [default: 0.5]", ALL),
    key("p", "Failure probability used to derive M [default: 0.5]", ALL),
    key("m", "Basis count M [default: derived from rho, p and n]", ALL),
    key("m-scale", "Use M = ceil(m-scale * ln n) at every size", SWEEP),
    key("eta", "Lazy-mixing weight of the one-peer samplers [default: 0.5]", ALL),
    Key {
        name: "complete-basis",
        help: "Use the complete basis {1, ..., n-1} for the dynamic samplers",
        cmds: ALL,
        switch: true,
    },
    key("input", "Verify a row,col,weight CSV instead of building a topology", VERIFY),
    key("contraction-trials", "Monte Carlo trials for dynamic families [default: 2000]", VERIFY),
    key("problem", "least-squares or logistic-ncvx", OPTIM),
    key("d", "Model dimension [default: 10]", OPTIM),
    key("k", "Least-squares rows per node [default: 50]", OPTIM),
    key("l", "Logistic samples per node [default: 200]", OPTIM),
    key("sigma-s", "Least-squares observation noise [default: 0.1]", OPTIM),
    key("sigma-h", "Logistic heterogeneity [default: 0.2]", OPTIM),
    key("reg", "Nonconvex regularizer weight [default: 0.001]", OPTIM),
    key("label-rule", "Logistic labels: literal or sigmoid [default: literal]", OPTIM),
    key("sigma-n", "Gradient noise [default: 1 for least squares, 0.01 for logistic]", OPTIM),
    key("gamma", "Initial step size", OPTIM),
    key("decay", "Staircase decay factor, 1 for a constant step", OPTIM),
    key("decay-period", "Iterations between decays [default: 40]", OPTIM),
    key("iters", "Number of iterations", RUNS),
    key("trials", "Independent trials", RUNS),
    key("record-every", "Record metrics every this many iterations [default: 1]", OPTIM),
    key("seed", "Master seed [default: 0]", ALL),
    key("out", "Output file (a directory for size-sweep)", ALL),
];

fn keys_for(cmd: Cmd) -> impl Iterator<Item = &'static Key> {
    KEYS.iter().filter(move |k| k.cmds.contains(&cmd))
}

pub fn command() -> Command {
    let mut app = Command::new("equitopo")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Build EquiTopo gossip topologies and run consensus and optimization experiments")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for cmd in Cmd::ALL {
        let mut sub = Command::new(cmd.name()).about(cmd.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Read `key = value` settings from FILE; flags override them"),
        );
        for k in keys_for(cmd) {
            let arg = Arg::new(k.name).long(k.name).help(k.help);
            sub = sub.arg(if k.switch {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE").allow_negative_numbers(true)
            });
        }
        app = app.subcommand(sub);
    }
    app
}

/// Settings as given, before defaults: file values overlaid by flags.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: Vec<(String, String)>,
}

impl RawConfig {
    fn set(&mut self, k: &str, v: String) {
        match self.values.iter_mut().find(|(key, _)| key == k) {
            Some(slot) => slot.1 = v,
            None => self.values.push((k.to_string(), v)),
        }
    }

    fn get(&self, k: &str) -> Option<&str> {
        self.values.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str())
    }

    fn parse<T: FromStr>(&self, k: &str) -> Result<Option<T>, CliError> {
        self.get(k)
            .map(|v| {
                v.parse()
                    .map_err(|_| CliError::Usage(format!("invalid value for `{k}`: `{v}`")))
            })
            .transpose()
    }

    fn parse_bool(&self, k: &str) -> Result<bool, CliError> {
        match self.get(k) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => Err(CliError::Usage(format!(
                "invalid value for `{k}`: `{v}` (expected true or false)"
            ))),
        }
    }
}

/// Reads a config file for `cmd`, rejecting keys the command does not use.
pub fn read_config_file(cmd: Cmd, path: &std::path::Path) -> Result<RawConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file `{}`: {e}", path.display())))?;
    let parsed = Sidecar::parse(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut raw = RawConfig::default();
    for (k, v) in parsed.entries() {
        let k = k.replace('_', "-");
        if k == "command" {
            if v != cmd.name() {
                return Err(CliError::Usage(format!(
                    "{} is a `{v}` config, not `{}`",
                    path.display(),
                    cmd.name()
                )));
            }
            continue;
        }
        if !keys_for(cmd).any(|key| key.name == k) {
            return Err(CliError::Usage(format!(
                "unknown key `{k}` in {} for `{}`",
                path.display(),
                cmd.name()
            )));
        }
        raw.set(&k, v.clone());
    }
    Ok(raw)
}

fn raw_from_matches(cmd: Cmd, m: &ArgMatches) -> Result<RawConfig, CliError> {
    let mut raw = match m.get_one::<String>("config") {
        Some(path) => read_config_file(cmd, path.as_ref())?,
        None => RawConfig::default(),
    };
    for k in keys_for(cmd) {
        if m.value_source(k.name) != Some(ValueSource::CommandLine) {
            continue;
        }
        let v = if k.switch {
            "true".to_string()
        } else {
            m.get_one::<String>(k.name).cloned().unwrap_or_default()
        };
        raw.set(k.name, v);
    }
    Ok(raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    LeastSquares,
    LogisticNcvx,
}

impl ProblemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::LeastSquares => "least-squares",
            ProblemKind::LogisticNcvx => "logistic-ncvx",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "least-squares" => Ok(ProblemKind::LeastSquares),
            "logistic-ncvx" => Ok(ProblemKind::LogisticNcvx),
            _ => Err(()),
        }
    }
}

/// Problem generator settings for `dsgd` and `dsgt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    pub d: usize,
    pub k: usize,
    pub l: usize,
    pub sigma_s: f64,
    pub sigma_h: f64,
    pub reg: f64,
    pub label_rule: LabelRule,
    pub sigma_n: f64,
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub cmd: Cmd,
    /// `None` only for `topo-verify --input`.
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub sizes: Vec<usize>,
    pub rho: f64,
    /// Whether `rho` was given rather than defaulted.
    pub rho_given: bool,
    pub p: f64,
    pub m: Option<usize>,
    pub m_scale: Option<f64>,
    pub eta: f64,
    pub complete_basis: bool,
    pub input: Option<PathBuf>,
    pub contraction_trials: usize,
    pub problem: Option<ProblemConfig>,
    pub gamma: f64,
    pub decay: f64,
    pub decay_period: usize,
    pub iters: usize,
    pub trials: usize,
    pub record_every: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Parses the command line (program name first) into a command and its
/// resolved configuration.
pub fn parse_args<I, T>(args: I) -> Result<Config, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args)?;
    let (name, sub) = matches
        .subcommand()
        .ok_or_else(|| CliError::Usage("missing command".into()))?;
    let cmd: Cmd = name.parse()?;
    let raw = raw_from_matches(cmd, sub)?;
    resolve(cmd, &raw)
}

fn required<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing required field `{name}`")))
}

fn positive(name: &str, v: usize) -> Result<usize, CliError> {
    if v == 0 {
        return Err(CliError::Usage(format!("invalid value for `{name}`: must be at least 1")));
    }
    Ok(v)
}

/// Applies defaults and range checks.
pub fn resolve(cmd: Cmd, raw: &RawConfig) -> Result<Config, CliError> {
    let input: Option<PathBuf> = raw.parse("input")?;
    let family_text = raw.get("family");
    let family = match family_text {
        Some(f) => Some(f.parse::<Family>()?),
        None if input.is_some() => None,
        None => return Err(CliError::Usage("missing required field `family`".into())),
    };
    let n: Option<usize> = raw.parse("n")?;
    if cmd != Cmd::SizeSweep && input.is_none() {
        required(n, "n")?;
    }
    let sizes = match raw.get("sizes") {
        Some(s) if cmd == Cmd::SizeSweep => parse_sizes(s)?,
        _ if cmd == Cmd::SizeSweep => vec![100, 300, 1000],
        _ => Vec::new(),
    };
    let m_scale: Option<f64> = raw.parse("m-scale")?;
    if let Some(s) = m_scale {
        if !(s.is_finite() && s > 0.0) {
            return Err(CliError::Usage(format!("invalid value for `m-scale`: must be positive, got {s}")));
        }
    }

    let problem = if cmd.is_optim() {
        let kind = match raw.get("problem") {
            Some(p) => p.parse().map_err(|_| {
                CliError::Usage(format!(
                    "invalid value for `problem`: `{p}` (expected least-squares or logistic-ncvx)"
                ))
            })?,
            None if cmd == Cmd::Dsgd => ProblemKind::LeastSquares,
            None => ProblemKind::LogisticNcvx,
        };
        let default_noise = match kind {
            ProblemKind::LeastSquares => 1.0,
            ProblemKind::LogisticNcvx => 0.01,
        };
        Some(ProblemConfig {
            kind,
            d: positive("d", raw.parse("d")?.unwrap_or(10))?,
            k: positive("k", raw.parse("k")?.unwrap_or(50))?,
            l: positive("l", raw.parse("l")?.unwrap_or(200))?,
            sigma_s: raw.parse("sigma-s")?.unwrap_or(0.1),
            sigma_h: raw.parse("sigma-h")?.unwrap_or(0.2),
            reg: raw.parse("reg")?.unwrap_or(0.001),
            label_rule: raw.parse::<LabelRule>("label-rule")?.unwrap_or_default(),
            sigma_n: raw.parse("sigma-n")?.unwrap_or(default_noise),
        })
    } else {
        None
    };

    // dsgd follows the least-squares staircase; dsgt uses a constant step,
    // halved for the one-peer exponential graph.
    let (gamma0, decay0) = match cmd {
        Cmd::Dsgd => (0.037, 1.4),
        _ if family == Some(Family::OnePeerExp) => (1.5, 1.0),
        _ => (3.0, 1.0),
    };
    let (iters0, trials0) = match cmd {
        Cmd::Dsgd => (200, 1),
        Cmd::Dsgt => (500, 1),
        _ => (60, 3),
    };

    let rho_given = raw.get("rho").is_some();
    let cfg = Config {
        cmd,
        family,
        n,
        sizes,
        rho: raw.parse("rho")?.unwrap_or(TopologySpec::DEFAULT_RHO),
        rho_given,
        p: raw.parse("p")?.unwrap_or(TopologySpec::DEFAULT_P),
        m: raw.parse("m")?,
        m_scale,
        eta: raw.parse("eta")?.unwrap_or(TopologySpec::DEFAULT_ETA),
        complete_basis: raw.parse_bool("complete-basis")?,
        input,
        contraction_trials: raw.parse("contraction-trials")?.unwrap_or(2000),
        problem,
        gamma: raw.parse("gamma")?.unwrap_or(gamma0),
        decay: raw.parse("decay")?.unwrap_or(decay0),
        decay_period: raw.parse("decay-period")?.unwrap_or(40),
        iters: positive("iters", raw.parse("iters")?.unwrap_or(iters0))?,
        trials: positive("trials", raw.parse("trials")?.unwrap_or(trials0))?,
        record_every: positive("record-every", raw.parse("record-every")?.unwrap_or(1))?,
        seed: raw.parse("seed")?.unwrap_or(0),
        out: raw.parse("out")?,
    };
    cfg.check()?;
    Ok(cfg)
}

fn parse_sizes(s: &str) -> Result<Vec<usize>, CliError> {
    let sizes = s
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("invalid value for `sizes`: `{s}`")))?;
    if sizes.len() < 2 {
        return Err(CliError::Usage("invalid value for `sizes`: need at least two sizes".into()));
    }
    Ok(sizes)
}

impl Config {
    fn check(&self) -> Result<(), CliError> {
        if self.family.is_some() {
            match self.cmd {
                Cmd::SizeSweep => {
                    for &n in &self.sizes {
                        self.spec_for(n).validate()?;
                    }
                }
                _ => self.spec()?.validate()?,
            }
        } else if self.rho_given && !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(CliError::Usage(format!("invalid value for `rho`: must lie in (0, 1), got {}", self.rho)));
        }
        if self.cmd == Cmd::TopoVerify && self.contraction_trials < 100 {
            return Err(CliError::Usage(format!(
                "invalid value for `contraction-trials`: need at least 100, got {}",
                self.contraction_trials
            )));
        }
        if self.cmd.is_optim() {
            self.schedule().validate()?;
        }
        if let Some(p) = &self.problem {
            for (name, v) in [("sigma-s", p.sigma_s), ("sigma-h", p.sigma_h), ("reg", p.reg), ("sigma-n", p.sigma_n)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(CliError::Usage(format!(
                        "invalid value for `{name}`: must be finite and non-negative, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// The topology spec for a size other than `n`, with the master seed.
    pub fn spec_for(&self, n: usize) -> TopologySpec {
        let mut spec = TopologySpec::new(self.family.unwrap_or(Family::Custom), n)
            .with_rho(self.rho)
            .with_p(self.p)
            .with_eta(self.eta)
            .with_complete_basis(self.complete_basis)
            .with_seed(self.seed);
        let m = match self.m_scale {
            Some(s) => Some(((s * (n as f64).ln()).ceil() as usize).max(1)),
            None => self.m,
        };
        if let Some(m) = m {
            spec = spec.with_m(m);
        }
        spec
    }

    pub fn spec(&self) -> Result<TopologySpec, CliError> {
        Ok(self.spec_for(required(self.n, "n")?))
    }

    pub fn schedule(&self) -> StepSchedule {
        if self.decay == 1.0 {
            StepSchedule::Constant(self.gamma)
        } else {
            StepSchedule::Staircase {
                gamma0: self.gamma,
                factor: self.decay,
                period: self.decay_period,
            }
        }
    }

    pub fn algorithm(&self) -> Option<Algorithm> {
        match self.cmd {
            Cmd::Dsgd => Some(Algorithm::Dsgd),
            Cmd::Dsgt => Some(Algorithm::Dsgt),
            _ => None,
        }
    }

    /// Every setting the command uses, with defaults filled in. Feeding the
    /// rendered echo back through `--config` reproduces the run.
    pub fn echo(&self) -> Sidecar {
        let mut s = Sidecar::new();
        s.set("command", self.cmd.name());
        let uses_basis = self.family.is_some_and(|f| f.uses_basis());
        for k in keys_for(self.cmd) {
            let v = match k.name {
                "family" => self.family.map(|f| f.to_string()),
                "n" => self.n.map(|n| n.to_string()),
                "sizes" => Some(join(&self.sizes)),
                "rho" => Some(self.rho.to_string()),
                "p" => Some(self.p.to_string()),
                "m" if uses_basis && self.m_scale.is_none() => {
                    self.n.map(|n| self.spec_for(n).basis_count().to_string())
                }
                "m" => None,
                "m-scale" => self.m_scale.map(|v| v.to_string()),
                "eta" => Some(self.eta.to_string()),
                "complete-basis" => Some(self.complete_basis.to_string()),
                "input" => self.input.as_ref().map(|p| p.display().to_string()),
                "contraction-trials" => Some(self.contraction_trials.to_string()),
                "gamma" => Some(self.gamma.to_string()),
                "decay" => Some(self.decay.to_string()),
                "decay-period" => Some(self.decay_period.to_string()),
                "iters" => Some(self.iters.to_string()),
                "trials" => Some(self.trials.to_string()),
                "record-every" => Some(self.record_every.to_string()),
                "seed" => Some(self.seed.to_string()),
                "out" => self.out.as_ref().map(|p| p.display().to_string()),
                other => self.problem.as_ref().and_then(|p| problem_value(p, other)),
            };
            if let Some(v) = v {
                s.set(k.name, v);
            }
        }
        s
    }
}

fn problem_value(p: &ProblemConfig, key: &str) -> Option<String> {
    let ls = p.kind == ProblemKind::LeastSquares;
    Some(match key {
        "problem" => p.kind.as_str().to_string(),
        "d" => p.d.to_string(),
        "k" if ls => p.k.to_string(),
        "sigma-s" if ls => p.sigma_s.to_string(),
        "l" if !ls => p.l.to_string(),
        "sigma-h" if !ls => p.sigma_h.to_string(),
        "reg" if !ls => p.reg.to_string(),
        "label-rule" if !ls => p.label_rule.as_str().to_string(),
        "sigma-n" => p.sigma_n.to_string(),
        _ => return None,
    })
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
