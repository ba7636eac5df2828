//! CSV traces, key-value sidecars and atomic file writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::consensus::ConsensusTrace;
use crate::error::{Error, Result};
use crate::optim::OptTrace;
use crate::topology::{Family, GossipMatrix};

pub const TOPOLOGY_HEADER: &str = "row,col,weight";
pub const VERIFY_HEADER: &str = "family,n,M,rho_target,rho_measured,method,trials";
pub const CONSENSUS_HEADER: &str = "family,n,trial,iter,residual";
pub const OPTIM_HEADER: &str = "algo,family,n,trial,iter,grad_norm_sq,loss,consensus_residual";

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `trace.csv` → `trace.meta`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta")
}

/// Ordered `key = value` metadata.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sidecar {
    entries: Vec<(String, String)>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends or replaces `key`.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", no + 1)));
            }
            out.set(k, v.trim());
        }
        Ok(out)
    }
}

pub fn topology_csv(w: &GossipMatrix) -> String {
    let mut s = String::with_capacity(24 * (w.nnz() + 1));
    s.push_str(TOPOLOGY_HEADER);
    s.push('\n');
    for (i, j, v) in w.entries() {
        let _ = writeln!(s, "{i},{j},{v}");
    }
    s
}

/// Reads a `row,col,weight` CSV. `n` defaults to one past the largest index.
pub fn parse_topology_csv(text: &str, n: Option<usize>, family: Family) -> Result<GossipMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == TOPOLOGY_HEADER => {}
        _ => return Err(Error::Parse(format!("missing header `{TOPOLOGY_HEADER}`"))),
    }
    let mut trip = Vec::new();
    let mut max_idx = 0;
    for (no, line) in lines {
        let bad = || Error::Parse(format!("line {}: expected `row,col,weight`", no + 1));
        let mut parts = line.trim().split(',');
        let (Some(r), Some(c), Some(w), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let r: usize = r.trim().parse().map_err(|_| bad())?;
        let c: usize = c.trim().parse().map_err(|_| bad())?;
        let w: f64 = w.trim().parse().map_err(|_| bad())?;
        max_idx = max_idx.max(r).max(c);
        trip.push((r, c, w));
    }
    let n = n.unwrap_or(if trip.is_empty() { 0 } else { max_idx + 1 });
    GossipMatrix::from_triplets(n, trip, family)
}

pub fn consensus_csv(traces: &[ConsensusTrace]) -> String {
    let mut s = String::from(CONSENSUS_HEADER);
    s.push('\n');
    for tr in traces {
        for (t, r) in tr.records() {
            let _ = writeln!(s, "{},{},{},{t},{r}", tr.family, tr.n, tr.trial);
        }
    }
    s
}

pub fn optim_csv(trace: &OptTrace) -> String {
    let mut s = String::from(OPTIM_HEADER);
    s.push('\n');
    for tr in &trace.trials {
        for r in &tr.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                trace.algorithm,
                trace.family,
                trace.n,
                tr.trial,
                r.iter,
                r.grad_norm_sq,
                r.loss,
                r.consensus_residual
            );
        }
    }
    s
}

/// One line of `topo verify` output, without the trailing newline.
pub fn verify_line(
    family: Family,
    n: usize,
    m: Option<usize>,
    rho_target: Option<f64>,
    rho_measured: f64,
    method: &str,
    trials: usize,
) -> String {
    let opt = |v: Option<String>| v.unwrap_or_default();
    format!(
        "{family},{n},{},{},{rho_measured},{method},{trials}",
        opt(m.map(|v| v.to_string())),
        opt(rho_target.map(|v| v.to_string())),
    )
}
