//! CSV and structured-text report emission.
//!
//! Every output file starts with `#`-prefixed header comments embedding the
//! tool version and the config hash, so results are traceable to the exact
//! inputs that produced them. Floats are written with 17 significant digits
//! and round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use hjbc_core::grid::ValueFunction;
use hjbc_core::policy::Policy;
use hjbc_core::sim::{MCEstimate, SamplePath, ZProcessReport};
use hjbc_core::solver::SolveResult;
use hjbc_core::verify::{OrderingReport, SandwichReport, ViolationReport};
use hjbc_core::viability::ViabilityReport;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float with 17 significant digits (exact round-trip).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(config_hash: &str) -> String {
    format!("# hjbc {TOOL_VERSION}\n# config-sha256 {config_hash}\n")
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    std::fs::write(path, content)
        .map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

/// Value grid CSV: one coordinate column per axis, value, policy index and
/// node class, one row per in-domain node in flat-index order.
pub fn write_value_csv(
    value: &ValueFunction,
    policy: &Policy,
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let grid = &value.grid;
    let d = grid.dim();
    let mut out = header(config_hash);
    for k in 0..d {
        let _ = write!(out, "x{k},");
    }
    out.push_str("value,policy_index,node_class\n");
    for (ci, &flat) in grid.nodes.iter().enumerate() {
        let x = grid.coord(flat);
        for k in 0..d {
            let _ = write!(out, "{},", fmt_f64(x[k]));
        }
        let _ = writeln!(
            out,
            "{},{},{}",
            fmt_f64(value.values[ci]),
            policy.control_index[ci],
            grid.class_at(flat).label()
        );
    }
    write_file(path, &out)
}

/// Reads back a value CSV written by [`write_value_csv`] (used for
/// round-trip checks): returns (coordinates, values, policy indices).
#[allow(clippy::type_complexity)]
pub fn read_value_csv(path: &Path) -> anyhow::Result<(Vec<Vec<f64>>, Vec<f64>, Vec<usize>)> {
    let text = std::fs::read_to_string(path)?;
    let mut coords = Vec::new();
    let mut values = Vec::new();
    let mut policies = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        anyhow::ensure!(fields.len() >= 4, "malformed row: {line}");
        let d = fields.len() - 3;
        let x: Vec<f64> = fields[..d]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()?;
        coords.push(x);
        values.push(fields[d].parse()?);
        policies.push(fields[d + 1].parse()?);
    }
    Ok((coords, values, policies))
}

/// Convergence history CSV: iteration, sup-norm update.
pub fn write_history_csv(
    result: &SolveResult,
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let mut out = header(config_hash);
    out.push_str("iteration,sup_update\n");
    for (i, delta) in result.history.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_f64(*delta));
    }
    write_file(path, &out)
}

/// Per-sample viability CSV.
pub fn write_viability_csv(
    report: &ViabilityReport,
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let mut out = header(config_hash);
    let d = report
        .samples
        .first()
        .map(|s| s.location.len())
        .unwrap_or(0);
    for k in 0..d {
        let _ = write!(out, "x{k},");
    }
    out.push_str("best_control,tangency_residual,inward_value,pass,strong_pass\n");
    for s in &report.samples {
        for k in 0..d {
            let _ = write!(out, "{},", fmt_f64(s.location[k]));
        }
        let strong = match s.strong_pass {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.best_control,
            fmt_f64(s.tangency_residual),
            fmt_f64(s.inward_value),
            s.pass,
            strong
        );
    }
    write_file(path, &out)
}

/// Violating-node CSV for a residual check.
pub fn write_violations_csv(
    report: &ViolationReport,
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let mut out = header(config_hash);
    let d = report
        .violations
        .first()
        .map(|v| v.location.len())
        .unwrap_or(0);
    out.push_str("node,");
    for k in 0..d {
        let _ = write!(out, "x{k},");
    }
    out.push_str("residual\n");
    for v in &report.violations {
        let _ = write!(out, "{},", v.node);
        for k in 0..d {
            let _ = write!(out, "{},", fmt_f64(v.location[k]));
        }
        let _ = writeln!(out, "{}", fmt_f64(v.residual));
    }
    write_file(path, &out)
}

/// One simulated path as CSV.
pub fn write_path_csv(
    sample: &SamplePath,
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let mut out = header(config_hash);
    let d = sample.states.first().map(|x| x.len()).unwrap_or(0);
    out.push_str("t,");
    for k in 0..d {
        let _ = write!(out, "x{k},");
    }
    out.push_str("in_domain\n");
    for i in 0..sample.times.len() {
        let _ = write!(out, "{},", fmt_f64(sample.times[i]));
        for k in 0..d {
            let _ = write!(out, "{},", fmt_f64(sample.states[i][k]));
        }
        let _ = writeln!(out, "{}", sample.in_domain[i]);
    }
    write_file(path, &out)
}

/// Z-process checkpoints as CSV.
pub fn write_ztest_csv(
    reports: &[(&str, &ZProcessReport)],
    config_hash: &str,
    path: &Path,
) -> anyhow::Result<()> {
    let mut out = header(config_hash);
    out.push_str("test,direction,t,mean,std_error,ci_radius,reference,holds\n");
    for (label, rep) in reports {
        let dir = match rep.direction {
            hjbc_core::sim::Direction::Super => "super",
            hjbc_core::sim::Direction::Sub => "sub",
        };
        for c in &rep.checkpoints {
            let _ = writeln!(
                out,
                "{label},{dir},{},{},{},{},{},{}",
                fmt_f64(c.t),
                fmt_f64(c.mean),
                fmt_f64(c.std_error),
                fmt_f64(c.ci_radius),
                fmt_f64(rep.reference),
                c.holds
            );
        }
    }
    write_file(path, &out)
}

/// Builder for the human-readable summary with a machine-readable block.
pub struct Summary {
    lines: Vec<String>,
    machine: Vec<(String, String)>,
    config_hash: String,
}

impl Summary {
    pub fn new(config_hash: &str) -> Self {
        Self {
            lines: Vec::new(),
            machine: Vec::new(),
            config_hash: config_hash.to_string(),
        }
    }

    pub fn line(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }

    pub fn kv(&mut self, key: &str, value: impl Into<String>) {
        self.machine.push((key.to_string(), value.into()));
    }

    pub fn render(&self) -> String {
        let mut out = header(&self.config_hash);
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out.push_str("\n[summary]\n");
        for (k, v) in &self.machine {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        write_file(path, &self.render())
    }
}

/// Formats an MC estimate for summaries.
pub fn describe_estimate(est: &MCEstimate) -> String {
    format!(
        "mean {} ± SE {} over {} paths (truncation bias ≤ {})",
        fmt_f64(est.mean),
        fmt_f64(est.std_error),
        est.n_paths,
        fmt_f64(est.bias_bound)
    )
}

/// Formats an ordering report for summaries.
pub fn describe_ordering(rep: &OrderingReport) -> String {
    format!(
        "{} nodes checked, {} violations, worst margin {}",
        rep.checked,
        rep.violations.len(),
        fmt_f64(rep.worst_margin)
    )
}

/// Formats a sandwich report for summaries.
pub fn describe_sandwich(rep: &SandwichReport) -> String {
    format!(
        "lower: {}; upper: {}; pass: {}",
        describe_ordering(&rep.lower),
        describe_ordering(&rep.upper),
        rep.pass
    )
}
