//! Run configuration: TOML parsing, key overrides, validation and hashing.
//!
//! Unknown keys are hard errors everywhere (no silent typos), and every
//! validation failure names the offending key path. `--set section.key=value`
//! overrides are applied to the parsed table before deserialization, so they
//! obey exactly the same validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hjbc_core::catalog::{CatalogParams, ProblemSpec, CATALOG_NAMES};
use hjbc_core::sim::{ProjectionMode, SimParams};

/// Configuration error with the offending key path where applicable.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid override \"{0}\": expected section.key=value")]
    BadOverride(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    Value,
    Policy,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    /// Catalog name; mutually exclusive with `inline`.
    pub catalog: Option<String>,
    /// Numeric parameters for catalog problems.
    pub params: CatalogParams,
    /// Full inline problem description.
    pub inline: Option<ProblemSpec>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            catalog: Some("degenerate-ball".to_string()),
            params: CatalogParams::default(),
            inline: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub h: f64,
    /// Boundary band width; defaults to h.
    pub boundary_band: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            h: 0.05,
            boundary_band: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub method: SolveMethod,
    /// Boundary degeneracy threshold on |σᵀn|; defaults to 4h.
    pub degeneracy_tol: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1_000_000,
            method: SolveMethod::Value,
            degeneracy_tol: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub projection_mode: ProjectionMode,
    /// Start point; defaults to the in-domain node nearest the origin.
    pub start: Option<Vec<f64>>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 5.0,
            n_paths: 1000,
            seed: 12345,
            projection_mode: ProjectionMode::ProjectToBoundary,
            start: None,
        }
    }
}

impl SimConfig {
    pub fn params(&self) -> SimParams {
        SimParams {
            dt: self.dt,
            horizon: self.horizon,
            n_paths: self.n_paths,
            seed: self.seed,
            projection_mode: self.projection_mode,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ZtestConfig {
    pub checkpoints: Vec<f64>,
}

impl Default for ZtestConfig {
    fn default() -> Self {
        Self {
            checkpoints: vec![0.5, 1.0, 2.0, 5.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Residual tolerance; defaults to 10 × solver.tol.
    pub tol: Option<f64>,
    pub pass_fraction: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tol: None,
            pass_fraction: 0.99,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ViabilityConfig {
    pub n_samples: usize,
    pub tol_sigma: f64,
    pub tol_drift: f64,
    pub delta_strict: f64,
}

impl Default for ViabilityConfig {
    fn default() -> Self {
        let d = hjbc_core::viability::ViabilityTols::default();
        Self {
            n_samples: 1000,
            tol_sigma: d.tol_sigma,
            tol_drift: d.tol_drift,
            delta_strict: d.delta_strict,
        }
    }
}

impl ViabilityConfig {
    pub fn tols(&self) -> hjbc_core::viability::ViabilityTols {
        hjbc_core::viability::ViabilityTols {
            tol_sigma: self.tol_sigma,
            tol_drift: self.tol_drift,
            delta_strict: self.delta_strict,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory; `--out` and the HJBC_OUT env var override it.
    pub dir: Option<PathBuf>,
    /// Also write per-path CSVs from `simulate`.
    pub write_paths: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub sim: SimConfig,
    pub ztest: ZtestConfig,
    pub verify: VerifyConfig,
    pub viability: ViabilityConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match (&self.problem.catalog, &self.problem.inline) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::Invalid(
                    "problem.catalog and problem.inline are mutually exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(ConfigError::Invalid(
                    "one of problem.catalog or problem.inline is required".into(),
                ))
            }
            _ => {}
        }
        if let Some(name) = &self.problem.catalog {
            if !CATALOG_NAMES.contains(&name.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "problem.catalog \"{name}\" not found; known: {CATALOG_NAMES:?}"
                )));
            }
        }
        if !(self.grid.h > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "grid.h must be positive, got {}",
                self.grid.h
            )));
        }
        if let Some(b) = self.grid.boundary_band {
            if !(b >= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "grid.boundary_band must be nonnegative, got {b}"
                )));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "solver.tol must be positive, got {}",
                self.solver.tol
            )));
        }
        if self.solver.max_iter == 0 {
            return Err(ConfigError::Invalid("solver.max_iter must be at least 1".into()));
        }
        if !(self.sim.dt > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "sim.dt must be positive, got {}",
                self.sim.dt
            )));
        }
        if !(self.sim.horizon > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "sim.horizon must be positive, got {}",
                self.sim.horizon
            )));
        }
        if self.sim.n_paths == 0 {
            return Err(ConfigError::Invalid("sim.n_paths must be at least 1".into()));
        }
        if self.ztest.checkpoints.is_empty() {
            return Err(ConfigError::Invalid("ztest.checkpoints must be non-empty".into()));
        }
        for &t in &self.ztest.checkpoints {
            if !(t > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "ztest.checkpoints entries must be positive, got {t}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.verify.pass_fraction) {
            return Err(ConfigError::Invalid(format!(
                "verify.pass_fraction must lie in [0, 1], got {}",
                self.verify.pass_fraction
            )));
        }
        if self.viability.n_samples == 0 {
            return Err(ConfigError::Invalid(
                "viability.n_samples must be at least 1".into(),
            ));
        }
        if let Some(inline) = &self.problem.inline {
            if !(inline.beta > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "problem.inline.beta must be positive, got {}",
                    inline.beta
                )));
            }
        }
        if !(self.problem.params.beta > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "problem.params.beta must be positive, got {}",
                self.problem.params.beta
            )));
        }
        Ok(())
    }
}

/// Parses a literal as a TOML value; bare words fall back to strings.
fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(v) = raw.parse::<i64>() {
        return toml::Value::Integer(v);
    }
    if let Ok(v) = raw.parse::<f64>() {
        return toml::Value::Float(v);
    }
    if let Ok(v) = raw.parse::<bool>() {
        return toml::Value::Boolean(v);
    }
    // allow inline arrays/tables through the TOML parser
    if raw.starts_with('[') || raw.starts_with('{') {
        if let Ok(table) = format!("x = {raw}").parse::<toml::Table>() {
            if let Some(v) = table.get("x") {
                return v.clone();
            }
        }
    }
    toml::Value::String(raw.to_string())
}

/// Applies one `section.key=value` override to the parsed table.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(spec.to_string()))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(ConfigError::BadOverride(spec.to_string()));
    }
    let mut current = table;
    for key in &keys[..keys.len() - 1] {
        current = current
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                ConfigError::Invalid(format!("override path \"{path}\" crosses a non-table value"))
            })?;
    }
    current.insert(
        keys[keys.len() - 1].to_string(),
        parse_override_value(raw.trim()),
    );
    Ok(())
}

/// Loads, overrides, validates; also returns the sha-256 hash of the
/// effective inputs (file bytes plus override strings) for provenance.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<(RunConfig, String), ConfigError> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.to_path_buf(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    for spec in overrides {
        apply_override(&mut table, spec)?;
    }
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    config.validate()?;

    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    for spec in overrides {
        hasher.update(b"\x00");
        hasher.update(spec.as_bytes());
    }
    let hash = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    Ok((config, hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_catalog_config_fills_defaults() {
        let f = write_temp(
            "[problem]\ncatalog = \"constant-cost\"\n[problem.params]\nc = 2.0\nbeta = 1.0\n",
        );
        let (cfg, hash) = load_config(Some(f.path()), &[]).unwrap();
        assert_eq!(cfg.problem.catalog.as_deref(), Some("constant-cost"));
        assert_eq!(cfg.problem.params.c, 2.0);
        assert_eq!(cfg.solver.tol, 1e-8);
        assert_eq!(cfg.sim.n_paths, 1000);
        assert_eq!(hash.len(), 64);
    }

    #[test]
    fn zero_h_names_the_key() {
        let f = write_temp("[problem]\ncatalog = \"constant-cost\"\n[grid]\nh = 0.0\n");
        let err = load_config(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("grid.h"), "{err}");
    }

    #[test]
    fn unknown_key_names_the_key() {
        let f = write_temp("[problem]\ncatalog = \"constant-cost\"\n[solver]\ntolrance = 1e-8\n");
        let err = load_config(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("tolrance"), "{err}");
    }

    #[test]
    fn unknown_catalog_name_rejected() {
        let f = write_temp("[problem]\ncatalog = \"no-such\"\n");
        let err = load_config(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("no-such"), "{err}");
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let f = write_temp("[problem]\ncatalog = \"constant-cost\"\n");
        let (base, h1) = load_config(Some(f.path()), &[]).unwrap();
        let (over, h2) =
            load_config(Some(f.path()), &["solver.tol=1e-6".to_string()]).unwrap();
        assert_eq!(base.solver.tol, 1e-8);
        assert_eq!(over.solver.tol, 1e-6);
        assert_ne!(h1, h2);
    }

    #[test]
    fn override_validation_still_applies() {
        let f = write_temp("[problem]\ncatalog = \"constant-cost\"\n");
        let err = load_config(Some(f.path()), &["grid.h=-1".to_string()]).unwrap_err();
        assert!(err.to_string().contains("grid.h"), "{err}");
    }

    #[test]
    fn malformed_override_rejected() {
        let f = write_temp("[problem]\ncatalog = \"constant-cost\"\n");
        assert!(matches!(
            load_config(Some(f.path()), &["solver.tol".to_string()]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn inline_and_catalog_exclusive() {
        let f = write_temp(
            r#"
[problem]
catalog = "constant-cost"
[problem.inline]
beta = 1.0
controls = [[0.0]]
[problem.inline.domain]
kind = "ball"
center = [0.0, 0.0]
radius = 1.0
[problem.inline.drift]
name = "zero"
[problem.inline.diffusion]
name = "none"
[problem.inline.cost]
name = "constant"
c = 1.0
"#,
        );
        let err = load_config(Some(f.path()), &[]).unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");
    }

    #[test]
    fn hash_is_deterministic() {
        let f = write_temp("[problem]\ncatalog = \"coarse-mdp\"\n");
        let (_, h1) = load_config(Some(f.path()), &[]).unwrap();
        let (_, h2) = load_config(Some(f.path()), &[]).unwrap();
        assert_eq!(h1, h2);
    }
}
