//! Run manifest: a single JSON document describing what to run.

use std::fmt;
use std::path::{Path, PathBuf};

use pipesched_core::suite::{Fault, SuiteConfig};
use pipesched_core::{validate_cluster, ClusterSpec, MemoryModel, Policy, Time};
use serde::{Deserialize, Serialize};

/// Failure that maps to an exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    /// Exit 2: the manifest or its referenced inputs are unusable.
    Config {
        field: String,
        rule: String,
        message: String,
    },
    /// Exit 2: artifacts could not be written.
    Io { path: String, message: String },
}

impl CliError {
    pub fn config(field: &str, rule: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            rule: rule.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// One JSON object on one line.
    pub fn machine_line(&self) -> String {
        let v = match self {
            CliError::Config { field, rule, message } => serde_json::json!({
                "error": "config",
                "field": field,
                "rule": rule,
                "message": message,
            }),
            CliError::Io { path, message } => serde_json::json!({
                "error": "io",
                "path": path,
                "message": message,
            }),
        };
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.machine_line())
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

fn default_windows() -> u32 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub policies: Vec<Policy>,
    /// Inline cluster; its depth is the only allowed depth.
    #[serde(default)]
    pub cluster: Option<ClusterSpec>,
    /// Cluster JSON file, relative to the manifest.
    #[serde(default)]
    pub cluster_path: Option<PathBuf>,
    /// Uniform costs for synthesized clusters.
    #[serde(default)]
    pub fwd_cost: Option<Time>,
    #[serde(default)]
    pub bwd_cost: Option<Time>,
    #[serde(default)]
    pub update_cost: Option<Time>,
    #[serde(default)]
    pub comm_cost: Option<Time>,
    #[serde(default)]
    pub depths: Vec<u32>,
    /// Accumulation thresholds (minibatches per window).
    #[serde(default)]
    pub thresholds: Vec<u32>,
    #[serde(default = "default_windows")]
    pub windows: u32,
    #[serde(default)]
    pub zero_enabled: bool,
    /// Step sizes for the optimizer checks.
    #[serde(default)]
    pub etas: Vec<f64>,
    #[serde(default)]
    pub memory: Option<MemoryModel>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub formats: Vec<Format>,
    /// Suite checks to run; empty runs all.
    #[serde(default)]
    pub checks: Vec<u32>,
    #[serde(default)]
    pub topology_trials: Option<u32>,
    #[serde(default)]
    pub fuzz_cases: Option<u32>,
    #[serde(default)]
    pub fault_injection: Option<Fault>,
}

/// One (policy, depth, threshold) simulation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub policy: Policy,
    pub depth: u32,
    pub threshold: u32,
    pub windows: u32,
    pub zero_enabled: bool,
    pub cluster: ClusterSpec,
}

impl Cell {
    pub fn slug(&self) -> String {
        format!("{}_d{}_T{}", self.policy.name(), self.depth, self.threshold)
    }
}

/// A manifest with referenced files loaded and defaults applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub manifest: RunManifest,
    pub base_cluster: Option<ClusterSpec>,
    pub seed: u64,
    pub memory: MemoryModel,
}

pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("manifest", "file_exists", format!("{}: {e}", path.display())))?;
    let manifest: RunManifest = serde_json::from_str(&text)
        .map_err(|e| CliError::config("manifest", "json_schema", e.to_string()))?;
    resolve(manifest, path.parent().unwrap_or(Path::new(".")))
}

pub fn resolve(manifest: RunManifest, base_dir: &Path) -> Result<Resolved, CliError> {
    let base_cluster = match (&manifest.cluster, &manifest.cluster_path) {
        (Some(_), Some(_)) => {
            return Err(CliError::config("cluster", "one_source", "give cluster or cluster_path, not both"))
        }
        (Some(c), None) => Some(c.clone()),
        (None, Some(p)) => {
            let full = base_dir.join(p);
            let text = std::fs::read_to_string(&full)
                .map_err(|e| CliError::config("cluster_path", "file_exists", format!("{}: {e}", full.display())))?;
            Some(
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config("cluster_path", "json_schema", e.to_string()))?,
            )
        }
        (None, None) => None,
    };
    if let Some(c) = &base_cluster {
        if let Some(v) = validate_cluster(c).first() {
            return Err(CliError::config(&format!("cluster.{}", v.field), "cluster_valid", v.message.clone()));
        }
    }
    if manifest.windows == 0 {
        return Err(CliError::config("windows", "positive", "windows must be ≥ 1"));
    }
    if manifest.etas.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(CliError::config("etas", "positive", "step sizes must be positive"));
    }
    Ok(Resolved {
        seed: manifest.seed.unwrap_or(0),
        memory: manifest.memory.clone().unwrap_or_default(),
        base_cluster,
        manifest,
    })
}

impl Resolved {
    pub fn depths(&self) -> Result<Vec<u32>, CliError> {
        let m = &self.manifest;
        match &self.base_cluster {
            Some(c) if m.depths.is_empty() => Ok(vec![c.depth]),
            Some(c) => match m.depths.iter().find(|&&d| d != c.depth) {
                Some(d) => Err(CliError::config(
                    "depths",
                    "match_cluster",
                    format!("depth {d} differs from the cluster depth {}", c.depth),
                )),
                None => Ok(m.depths.clone()),
            },
            None if m.depths.is_empty() => Err(CliError::config("depths", "non_empty", "depth grid is empty")),
            None => Ok(m.depths.clone()),
        }
    }

    fn cluster_for(&self, depth: u32) -> Result<ClusterSpec, CliError> {
        if let Some(c) = &self.base_cluster {
            return Ok(c.clone());
        }
        let m = &self.manifest;
        let mut c = ClusterSpec::uniform(
            depth,
            m.fwd_cost.unwrap_or(Time::int(1)),
            m.bwd_cost.unwrap_or(Time::int(2)),
        );
        c.update_cost = m.update_cost.unwrap_or(Time::ZERO);
        c.comm_cost = m.comm_cost.unwrap_or(Time::ZERO);
        if let Some(v) = validate_cluster(&c).first() {
            return Err(CliError::config(&format!("cluster.{}", v.field), "cluster_valid", v.message.clone()));
        }
        Ok(c)
    }

    /// Rejects depths a requested policy cannot run at, naming the rule.
    pub fn check_depth_rules(&self) -> Result<(), CliError> {
        let depths = self.depths()?;
        for &p in &self.manifest.policies {
            if matches!(p, Policy::Amdp | Policy::Chimera) {
                if let Some(d) = depths.iter().find(|&&d| d % 2 != 0) {
                    return Err(CliError::config(
                        "depths",
                        "even_depth",
                        format!("{} requires an even pipeline depth (d/2 pipelines); got d={d}", p.name()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn formats(&self, cli: &[Format]) -> Vec<Format> {
        let mut f: Vec<Format> = if !cli.is_empty() {
            cli.to_vec()
        } else if !self.manifest.formats.is_empty() {
            self.manifest.formats.clone()
        } else {
            vec![Format::Csv, Format::Json, Format::Svg]
        };
        f.sort();
        f.dedup();
        f
    }

    /// The policy × depth × threshold grid, in manifest order.
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let m = &self.manifest;
        if m.policies.is_empty() {
            return Err(CliError::config("policies", "non_empty", "policy list is empty"));
        }
        if m.thresholds.is_empty() {
            return Err(CliError::config("thresholds", "non_empty", "threshold grid is empty"));
        }
        if let Some(t) = m.thresholds.iter().find(|&&t| t == 0) {
            return Err(CliError::config("thresholds", "positive", format!("threshold {t} must be ≥ 1")));
        }
        self.check_depth_rules()?;
        let mut out = Vec::new();
        for &policy in &m.policies {
            for &depth in &self.depths()? {
                for &threshold in &m.thresholds {
                    out.push(Cell {
                        policy,
                        depth,
                        threshold,
                        windows: m.windows,
                        zero_enabled: m.zero_enabled,
                        cluster: self.cluster_for(depth)?,
                    });
                }
            }
        }
        Ok(out)
    }

    pub fn suite_config(&self) -> SuiteConfig {
        let m = &self.manifest;
        let d = SuiteConfig::default();
        SuiteConfig {
            topology_trials: m.topology_trials.unwrap_or(d.topology_trials),
            fuzz_cases: m.fuzz_cases.unwrap_or(d.fuzz_cases),
            seed: self.seed,
            etas: if m.etas.is_empty() { d.etas } else { m.etas.clone() },
            fault: m.fault_injection,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Resolved, CliError> {
        let m: RunManifest = serde_json::from_str(s).map_err(|e| CliError::config("manifest", "json_schema", e.to_string()))?;
        resolve(m, Path::new("."))
    }

    #[test]
    fn odd_amdp_depth_names_the_rule() {
        let r = parse(r#"{"policies":["AMDP"],"depths":[4,5],"thresholds":[4]}"#).unwrap();
        match r.cells() {
            Err(CliError::Config { rule, field, .. }) => {
                assert_eq!(rule, "even_depth");
                assert_eq!(field, "depths");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_policies_rejected() {
        let r = parse(r#"{"depths":[4],"thresholds":[4]}"#).unwrap();
        assert!(matches!(r.cells(), Err(CliError::Config { ref rule, .. }) if rule == "non_empty"));
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(parse(r#"{"policies":["AMDP"],"depth":[4]}"#).is_err());
    }

    #[test]
    fn costs_accept_fractions() {
        let r = parse(r#"{"policies":["DAPPLE"],"depths":[2],"thresholds":[2],"fwd_cost":"1/2","bwd_cost":1}"#).unwrap();
        let c = r.cells().unwrap();
        assert_eq!(c[0].cluster.fwd_cost[0], Time::new(1, 2));
    }

    #[test]
    fn machine_line_is_single_line_json() {
        let e = CliError::config("depths", "even_depth", "AMDP requires an even pipeline depth\nsecond line");
        let line = e.machine_line();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["rule"], "even_depth");
    }
}
