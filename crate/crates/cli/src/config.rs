//! Run configuration: one TOML file shared by every subcommand.
//!
//! Paths inside the file are relative to the file's directory. Paths given
//! on the command line are relative to the working directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use skillrrt::domain::{builtin_source, Domain};
use skillrrt::filtering::{NoiseConfig, DEFAULT_REPLAYS, DEFAULT_THRESHOLD, DEFAULT_TRAJECTORIES};
use skillrrt::planner::PlannerParams;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConnectorMode {
    Scripted,
    Lazy,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub m: f64,
    pub replays: usize,
    /// Directory of plan files; defaults to `<out>/plans`.
    pub plans: Option<PathBuf>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_THRESHOLD,
            replays: DEFAULT_REPLAYS,
            plans: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub trajectories: usize,
    /// Kept-plan manifest; defaults to `<out>/kept.json`.
    pub manifest: Option<PathBuf>,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            trajectories: DEFAULT_TRAJECTORIES,
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Samples per iteration of the batched planner.
    pub batch_size: usize,
    /// Joint tolerance of the no-connector ablation.
    pub forbidden_tol: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            forbidden_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Built-in domain name or path to a domain TOML file.
    pub domain: String,
    pub seed: u64,
    pub out: PathBuf,
    pub problems: usize,
    /// Seed of the problem suite; defaults to the domain's own seed.
    pub problem_seed: Option<u64>,
    pub connectors: ConnectorMode,
    /// `planner.seed` is ignored: each problem derives its seed from `seed`.
    pub planner: PlannerParams,
    pub noise: NoiseConfig,
    pub filter: FilterConfig,
    pub export: ExportConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: "cardflip2d".into(),
            seed: 0,
            out: PathBuf::from("out"),
            problems: 50,
            problem_seed: None,
            connectors: ConnectorMode::Scripted,
            planner: PlannerParams::default(),
            noise: NoiseConfig::default(),
            filter: FilterConfig::default(),
            export: ExportConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub batch_size: Option<usize>,
    pub n_max: Option<usize>,
    pub m: Option<f64>,
    pub replays: Option<usize>,
}

/// A loaded configuration with its domain.
pub struct Loaded {
    pub config: RunConfig,
    pub domain: Domain,
    /// Hex sha256 over the effective config and the domain source.
    pub hash: String,
}

impl Loaded {
    pub fn plans_dir(&self) -> PathBuf {
        self.config.filter.plans.clone().unwrap_or_else(|| self.config.out.join("plans"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.config.export.manifest.clone().unwrap_or_else(|| self.config.out.join("kept.json"))
    }

    pub fn problem_seed(&self) -> u64 {
        self.config.problem_seed.unwrap_or(self.domain.rng_seed)
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn domain_source(base: &Path, name: &str) -> Result<String, CliError> {
    let path = rebase(base, Path::new(name));
    if path.is_file() {
        return fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read domain file {}: {e}", path.display())));
    }
    match builtin_source(name) {
        Some(src) => Ok(src.to_string()),
        None => Err(CliError::Config(format!("domain file {} not found", path.display()))),
    }
}

pub fn load(path: &Path, ov: &Overrides) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    config.out = rebase(base, &config.out);
    config.filter.plans = config.filter.plans.map(|p| rebase(base, &p));
    config.export.manifest = config.export.manifest.map(|p| rebase(base, &p));
    let source = domain_source(base, &config.domain)?;

    if let Some(s) = ov.seed {
        config.seed = s;
    }
    if let Some(o) = &ov.out {
        config.out = o.clone();
    }
    if let Some(b) = ov.batch_size {
        config.planner.batch_size = b;
        config.bench.batch_size = b;
    }
    if let Some(n) = ov.n_max {
        config.planner.n_max = n;
    }
    if let Some(m) = ov.m {
        config.filter.m = m;
    }
    if let Some(r) = ov.replays {
        config.filter.replays = r;
    }
    validate(&config)?;

    let domain = Domain::from_toml_str(&source).map_err(|e| CliError::Config(format!("domain {}: {e}", config.domain)))?;
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&config).expect("config serializes"));
    h.update(source.as_bytes());
    Ok(Loaded {
        config,
        domain,
        hash: hex::encode(h.finalize()),
    })
}

fn validate(c: &RunConfig) -> Result<(), CliError> {
    c.planner.validate()?;
    c.noise.validate()?;
    if !(0.0..=1.0).contains(&c.filter.m) {
        return Err(CliError::Config(format!("filter.m must lie in [0, 1], got {}", c.filter.m)));
    }
    if c.filter.replays == 0 {
        return Err(CliError::Config("filter.replays must be >= 1".into()));
    }
    if c.export.trajectories == 0 {
        return Err(CliError::Config("export.trajectories must be >= 1".into()));
    }
    if c.bench.batch_size == 0 || !(c.bench.forbidden_tol >= 0.0) {
        return Err(CliError::Config("bench.batch_size must be >= 1 and forbidden_tol >= 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run.toml", "domain = \"cardflip2d\"\n[planner]\nn_max = 50\n");
        let l = load(&p, &Overrides::default()).unwrap();
        assert_eq!(l.config.planner.n_max, 50);
        assert_eq!(l.config.filter.replays, 400);
        assert_eq!(l.config.out, dir.path().join("out"));
        let ov = Overrides {
            n_max: Some(7),
            m: Some(0.5),
            ..Default::default()
        };
        let l2 = load(&p, &ov).unwrap();
        assert_eq!(l2.config.planner.n_max, 7);
        assert_eq!(l2.config.filter.m, 0.5);
        assert_ne!(l.hash, l2.hash);
        assert_eq!(l.hash, load(&p, &Overrides::default()).unwrap().hash);
    }

    #[test]
    fn missing_domain_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run.toml", "domain = \"nope/d.toml\"\n");
        match load(&p, &Overrides::default()) {
            Err(CliError::Config(m)) => assert!(m.contains("nope/d.toml"), "{m}"),
            _ => panic!("expected config error"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "run.toml", "[planner]\nn_maxx = 3\n");
        assert!(matches!(load(&p, &Overrides::default()), Err(CliError::Config(_))));
    }

    #[test]
    fn domain_file_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "d.toml", builtin_source("twoshelf").unwrap());
        let p = write(dir.path(), "run.toml", "domain = \"d.toml\"\n");
        assert_eq!(load(&p, &Overrides::default()).unwrap().domain.name, "twoshelf");
    }
}
