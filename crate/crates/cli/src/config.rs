//! Run configuration: a TOML file with a top-level seed and strategy list
//! plus `[dataset]`, `[learner]` and `[loop]` sections.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use false_al::dataset::{self, DatasetBundle, DatasetConfig, FileFormat};
use false_al::experiment::{GridConfig, LoopConfig};
use false_al::learner::LearnerConfig;
use false_al::strategies::StrategyKind;
use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<StrategyKind>,
    pub dataset: Option<DatasetConfig>,
    /// Delimited dataset file, relative to the config file.
    pub dataset_file: Option<PathBuf>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default, rename = "loop")]
    pub loop_config: LoopConfig,
}

fn all_strategies() -> Vec<StrategyKind> {
    StrategyKind::ALL.to_vec()
}

/// A parsed config together with its source location and canonical hash.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, path, seed_override)
    }

    pub fn parse(text: &str, path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(seed) = seed_override {
            let seed = i64::try_from(seed).context("--seed must fit in a signed 64-bit integer")?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let hash = canonical_hash(&table)?;
        let config: RunConfig = table
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        if config.strategies.is_empty() {
            bail!(
                "config {}: `strategies` must list at least one strategy",
                path.display()
            );
        }
        match (&config.dataset, &config.dataset_file) {
            (Some(_), Some(_)) => bail!(
                "config {}: set either [dataset] or `dataset_file`, not both",
                path.display()
            ),
            (None, None) => bail!("config {}: missing [dataset] section or `dataset_file`", path.display()),
            _ => {}
        }
        Ok(Self {
            config,
            path: path.to_path_buf(),
            hash,
        })
    }

    pub fn dataset_path(&self) -> Option<PathBuf> {
        self.config.dataset_file.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                self.path.parent().unwrap_or(Path::new(".")).join(p)
            }
        })
    }

    /// Generates or ingests the configured dataset.
    pub fn load_dataset(&self) -> Result<DatasetBundle> {
        match (&self.config.dataset, self.dataset_path()) {
            (Some(cfg), _) => dataset::generate(cfg).context("generating dataset"),
            (None, Some(path)) => dataset::ingest(&path, FileFormat::DelimitedText)
                .with_context(|| format!("reading dataset {}", path.display())),
            (None, None) => unreachable!("checked at parse time"),
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            experiment_seed: self.config.seed,
            strategies: self.config.strategies.clone(),
            loop_config: self.config.loop_config.clone(),
            learner: self.config.learner.clone(),
        }
    }
}

/// SHA-256 over the key-sorted JSON rendering of the parsed table, so the
/// hash ignores formatting and key order.
pub fn canonical_hash(table: &toml::Table) -> Result<String> {
    let value = serde_json::to_value(table)?;
    let canonical = serde_json::to_string(&value)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 3
strategies = ["false", "random"]

[dataset]
family = "gaussian-mixture"
n_pool = 120
n_test = 40
classes = 3
dim = 2
class_separation = 2.0
seed = 1

[loop]
initial_pool_size = 20
query_batch = 10
rounds = 3
seeds = 2
"#;

    fn parse(text: &str) -> Result<LoadedConfig> {
        LoadedConfig::parse(text, Path::new("/tmp/x.toml"), None)
    }

    #[test]
    fn parses_sections_and_defaults() {
        let c = parse(BASE).unwrap();
        assert_eq!(c.config.strategies, vec![StrategyKind::False, StrategyKind::Random]);
        assert_eq!(c.config.loop_config.rounds, 3);
        assert_eq!(c.config.learner, LearnerConfig::default());
        assert_eq!(c.config.dataset.as_ref().unwrap().corruptions.len(), 6);
    }

    #[test]
    fn hash_ignores_key_order_and_formatting() {
        let reordered = r#"
strategies = ["false", "random"]
seed = 3
[loop]
seeds = 2
rounds = 3
query_batch = 10
initial_pool_size = 20
[dataset]
seed = 1
class_separation = 2.0
dim = 2
classes = 3
n_test = 40
n_pool = 120
family = "gaussian-mixture"
"#;
        assert_eq!(parse(BASE).unwrap().hash, parse(reordered).unwrap().hash);
        let other = BASE.replace("seed = 3", "seed = 4");
        assert_ne!(parse(BASE).unwrap().hash, parse(&other).unwrap().hash);
    }

    #[test]
    fn seed_override_changes_seed_and_hash() {
        let c = LoadedConfig::parse(BASE, Path::new("x.toml"), Some(9)).unwrap();
        assert_eq!(c.config.seed, 9);
        assert_ne!(c.hash, parse(BASE).unwrap().hash);
    }

    #[test]
    fn unknown_keys_are_named() {
        let bad = BASE.replace("rounds = 3", "rounds = 3\nepochs = 4");
        let err = format!("{:#}", parse(&bad).unwrap_err());
        assert!(err.contains("epochs"), "{err}");
        let bad = BASE.replace("dim = 2", "dim = 2\nwidth = 2");
        let err = format!("{:#}", parse(&bad).unwrap_err());
        assert!(err.contains("width"), "{err}");
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let bad = BASE.replace("\"random\"", "\"badge\"");
        let err = format!("{:#}", parse(&bad).unwrap_err());
        assert!(err.contains("badge"), "{err}");
    }

    #[test]
    fn dataset_source_must_be_unique() {
        let both = BASE.replace("seed = 3", "seed = 3\ndataset_file = \"d.csv\"");
        assert!(parse(&both).is_err());
        let idx = BASE.find("[dataset]").unwrap();
        let end = BASE.find("[loop]").unwrap();
        let none = format!("{}{}", &BASE[..idx], &BASE[end..]);
        assert!(parse(&none).is_err());
    }

    #[test]
    fn relative_dataset_file_resolves_next_to_config() {
        let idx = BASE.find("[dataset]").unwrap();
        let end = BASE.find("[loop]").unwrap();
        let text = format!("dataset_file = \"data/d.csv\"\n{}{}", &BASE[..idx], &BASE[end..]);
        let c = LoadedConfig::parse(&text, Path::new("/etc/exp/run.toml"), None).unwrap();
        assert_eq!(c.dataset_path().unwrap(), PathBuf::from("/etc/exp/data/d.csv"));
    }
}
