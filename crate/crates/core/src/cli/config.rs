use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_exponential, load_csv, DataError, DatasetCollection, ExponentialSpec, ProjectileSpec};
use crate::fit::FitOptions;
use crate::gp::GpConfig;
use crate::lmetric::L2Options;

use super::CliError;

/// Exactly one source of datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Csv(PathBuf),
    Exponential(ExponentialSpec),
    Projectile(ProjectileSpec),
}

impl DataSource {
    /// Loads or generates the collection. A CSV file picks up annotations
    /// from a sibling `<stem>.annotations.json` when present.
    pub fn load(&self, seed: u64) -> Result<DatasetCollection, DataError> {
        match self {
            DataSource::Csv(path) => {
                let mut collection = load_csv(path)?;
                let sidecar = annotations_path(path);
                if sidecar.is_file() {
                    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(&sidecar)?)?;
                    collection.apply_annotations(&doc)?;
                }
                Ok(collection)
            }
            DataSource::Exponential(spec) => gen_exponential(spec, seed),
            DataSource::Projectile(spec) => spec.generate(seed),
        }
    }
}

pub fn annotations_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    csv.with_file_name(format!("{stem}.annotations.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreOptions {
    /// Candidates, by search L1, that get refitted and an L2 score.
    pub top_k: usize,
    /// Also rescore the best `per_size` candidates, by search L1, at each
    /// slot count.
    pub per_size: usize,
    #[serde(flatten)]
    pub l2: L2Options,
}

impl Default for RescoreOptions {
    fn default() -> Self {
        Self { top_k: 20, per_size: 3, l2: L2Options::default() }
    }
}

/// Search-phase fitting runs a small particle swarm; rescoring and refit
/// use the full one.
pub fn default_search_fit() -> FitOptions {
    let mut options = FitOptions::default();
    options.pso.swarm_size = 10;
    options.pso.iterations = 10;
    options
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: Option<DataSource>,
    pub out: Option<PathBuf>,
    pub gp: GpConfig,
    #[serde(default = "default_search_fit")]
    pub search_fit: FitOptions,
    pub fit: FitOptions,
    pub rescore: RescoreOptions,
    /// Prediction samples per system in curve files.
    pub curve_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            data: None,
            out: None,
            gp: GpConfig::default(),
            search_fit: default_search_fit(),
            fit: FitOptions::default(),
            rescore: RescoreOptions::default(),
            curve_points: 100,
        }
    }
}

impl RunConfig {
    /// Reads a config document, or the `config` member of a run manifest.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("tool").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| CliError::Config("a seed is required (config \"seed\" or --seed)".into()))
    }

    pub fn data(&self) -> Result<&DataSource, CliError> {
        self.data.as_ref().ok_or_else(|| CliError::Config("no data source (config \"data\" or --data)".into()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.seed()?;
        self.data()?;
        self.gp.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let ratio = self.rescore.l2.split_ratio;
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(CliError::Config(format!("split_ratio must lie in (0, 1), got {ratio}")));
        }
        if self.curve_points < 2 {
            return Err(CliError::Config("curve_points must be at least 2".into()));
        }
        Ok(())
    }
}
