use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::ProjectionOptions;
use crate::error::{Error, Result};
use crate::feature_store::SplitSpec;
use crate::knn::DEFAULT_K;
use crate::linear_probe::{default_lambda_grid, TrainOptions};
use crate::rejection::{ScoreConfig, Strategy};

/// Perturbation tag of unperturbed features.
pub const CLEAN: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    LinearProbe,
    Knn,
    KnnPlus,
}

impl Method {
    pub fn short_name(&self) -> &'static str {
        match self {
            Method::LinearProbe => "lp",
            Method::Knn => "nn",
            Method::KnnPlus => "nn+",
        }
    }

    /// Strategy used when none is configured.
    pub fn default_strategy(&self) -> Strategy {
        match self {
            Method::LinearProbe => Strategy::Msp,
            Method::Knn | Method::KnnPlus => Strategy::NearestNeighbor,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" | "linear_probe" => Ok(Method::LinearProbe),
            "nn" | "knn" => Ok(Method::Knn),
            "nn+" | "knn_plus" => Ok(Method::KnnPlus),
            _ => Err(Error::validation(format!("unknown method {s:?} (expected lp, nn or nn+)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// One pool that the split carves into train/val/test.
    #[default]
    All,
    Train,
    Test,
}

/// One FEATSET file and the key it is registered under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureFile {
    /// Class the file holds (`"real"`, a generator name, or `"*"` for mixed files).
    #[serde(default = "any_source")]
    pub source: String,
    #[serde(default = "final_layer")]
    pub layer: i32,
    #[serde(default = "clean_tag")]
    pub perturbation: String,
    #[serde(default)]
    pub subset: Subset,
    pub path: PathBuf,
}

fn any_source() -> String {
    "*".into()
}

fn final_layer() -> i32 {
    -1
}

fn clean_tag() -> String {
    CLEAN.into()
}

impl FeatureFile {
    pub fn key(&self) -> String {
        format!("({}, layer {}, {})", self.source, self.layer, self.perturbation)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub layers: Vec<i32>,
    pub samples_per_class: Vec<usize>,
    pub known_class_counts: Vec<usize>,
    pub perturbations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub feature_files: Vec<FeatureFile>,
    /// Defaults to the five GenImage splits.
    #[serde(default)]
    pub splits: Vec<SplitSpec>,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Rejection strategy; the method's default when absent.
    #[serde(default)]
    pub strategy: Option<Strategy>,
    #[serde(default)]
    pub score: ScoreConfig,
    /// Layer used by single runs.
    #[serde(default = "final_layer")]
    pub layer: i32,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub projection: ProjectionOptions,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_method() -> Method {
    Method::LinearProbe
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn new(feature_files: Vec<FeatureFile>) -> Self {
        ExperimentConfig {
            feature_files,
            splits: Vec::new(),
            method: default_method(),
            k: default_k(),
            strategy: None,
            score: ScoreConfig::default(),
            layer: final_layer(),
            sweep: SweepConfig::default(),
            lambda_grid: default_lambda_grid(),
            train: TrainOptions::default(),
            projection: ProjectionOptions::default(),
            seed: 0,
            output_dir: default_output(),
        }
    }

    /// Parses a JSON config. Relative feature paths resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            for f in &mut cfg.feature_files {
                if f.path.is_relative() {
                    f.path = dir.join(&f.path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy.unwrap_or_else(|| self.method.default_strategy())
    }

    /// Split list with defaults filled in.
    pub fn resolved_splits(&self) -> Vec<SplitSpec> {
        if self.splits.is_empty() {
            SplitSpec::genimage_splits(0)
        } else {
            self.splits.clone()
        }
    }

    /// Seed actually used for split `index`.
    pub fn split_seed(&self, spec: &SplitSpec) -> u64 {
        spec.seed.wrapping_add(self.seed)
    }

    pub fn split_id(spec: &SplitSpec, index: usize) -> String {
        if spec.name.is_empty() {
            format!("split{}", index + 1)
        } else {
            spec.name.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_files.is_empty() {
            return Err(Error::validation("config lists no feature files"));
        }
        for s in &self.resolved_splits() {
            s.validate()?;
        }
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::validation("lambda grid is empty"));
        }
        let strategy = self.strategy();
        match (self.method, strategy) {
            (Method::LinearProbe, Strategy::NearestNeighbor) => {
                return Err(Error::validation("the nn score needs method nn or nn+"))
            }
            (Method::Knn | Method::KnnPlus, s) if s != Strategy::NearestNeighbor => {
                return Err(Error::validation(format!("kNN methods reject with the nn score, not {s}")))
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of the resolved config, so configs that
    /// differ only in formatting, key order or spelled-out defaults hash equal.
    /// The output directory does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.splits = self.resolved_splits();
        canonical.strategy = Some(self.strategy());
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
