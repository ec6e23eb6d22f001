use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::feature_store::{apply_split, apply_split_with_test_pool, merge, read_feature_set, FeatureSet, PartitionedData, SplitSpec};

use super::config::{FeatureFile, Subset};

/// Features of one (layer, perturbation) pair, either as a single pool or
/// with a predefined train/test boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Pool(FeatureSet),
    Presplit { train: FeatureSet, test: FeatureSet },
}

impl Dataset {
    pub fn partition(&self, spec: &SplitSpec) -> Result<PartitionedData> {
        match self {
            Dataset::Pool(set) => apply_split(set, spec),
            Dataset::Presplit { train, test } => apply_split_with_test_pool(train, test, spec),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Dataset::Pool(s) => s.dim(),
            Dataset::Presplit { train, .. } => train.dim(),
        }
    }
}

/// Supplies the dataset for a (layer, perturbation tag) pair.
pub trait FeatureProvider: Sync {
    fn dataset(&self, layer: i32, perturbation: &str) -> Result<Dataset>;
}

/// Datasets held in memory, keyed by (layer, perturbation tag).
#[derive(Debug, Clone, Default)]
pub struct MemoryProvider {
    pub datasets: BTreeMap<(i32, String), Dataset>,
}

impl MemoryProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, layer: i32, perturbation: &str, data: Dataset) -> Self {
        self.datasets.insert((layer, perturbation.to_string()), data);
        self
    }
}

impl FeatureProvider for MemoryProvider {
    fn dataset(&self, layer: i32, perturbation: &str) -> Result<Dataset> {
        self.datasets
            .get(&(layer, perturbation.to_string()))
            .cloned()
            .ok_or_else(|| Error::MissingFeatures(format!("(layer {layer}, {perturbation})")))
    }
}

/// Reads FEATSET files listed in a config.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub files: Vec<FeatureFile>,
}

impl FileProvider {
    fn load(file: &FeatureFile) -> Result<FeatureSet> {
        if !file.path.exists() {
            return Err(Error::MissingFeatures(format!("{} at {}", file.key(), file.path.display())));
        }
        let set = read_feature_set(&file.path)?;
        if set.layer_index() != file.layer {
            return Err(Error::validation(format!(
                "{}: file holds layer {}",
                file.key(),
                set.layer_index()
            )));
        }
        Ok(set)
    }

    fn load_merged(files: &[&FeatureFile]) -> Result<FeatureSet> {
        let sets = files.iter().map(|f| Self::load(f)).collect::<Result<Vec<_>>>()?;
        merge(&sets)
    }
}

impl FeatureProvider for FileProvider {
    fn dataset(&self, layer: i32, perturbation: &str) -> Result<Dataset> {
        let matching: Vec<&FeatureFile> = self
            .files
            .iter()
            .filter(|f| f.layer == layer && f.perturbation == perturbation)
            .collect();
        if matching.is_empty() {
            return Err(Error::MissingFeatures(format!("(*, layer {layer}, {perturbation})")));
        }
        let of = |s: Subset| matching.iter().copied().filter(|f| f.subset == s).collect::<Vec<_>>();
        let (all, train, test) = (of(Subset::All), of(Subset::Train), of(Subset::Test));
        match (all.is_empty(), train.is_empty(), test.is_empty()) {
            (false, true, true) => Ok(Dataset::Pool(Self::load_merged(&all)?)),
            (true, false, false) => {
                let train = Self::load_merged(&train)?;
                let test = Self::load_merged(&test)?;
                if train.dim() != test.dim() || train.backbone_id() != test.backbone_id() {
                    return Err(Error::validation(format!(
                        "layer {layer}, {perturbation}: train and test files disagree on dim or backbone"
                    )));
                }
                Ok(Dataset::Presplit { train, test })
            }
            _ => Err(Error::validation(format!(
                "layer {layer}, {perturbation}: use either pooled files or matching train and test files"
            ))),
        }
    }
}
