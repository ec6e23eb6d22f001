#![allow(dead_code)]

use osattr::experiment::{Dataset, ExperimentConfig, FeatureFile, MemoryProvider, Subset, CLEAN};
use osattr::feature_store::SplitSpec;
use osattr::synthetic::{GaussianClusters, GENIMAGE_GENERATORS};
use osattr::FeatureSet;

/// Real plus seven generators: 8 clusters at `6·e_i` in 64-d.
pub fn clusters(per_class: usize, seed: u64) -> GaussianClusters {
    GaussianClusters {
        generators: GENIMAGE_GENERATORS[..7].iter().map(|s| s.to_string()).collect(),
        ..GaussianClusters::genimage(per_class, seed)
    }
}

/// Four seen generators (plus real) and three unseen.
pub fn five_three_split() -> SplitSpec {
    let g = &GENIMAGE_GENERATORS;
    let mut s = SplitSpec::new(&g[..4], &g[4..7], 0);
    s.name = "fixture".into();
    s
}

pub fn train_test(train_per_class: usize, test_per_class: usize) -> (FeatureSet, FeatureSet) {
    (
        clusters(train_per_class, 1).sample().unwrap(),
        clusters(test_per_class, 2).sample().unwrap(),
    )
}

pub fn provider(train: FeatureSet, test: FeatureSet) -> MemoryProvider {
    MemoryProvider::new().with(-1, CLEAN, Dataset::Presplit { train, test })
}

/// Config over in-memory data (the feature file entry is never read).
pub fn config(splits: Vec<SplitSpec>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(vec![FeatureFile {
        source: "*".into(),
        layer: -1,
        perturbation: CLEAN.into(),
        subset: Subset::All,
        path: "unused.featset".into(),
    }]);
    cfg.splits = splits;
    cfg.lambda_grid = vec![1e-2, 1.0, 1e2];
    cfg
}
