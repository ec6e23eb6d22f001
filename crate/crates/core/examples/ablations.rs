//! Layer, few-shot and known-class-count sweeps over synthetic features.

use osattr::experiment::{
    class_count_sweep, few_shot_sweep, layer_sweep, render_sweep, Dataset, ExperimentConfig, FeatureFile,
    MemoryProvider, ReportFormat, CLEAN,
};
use osattr::feature_store::SplitSpec;
use osattr::synthetic::GaussianClusters;

fn main() -> osattr::Result<()> {
    // deeper layers separate the classes better
    let mut provider = MemoryProvider::new();
    for (layer, separation) in [(2, 0.5), (6, 1.5), (11, 4.0)] {
        let g = |per_class, seed| {
            GaussianClusters {
                separation,
                layer_index: layer,
                ..GaussianClusters::genimage(per_class, seed)
            }
            .sample()
        };
        provider = provider.with(
            layer,
            CLEAN,
            Dataset::Presplit {
                train: g(60, 1)?,
                test: g(20, 2)?,
            },
        );
    }
    let mut cfg = ExperimentConfig::new(vec![FeatureFile {
        source: "*".into(),
        layer: 11,
        perturbation: CLEAN.into(),
        subset: Default::default(),
        path: "in-memory".into(),
    }]);
    cfg.layer = 11;
    cfg.splits = SplitSpec::genimage_splits(0)[..2].to_vec();
    cfg.lambda_grid = vec![1e-2, 1.0, 1e2];
    cfg.sweep.layers = vec![2, 6, 11];
    cfg.sweep.samples_per_class = vec![2, 10, 40];
    cfg.sweep.known_class_counts = vec![2, 5, 8];

    for table in [
        layer_sweep(&cfg, &provider)?,
        few_shot_sweep(&cfg, &provider)?,
        class_count_sweep(&cfg, &provider)?,
    ] {
        println!("{}", render_sweep(&table, ReportFormat::Markdown)?);
    }
    Ok(())
}
