//! The five-split protocol over in-memory features for each method, with
//! markdown reports written to a temporary directory.

use osattr::experiment::{
    render_report, run_with, Dataset, ExperimentConfig, FeatureFile, MemoryProvider, Method, ReportFormat, CLEAN,
};
use osattr::synthetic::GaussianClusters;

fn main() -> osattr::Result<()> {
    let noisy = |per_class, seed| {
        GaussianClusters {
            std: 2.0,
            ..GaussianClusters::genimage(per_class, seed)
        }
        .sample()
    };
    let provider = MemoryProvider::new().with(
        -1,
        CLEAN,
        Dataset::Presplit {
            train: noisy(60, 1)?,
            test: noisy(30, 2)?,
        },
    );
    let mut cfg = ExperimentConfig::new(vec![FeatureFile {
        source: "*".into(),
        layer: -1,
        perturbation: CLEAN.into(),
        subset: Default::default(),
        path: "in-memory".into(),
    }]);
    cfg.projection.epochs = 40;
    cfg.projection.learning_rate = 1e-1;
    cfg.projection.out_dim = 64;
    for method in [Method::LinearProbe, Method::Knn, Method::KnnPlus] {
        cfg.method = method;
        let record = run_with(&cfg, &provider)?;
        println!("{}", render_report(&record, ReportFormat::Markdown)?);
        let dir = std::env::temp_dir().join(format!("osattr-five-split-{}", method.short_name()));
        record.persist(&dir)?;
        println!("written to {}\n", dir.display());
    }
    Ok(())
}
