//! Robustness of clean-trained and immunized probes to perturbed features.

use osattr::experiment::{
    perturbation_eval, render_sweep, Dataset, ExperimentConfig, FeatureFile, MemoryProvider, ReportFormat, CLEAN,
};
use osattr::synthetic::GaussianClusters;
use osattr::FeatureSet;

/// Stand-in for features of degraded images: shrink toward the origin and
/// add independent noise.
fn degrade(set: &FeatureSet, strength: f64, seed: u64) -> osattr::Result<FeatureSet> {
    let noise = GaussianClusters {
        separation: 0.0,
        per_class: set.count() / 9,
        seed,
        ..GaussianClusters::genimage(0, 0)
    }
    .sample()?;
    let f: Vec<f32> = set
        .features()
        .iter()
        .zip(noise.features())
        .map(|(&v, &n)| ((1.0 - strength) * f64::from(v) + 2.0 * strength * f64::from(n)) as f32)
        .collect();
    let labels = set.labels().iter().map(|&l| l as i32).collect();
    FeatureSet::new(
        f,
        set.dim(),
        labels,
        set.generator_names().to_vec(),
        set.backbone_id(),
        set.layer_index(),
        set.normalization(),
    )
}

fn main() -> osattr::Result<()> {
    let train = GaussianClusters::genimage(60, 1).sample()?;
    let test = GaussianClusters::genimage(20, 2).sample()?;
    let mut provider = MemoryProvider::new().with(
        -1,
        CLEAN,
        Dataset::Presplit {
            train: train.clone(),
            test: test.clone(),
        },
    );
    let tags = ["jpeg_q75", "jpeg_q50", "blur_s2"];
    for (i, tag) in tags.iter().enumerate() {
        let s = 0.2 * (i + 1) as f64;
        provider = provider.with(
            -1,
            tag,
            Dataset::Presplit {
                train: degrade(&train, s, 10 + i as u64)?,
                test: degrade(&test, s, 20 + i as u64)?,
            },
        );
    }
    let mut cfg = ExperimentConfig::new(vec![FeatureFile {
        source: "*".into(),
        layer: -1,
        perturbation: CLEAN.into(),
        subset: Default::default(),
        path: "in-memory".into(),
    }]);
    cfg.lambda_grid = vec![1e-2, 1.0, 1e2];
    cfg.sweep.perturbations = std::iter::once(CLEAN).chain(tags).map(str::to_string).collect();
    let table = perturbation_eval(&cfg, &provider)?;
    println!("{}", render_sweep(&table, ReportFormat::Markdown)?);
    Ok(())
}
