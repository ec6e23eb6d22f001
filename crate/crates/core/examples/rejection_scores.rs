//! Compares every probe-based rejection score on one open-set split.

use osattr::feature_store::{apply_split, FeatureSet, SplitSpec};
use osattr::linear_probe::{train_probe, TrainOptions};
use osattr::metrics::auroc;
use osattr::rejection::{calibrate_ranges, fit_id_statistics, ProbeScorer, ScoreConfig, Strategy};
use osattr::synthetic::GaussianClusters;

fn scores(scorer: &ProbeScorer<'_>, s: Strategy, set: &FeatureSet) -> osattr::Result<Vec<f64>> {
    let x = set.to_matrix();
    x.rows_iter().map(|z| scorer.score(s, z)).collect()
}

fn main() -> osattr::Result<()> {
    let pool = GaussianClusters {
        std: 2.0,
        ..GaussianClusters::genimage(80, 5)
    }
    .sample()?;
    let parts = apply_split(&pool, &SplitSpec::genimage_splits(0)[0])?;
    let probe = train_probe(&parts.train, 1.0, &TrainOptions::default())?;
    let cfg = ScoreConfig {
        gen_top_m: probe.num_classes(),
        ..ScoreConfig::default()
    };
    let stats = fit_id_statistics(&parts.train, &probe, &cfg)?;
    let stats = calibrate_ranges(&stats, &probe, &parts.val, &cfg)?;
    let scorer = ProbeScorer {
        probe: &probe,
        stats: Some(&stats),
        cfg,
    };
    println!("{:<16} AUROC", "score");
    for s in Strategy::ALL_PROBE {
        let seen = scores(&scorer, s, &parts.test_seen)?;
        let unseen = scores(&scorer, s, &parts.test_unseen)?;
        println!("{:<16} {:.4}", s.name(), auroc(&seen, &unseen)?);
    }
    Ok(())
}
