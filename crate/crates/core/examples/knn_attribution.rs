//! Nearest-neighbour attribution on raw features and on a contrastive
//! projection, plus retrieval of the closest training rows.

use osattr::contrastive::{mean_intra_class_cosine, project, project_set, train_projection, ProjectionOptions};
use osattr::feature_store::{apply_split, SplitSpec};
use osattr::knn::{build_index, build_index_with, classify_batch, retrieve};
use osattr::synthetic::GaussianClusters;
use osattr::FeatureSet;

fn accuracy(train: &FeatureSet, test: &FeatureSet, labels: &[u32]) -> f64 {
    let hits = labels
        .iter()
        .zip(test.row_class_names())
        .filter(|(&l, name)| train.label_name(l) == *name)
        .count();
    hits as f64 / labels.len() as f64
}

fn main() -> osattr::Result<()> {
    let pool = GaussianClusters {
        std: 2.5,
        ..GaussianClusters::genimage(60, 3)
    }
    .sample()?;
    let parts = apply_split(&pool, &SplitSpec::genimage_splits(0)[0])?;
    let k = 5;

    let index = build_index(&parts.train)?;
    let raw = classify_batch(&index, &parts.test_seen.to_matrix(), k)?;
    let raw_labels: Vec<u32> = raw.iter().map(|p| p.label).collect();
    println!("NN  accuracy {:.4}", accuracy(&parts.train, &parts.test_seen, &raw_labels));

    let opts = ProjectionOptions {
        epochs: 40,
        out_dim: 64,
        batch_size: 64,
        learning_rate: 1e-1,
        ..ProjectionOptions::default()
    };
    let (head, trace) = train_projection(&parts.train, &opts)?;
    println!("projection loss {:.4} -> {:.4}", trace.epoch_losses[0], trace.epoch_losses.last().unwrap());
    let before = mean_intra_class_cosine(&parts.train.to_matrix(), parts.train.labels());
    let after = mean_intra_class_cosine(&project(&head, &parts.train.to_matrix())?, parts.train.labels());
    println!("intra-class cosine {before:.3} -> {after:.3}");

    let projected = build_index_with(&project_set(&head, &parts.train)?, true)?;
    let test = project_set(&head, &parts.test_seen)?;
    let plus = classify_batch(&projected, &test.to_matrix(), k)?;
    let plus_labels: Vec<u32> = plus.iter().map(|p| p.label).collect();
    println!("NN+ accuracy {:.4}", accuracy(&parts.train, &parts.test_seen, &plus_labels));

    let query: Vec<f64> = parts.test_unseen.row(0).iter().map(|&v| f64::from(v)).collect();
    println!("neighbours of an unseen {} image:", parts.test_unseen.row_class_names()[0]);
    for n in retrieve(&index, &query, 3)? {
        println!("  row {} ({}) at distance {:.4}", n.train_row, index.class_name(n.label), n.distance);
    }
    Ok(())
}
