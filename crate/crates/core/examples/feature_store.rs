//! Writes a synthetic feature set, reads it back and partitions it into
//! seen and unseen generators.

use osattr::feature_store::{apply_split, l2_normalize, read_feature_set, write_feature_set, SplitSpec};
use osattr::synthetic::GaussianClusters;

fn main() -> osattr::Result<()> {
    let pool = GaussianClusters::genimage(50, 7).sample()?;
    let dir = std::env::temp_dir().join("osattr-feature-store");
    std::fs::create_dir_all(&dir).map_err(|e| osattr::Error::io(&dir, e))?;
    let path = dir.join("pool.featset");
    write_feature_set(&pool, &path)?;
    let back = read_feature_set(&path)?;
    assert_eq!(back, pool);
    println!("{}: {} rows of dim {}", path.display(), back.count(), back.dim());

    let unit = l2_normalize(&back)?;
    println!("normalization after l2: {:?}", unit.normalization());

    let spec = &SplitSpec::genimage_splits(0)[0];
    let parts = apply_split(&unit, spec)?;
    println!("seen {:?}", spec.seen_generators);
    println!("unseen {:?}", spec.unseen_generators);
    println!(
        "train {} / val {} / test seen {} / test unseen {}",
        parts.train.count(),
        parts.val.count(),
        parts.test_seen.count(),
        parts.test_unseen.count()
    );
    Ok(())
}
