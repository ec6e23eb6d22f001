//! Fits a multinomial logistic probe with a validation sweep over the
//! regularization strength.

use osattr::feature_store::{apply_split, SplitSpec};
use osattr::linear_probe::{accuracy, default_lambda_grid, sweep_regularization, TrainOptions};
use osattr::synthetic::GaussianClusters;

fn main() -> osattr::Result<()> {
    let pool = GaussianClusters::genimage(80, 1).sample()?;
    let parts = apply_split(&pool, &SplitSpec::genimage_splits(0)[0])?;
    let (lambda, probe) = sweep_regularization(&parts.train, &parts.val, &default_lambda_grid(), &TrainOptions::default())?;
    println!("classes: {:?}", probe.class_names);
    println!("chosen lambda {lambda:e}, final loss {:.4}", probe.final_loss);
    println!("validation accuracy {:.4}", accuracy(&probe, &parts.val)?);
    println!("test accuracy {:.4}", accuracy(&probe, &parts.test_seen)?);
    Ok(())
}
