//! Synthetic embedding fixtures: isotropic Gaussian clusters, one per class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::feature_store::{FeatureSet, Normalization};

/// The eight GenImage generators in the order of the first split table.
pub const GENIMAGE_GENERATORS: [&str; 8] = ["wukong", "Midjourney", "SD1.4", "VQDM", "glide", "ADM", "SD1.5", "BigGAN"];

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClusters {
    pub dim: usize,
    /// Class `i` is centred at `separation · e_i` (real is class 0).
    pub separation: f64,
    pub std: f64,
    pub per_class: usize,
    pub generators: Vec<String>,
    pub backbone_id: String,
    pub layer_index: i32,
    pub seed: u64,
}

impl GaussianClusters {
    /// Real plus the eight GenImage generators, centred at `6·e_i` in 64-d
    /// with unit variance.
    pub fn genimage(per_class: usize, seed: u64) -> Self {
        GaussianClusters {
            dim: 64,
            separation: 6.0,
            std: 1.0,
            per_class,
            generators: GENIMAGE_GENERATORS.iter().map(|s| s.to_string()).collect(),
            backbone_id: "synthetic".into(),
            layer_index: -1,
            seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.generators.len() + 1
    }

    /// Samples the fixture; rows are grouped by class in label order.
    pub fn sample(&self) -> Result<FeatureSet> {
        if self.num_classes() > self.dim {
            return Err(Error::validation("more classes than dimensions"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.num_classes() * self.per_class;
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for class in 0..self.num_classes() {
            for _ in 0..self.per_class {
                for j in 0..self.dim {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let mean = if j == class { self.separation } else { 0.0 };
                    features.push((mean + self.std * noise) as f32);
                }
                labels.push(class as i32);
            }
        }
        FeatureSet::new(
            features,
            self.dim,
            labels,
            self.generators.clone(),
            self.backbone_id.clone(),
            self.layer_index,
            Normalization::None,
        )
    }

    /// Pure-noise features sharing the class labels of [`sample`](Self::sample),
    /// useful for a layer that carries no class information.
    pub fn sample_noise(&self) -> Result<FeatureSet> {
        GaussianClusters {
            separation: 0.0,
            ..self.clone()
        }
        .sample()
    }
}
