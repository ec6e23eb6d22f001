use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::{merge, subsample_per_class, PartitionedData, SplitSpec};

use super::config::{ExperimentConfig, CLEAN};
use super::data::FeatureProvider;
use super::runner::{run_with, run_with_partitioner, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Layer,
    SamplesPerClass,
    KnownClasses,
    Perturbation,
}

impl SweepKind {
    pub fn column(&self) -> &'static str {
        match self {
            SweepKind::Layer => "layer",
            SweepKind::SamplesPerClass => "samples_per_class",
            SweepKind::KnownClasses => "known_classes",
            SweepKind::Perturbation => "perturbation",
        }
    }
}

/// One sweep point. `variant` distinguishes clean-trained and immunized rows
/// of a perturbation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub variant: Option<String>,
    pub record: Option<RunRecord>,
    /// Set when the point could not run at all.
    pub error: Option<String>,
}

impl SweepRow {
    fn from_result(value: impl Into<String>, variant: Option<&str>, r: Result<RunRecord>) -> Self {
        let value = value.into();
        let (record, error) = match r {
            Ok(rec) => (Some(rec), None),
            Err(e) => {
                warn!("sweep point {value}: {e}");
                (None, Some(e.to_string()))
            }
        };
        SweepRow {
            value,
            variant: variant.map(str::to_string),
            record,
            error,
        }
    }

    /// True when the point ran and every split succeeded.
    pub fn is_complete(&self) -> bool {
        self.record.as_ref().is_some_and(|r| r.complete)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub kind: SweepKind,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(SweepRow::is_complete)
    }
}

fn nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::validation(format!("sweep.{what} is empty")))
    } else {
        Ok(())
    }
}

/// One run per configured layer.
pub fn layer_sweep(cfg: &ExperimentConfig, provider: &dyn FeatureProvider) -> Result<SweepTable> {
    nonempty(&cfg.sweep.layers, "layers")?;
    cfg.validate()?;
    let rows = cfg
        .sweep
        .layers
        .iter()
        .map(|&layer| {
            let c = ExperimentConfig {
                layer,
                ..cfg.clone()
            };
            SweepRow::from_result(layer.to_string(), None, run_with(&c, provider))
        })
        .collect();
    Ok(SweepTable {
        kind: SweepKind::Layer,
        config_hash: cfg.hash(),
        rows,
    })
}

/// Reruns the protocol with `n` training rows per class; validation and
/// test partitions are left as the split produced them.
pub fn few_shot_sweep(cfg: &ExperimentConfig, provider: &dyn FeatureProvider) -> Result<SweepTable> {
    nonempty(&cfg.sweep.samples_per_class, "samples_per_class")?;
    cfg.validate()?;
    let data = provider.dataset(cfg.layer, CLEAN)?;
    let specs = cfg.resolved_splits();
    let rows = cfg
        .sweep
        .samples_per_class
        .iter()
        .map(|&n| {
            let partition = |spec: &SplitSpec| -> Result<PartitionedData> {
                let mut p = data.partition(spec)?;
                p.train = subsample_per_class(&p.train, n, spec.seed)?;
                Ok(p)
            };
            SweepRow::from_result(n.to_string(), None, run_with_partitioner(cfg, &specs, CLEAN, &partition))
        })
        .collect();
    Ok(SweepTable {
        kind: SweepKind::SamplesPerClass,
        config_hash: cfg.hash(),
        rows,
    })
}

/// Split whose first `c` generators (seen then unseen order) are known.
pub fn with_known_count(spec: &SplitSpec, c: usize) -> Result<SplitSpec> {
    let order: Vec<String> = spec
        .seen_generators
        .iter()
        .chain(&spec.unseen_generators)
        .cloned()
        .collect();
    if c < 2 || c > order.len() {
        return Err(Error::validation(format!(
            "known-class count {c} outside [2, {}]",
            order.len()
        )));
    }
    let (seen, unseen) = order.split_at(c);
    Ok(SplitSpec {
        seen_generators: seen.to_vec(),
        unseen_generators: unseen.to_vec(),
        ..spec.clone()
    })
}

/// Reruns every split with `c` known generators. With every generator known
/// the row reports accuracy only.
pub fn class_count_sweep(cfg: &ExperimentConfig, provider: &dyn FeatureProvider) -> Result<SweepTable> {
    nonempty(&cfg.sweep.known_class_counts, "known_class_counts")?;
    cfg.validate()?;
    let splits = cfg.resolved_splits();
    // counts are validated up front so a bad count is a config error, not a row
    for &c in &cfg.sweep.known_class_counts {
        for s in &splits {
            with_known_count(s, c)?;
        }
    }
    let data = provider.dataset(cfg.layer, CLEAN)?;
    let rows = cfg
        .sweep
        .known_class_counts
        .iter()
        .map(|&c| {
            let specs: Vec<SplitSpec> = splits
                .iter()
                .map(|s| with_known_count(s, c))
                .collect::<Result<_>>()
                .expect("validated above");
            let run = run_with_partitioner(cfg, &specs, CLEAN, &|spec| data.partition(spec));
            SweepRow::from_result(c.to_string(), None, run)
        })
        .collect();
    Ok(SweepTable {
        kind: SweepKind::KnownClasses,
        config_hash: cfg.hash(),
        rows,
    })
}

pub const CLEAN_TRAINED: &str = "clean";
pub const IMMUNIZED: &str = "immunized";

/// Per perturbation tag: a model trained on clean features and one trained
/// on clean plus perturbed features, both tested on perturbed features.
pub fn perturbation_eval(cfg: &ExperimentConfig, provider: &dyn FeatureProvider) -> Result<SweepTable> {
    nonempty(&cfg.sweep.perturbations, "perturbations")?;
    cfg.validate()?;
    let clean = provider.dataset(cfg.layer, CLEAN)?;
    let specs = cfg.resolved_splits();
    let mut rows = Vec::new();
    for tag in &cfg.sweep.perturbations {
        let perturbed = match provider.dataset(cfg.layer, tag) {
            Ok(d) => d,
            Err(e) => {
                warn!("perturbation {tag}: {e}");
                for variant in [CLEAN_TRAINED, IMMUNIZED] {
                    rows.push(SweepRow {
                        value: tag.clone(),
                        variant: Some(variant.to_string()),
                        record: None,
                        error: Some(e.to_string()),
                    });
                }
                continue;
            }
        };
        for variant in [CLEAN_TRAINED, IMMUNIZED] {
            // the identity tag adds nothing to augment with
            let augment = variant == IMMUNIZED && tag != CLEAN;
            let partition = |spec: &SplitSpec| -> Result<PartitionedData> {
                let c = clean.partition(spec)?;
                let p = perturbed.partition(spec)?;
                let (train, val) = if augment {
                    (merge(&[c.train, p.train])?, merge(&[c.val, p.val])?)
                } else {
                    (c.train, c.val)
                };
                Ok(PartitionedData {
                    train,
                    val,
                    test_seen: p.test_seen,
                    test_unseen: p.test_unseen,
                    rows: p.rows,
                })
            };
            let run = run_with_partitioner(cfg, &specs, tag, &partition);
            rows.push(SweepRow::from_result(tag.clone(), Some(variant), run));
        }
    }
    Ok(SweepTable {
        kind: SweepKind::Perturbation,
        config_hash: cfg.hash(),
        rows,
    })
}
