use std::cell::RefCell;
use std::fmt;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::contrastive::{project, project_set, train_projection, ProjectionHead, ProjectionOptions};
use crate::error::{Error, Result};
use crate::feature_store::{merge, FeatureSet, PartitionedData, SplitSpec};
use crate::knn::{build_index, build_index_with, classify_batch, KnnIndex};
use crate::linear_probe::{argmax, sweep_regularization, LogisticProbe};
use crate::metrics::{aggregate_splits, EvalReport, ScoredPrediction, SplitMetrics};
use crate::rejection::{calibrate_ranges, fit_id_statistics, IdStatistics, ProbeScorer, ScoreConfig, Strategy};

use super::config::{ExperimentConfig, Method, CLEAN};
use super::data::{FeatureProvider, FileProvider};
use super::report::{render_report, ReportFormat};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Partition,
    Fit,
    Calibrate,
    Score,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Partition => "partition",
            Stage::Fit => "fit",
            Stage::Calibrate => "calibrate",
            Stage::Score => "score",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Pool,
    Train,
    Val,
    TestSeen,
    TestUnseen,
}

impl Partition {
    pub fn is_test(&self) -> bool {
        matches!(self, Partition::TestSeen | Partition::TestUnseen)
    }
}

/// One read of a partition by a pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub split: String,
    pub stage: Stage,
    pub partition: Partition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub split: String,
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDetail {
    pub split_id: String,
    pub seen: Vec<String>,
    pub unseen: Vec<String>,
    pub train_rows: usize,
    pub val_rows: usize,
    pub test_seen_rows: usize,
    pub test_unseen_rows: usize,
    /// Selected regularization strength (linear probe only).
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub toolkit_version: String,
    pub method: Method,
    pub strategy: Strategy,
    pub layer: i32,
    pub perturbation: String,
    /// False when at least one split failed.
    pub complete: bool,
    /// Aggregate over the splits that succeeded; absent when none did.
    pub report: Option<EvalReport>,
    pub splits: Vec<SplitDetail>,
    pub failures: Vec<Failure>,
    pub audit: Vec<AuditEntry>,
    /// Not persisted, so saved records stay byte-reproducible.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Record equality ignoring wall-clock time.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        RunRecord {
            wall_clock_secs: 0.0,
            ..self.clone()
        } == RunRecord {
            wall_clock_secs: 0.0,
            ..other.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Metadata(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::validation(format!("not a run record: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes `record.json`, `report.csv` and `report.md` into `dir`.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("record.json"), self.to_json()?.as_bytes())?;
        if self.report.is_some() {
            write_atomic(&dir.join("report.csv"), render_report(self, ReportFormat::Csv)?.as_bytes())?;
            write_atomic(&dir.join("report.md"), render_report(self, ReportFormat::Markdown)?.as_bytes())?;
        }
        Ok(())
    }
}

/// Partition reads of one split, logged per stage.
pub struct AuditedSplit<'a> {
    split: String,
    data: &'a PartitionedData,
    log: RefCell<Vec<AuditEntry>>,
}

impl<'a> AuditedSplit<'a> {
    pub fn new(split: impl Into<String>, data: &'a PartitionedData) -> Self {
        AuditedSplit {
            split: split.into(),
            data,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn read(&self, stage: Stage, partition: Partition) -> &'a FeatureSet {
        self.log.borrow_mut().push(AuditEntry {
            split: self.split.clone(),
            stage,
            partition,
        });
        match partition {
            Partition::Train | Partition::Pool => &self.data.train,
            Partition::Val => &self.data.val,
            Partition::TestSeen => &self.data.test_seen,
            Partition::TestUnseen => &self.data.test_unseen,
        }
    }

    pub fn into_log(self) -> Vec<AuditEntry> {
        self.log.into_inner()
    }
}

/// A fitted attribution model with whatever its rejection score needs.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Probe {
        probe: LogisticProbe,
        stats: Option<IdStatistics>,
    },
    Knn {
        index: KnnIndex,
        head: Option<ProjectionHead>,
    },
}

/// Predicted class name and rejection score of one test row.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_name: String,
    pub score: f64,
}

impl TrainedModel {
    /// Fits `cfg.method` on the train partition, using validation data only
    /// for model selection and score calibration.
    pub fn fit(cfg: &ExperimentConfig, split: &AuditedSplit<'_>) -> Result<(TrainedModel, Option<f64>)> {
        let train = split.read(Stage::Fit, Partition::Train);
        match cfg.method {
            Method::LinearProbe => {
                let val = split.read(Stage::Fit, Partition::Val);
                let (lambda, probe) = sweep_regularization(train, val, &cfg.lambda_grid, &cfg.train)?;
                let strategy = cfg.strategy();
                let k = probe.num_classes();
                ScoreConfig {
                    gen_top_m: cfg.score.gen_top_m.min(k),
                    ..cfg.score
                }
                .validate(k, probe.dim())?;
                let stats = if strategy.needs_statistics() {
                    // statistics see train+val; calibration sees val only
                    let id = merge(&[train.clone(), val.clone()])?;
                    let stats = fit_id_statistics(&id, &probe, &cfg.score)?;
                    let val = split.read(Stage::Calibrate, Partition::Val);
                    Some(if val.is_empty() {
                        stats
                    } else {
                        calibrate_ranges(&stats, &probe, val, &cfg.score)?
                    })
                } else {
                    None
                };
                Ok((TrainedModel::Probe { probe, stats }, Some(lambda)))
            }
            Method::Knn => Ok((
                TrainedModel::Knn {
                    index: build_index(train)?,
                    head: None,
                },
                None,
            )),
            Method::KnnPlus => {
                let opts = ProjectionOptions {
                    seed: cfg.projection.seed.wrapping_add(cfg.seed),
                    ..cfg.projection
                };
                let (head, _) = train_projection(train, &opts)?;
                let index = build_index_with(&project_set(&head, train)?, true)?;
                Ok((TrainedModel::Knn { index, head: Some(head) }, None))
            }
        }
    }

    pub fn predict(&self, cfg: &ExperimentConfig, set: &FeatureSet) -> Result<Vec<Prediction>> {
        if set.is_empty() {
            return Ok(Vec::new());
        }
        let x = set.to_matrix();
        match self {
            TrainedModel::Probe { probe, stats } => {
                let scorer = ProbeScorer {
                    probe,
                    stats: stats.as_ref(),
                    cfg: cfg.score,
                };
                let strategy = cfg.strategy();
                (0..x.nrows())
                    .into_par_iter()
                    .map(|i| {
                        let z = x.row(i);
                        let c = argmax(&probe.logits(z)?);
                        Ok(Prediction {
                            class_name: probe.class_names[c].clone(),
                            score: scorer.score(strategy, z)?,
                        })
                    })
                    .collect()
            }
            TrainedModel::Knn { index, head } => {
                let q = match head {
                    Some(h) => project(h, &x)?,
                    None => x,
                };
                Ok(classify_batch(index, &q, cfg.k)?
                    .into_iter()
                    .map(|p| Prediction {
                        class_name: index.class_name(p.label).to_string(),
                        score: p.score,
                    })
                    .collect())
            }
        }
    }
}

/// Predictions on the seen test rows marked correct or not, plus the
/// rejection scores of the unseen test rows.
pub fn score_partitions(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    split: &AuditedSplit<'_>,
) -> Result<(Vec<ScoredPrediction>, Vec<f64>)> {
    let seen = split.read(Stage::Score, Partition::TestSeen);
    let truth = seen.row_class_names();
    let seen_preds = model
        .predict(cfg, seen)?
        .into_iter()
        .zip(truth)
        .enumerate()
        .map(|(i, (p, t))| ScoredPrediction {
            predicted_class: i,
            correct: p.class_name == t,
            confidence: p.score,
            is_seen: true,
        })
        .collect();
    let unseen = split.read(Stage::Score, Partition::TestUnseen);
    let unseen_scores = model.predict(cfg, unseen)?.into_iter().map(|p| p.score).collect();
    Ok((seen_preds, unseen_scores))
}

struct SplitOutcome {
    metrics: Option<SplitMetrics>,
    detail: Option<SplitDetail>,
    failure: Option<Failure>,
    audit: Vec<AuditEntry>,
}

fn run_split(
    cfg: &ExperimentConfig,
    split_id: &str,
    spec: &SplitSpec,
    partition: &(dyn Fn(&SplitSpec) -> Result<PartitionedData> + Sync),
) -> SplitOutcome {
    let fail = |stage: Stage, e: Error, audit: Vec<AuditEntry>| {
        warn!("{split_id}: {stage} failed: {e}");
        SplitOutcome {
            metrics: None,
            detail: None,
            failure: Some(Failure {
                split: split_id.to_string(),
                stage,
                message: e.to_string(),
            }),
            audit,
        }
    };
    let pool_read = vec![AuditEntry {
        split: split_id.to_string(),
        stage: Stage::Partition,
        partition: Partition::Pool,
    }];
    let data = match partition(spec) {
        Ok(d) => d,
        Err(e) => return fail(Stage::Partition, e, pool_read),
    };
    let audited = AuditedSplit::new(split_id, &data);
    let (model, lambda) = match TrainedModel::fit(cfg, &audited) {
        Ok(m) => m,
        Err(e) => {
            let stage = audited.log.borrow().last().map_or(Stage::Fit, |a| a.stage);
            return fail(stage, e, [pool_read, audited.into_log()].concat());
        }
    };
    let result = score_partitions(cfg, &model, &audited)
        .and_then(|(seen, unseen)| EvalReport::from_predictions(split_id, &seen, &unseen));
    let audit = [pool_read, audited.into_log()].concat();
    let report = match result {
        Ok(r) => r,
        Err(e) => return fail(Stage::Score, e, audit),
    };
    info!(
        "{split_id}: acc {:.4} auroc {:?} oscr {:?}",
        report.accuracy, report.auroc, report.oscr
    );
    SplitOutcome {
        metrics: report.per_split.into_iter().next(),
        detail: Some(SplitDetail {
            split_id: split_id.to_string(),
            seen: spec.seen_classes(),
            unseen: spec.unseen_generators.clone(),
            train_rows: data.train.count(),
            val_rows: data.val.count(),
            test_seen_rows: data.test_seen.count(),
            test_unseen_rows: data.test_unseen.count(),
            lambda,
        }),
        failure: None,
        audit,
    }
}

/// Runs every split with a custom partition function. Split specs passed
/// to `partition` already carry the effective seed.
pub fn run_with_partitioner(
    cfg: &ExperimentConfig,
    specs: &[SplitSpec],
    perturbation: &str,
    partition: &(dyn Fn(&SplitSpec) -> Result<PartitionedData> + Sync),
) -> Result<RunRecord> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(Error::validation("split list is empty"));
    }
    let start = Instant::now();
    let outcomes: Vec<SplitOutcome> = specs
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let id = ExperimentConfig::split_id(spec, i);
            let spec = SplitSpec {
                seed: cfg.split_seed(spec),
                ..spec.clone()
            };
            run_split(cfg, &id, &spec, partition)
        })
        .collect();
    let mut metrics = Vec::new();
    let mut record = RunRecord {
        config_hash: cfg.hash(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        method: cfg.method,
        strategy: cfg.strategy(),
        layer: cfg.layer,
        perturbation: perturbation.to_string(),
        complete: true,
        report: None,
        splits: Vec::new(),
        failures: Vec::new(),
        audit: Vec::new(),
        wall_clock_secs: 0.0,
    };
    for o in outcomes {
        metrics.extend(o.metrics);
        record.splits.extend(o.detail);
        record.failures.extend(o.failure);
        record.audit.extend(o.audit);
    }
    record.complete = record.failures.is_empty();
    record.report = if metrics.is_empty() {
        None
    } else {
        Some(aggregate_splits(&metrics)?)
    };
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Runs the configured protocol on data from `provider` at `cfg.layer`.
pub fn run_with(cfg: &ExperimentConfig, provider: &dyn FeatureProvider) -> Result<RunRecord> {
    cfg.validate()?;
    let data = provider.dataset(cfg.layer, CLEAN)?;
    run_with_partitioner(cfg, &cfg.resolved_splits(), CLEAN, &|spec| data.partition(spec))
}

/// Loads the configured files, runs every split and persists the record
/// and reports into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let provider = FileProvider {
        files: cfg.feature_files.clone(),
    };
    let record = run_with(cfg, &provider)?;
    record.persist(&cfg.output_dir)?;
    Ok(record)
}
