//! Embedding container, the FEATSET file format, and split realization.
//!
//! A [`FeatureSet`] holds one embedding per image together with its class
//! label. Label `0` is always the real class; label `i > 0` names
//! `generator_names[i - 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, FEATSET_MAGIC};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Name of the class with label 0.
pub const REAL: &str = "real";

const UNIT_NORM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    None,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Vec<f32>,
    labels: Vec<u32>,
    generator_names: Vec<String>,
    backbone_id: String,
    layer_index: i32,
    normalization: Normalization,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct FeatsetMeta {
    backbone_id: String,
    layer_index: i32,
    dim: u64,
    count: u64,
    dtype: String,
    normalization: Normalization,
    generator_names: Vec<String>,
}

impl FeatureSet {
    /// Validates and builds a feature set from a row-major `count × dim` buffer.
    pub fn new(
        features: Vec<f32>,
        dim: usize,
        labels: Vec<i32>,
        generator_names: Vec<String>,
        backbone_id: impl Into<String>,
        layer_index: i32,
        normalization: Normalization,
    ) -> Result<Self> {
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(row, l)| {
                u32::try_from(l).map_err(|_| Error::validation(format!("row {row}: label {l} is not a class index")))
            })
            .collect::<Result<Vec<_>>>()?;
        let set = FeatureSet {
            features,
            labels,
            generator_names,
            backbone_id: backbone_id.into(),
            layer_index,
            normalization,
            dim,
        };
        set.validate()?;
        Ok(set)
    }

    /// Convenience constructor from `f64` rows (values are rounded to `f32`).
    pub fn from_rows(
        rows: &Matrix,
        labels: Vec<i32>,
        generator_names: Vec<String>,
        backbone_id: impl Into<String>,
        layer_index: i32,
    ) -> Result<Self> {
        let features = rows.as_slice().iter().map(|&v| v as f32).collect();
        FeatureSet::new(
            features,
            rows.ncols(),
            labels,
            generator_names,
            backbone_id,
            layer_index,
            Normalization::None,
        )
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::validation("dim must be positive"));
        }
        if self.features.len() != self.labels.len() * self.dim {
            return Err(Error::validation(format!(
                "feature buffer holds {} values, expected {} rows × {} dims",
                self.features.len(),
                self.labels.len(),
                self.dim
            )));
        }
        if self.layer_index < -1 {
            return Err(Error::validation(format!("layer index {} below -1", self.layer_index)));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value at row {} column {}",
                pos / self.dim,
                pos % self.dim
            )));
        }
        let max_label = self.generator_names.len() as u32;
        if let Some(row) = self.labels.iter().position(|&l| l > max_label) {
            return Err(Error::validation(format!(
                "row {row}: label {} exceeds {} generators",
                self.labels[row], max_label
            )));
        }
        let distinct: BTreeSet<_> = self.generator_names.iter().collect();
        if distinct.len() != self.generator_names.len() || self.generator_names.iter().any(|g| g == REAL) {
            return Err(Error::validation("generator names must be unique and not \"real\""));
        }
        if self.normalization == Normalization::L2 {
            for i in 0..self.count() {
                let n = self.row(i).iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::validation(format!("row {i} has norm {n} but set is l2-normalized")));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn generator_names(&self) -> &[String] {
        &self.generator_names
    }

    pub fn backbone_id(&self) -> &str {
        &self.backbone_id
    }

    pub fn layer_index(&self) -> i32 {
        self.layer_index
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Class name for a label of this set.
    pub fn label_name(&self, label: u32) -> &str {
        if label == 0 {
            REAL
        } else {
            &self.generator_names[label as usize - 1]
        }
    }

    /// Label of a class name in this set, if present.
    pub fn label_of(&self, name: &str) -> Option<u32> {
        if name == REAL {
            Some(0)
        } else {
            self.generator_names.iter().position(|g| g == name).map(|i| i as u32 + 1)
        }
    }

    /// Class names of each row.
    pub fn row_class_names(&self) -> Vec<&str> {
        self.labels.iter().map(|&l| self.label_name(l)).collect()
    }

    /// Features as an `f64` matrix.
    pub fn to_matrix(&self) -> Matrix {
        let data = self.features.iter().map(|&v| f64::from(v)).collect();
        Matrix::from_vec(self.count(), self.dim, data).expect("validated shape")
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<u32> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Row indices grouped by label (ascending label, ascending row).
    pub fn rows_by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    /// Copies the given rows, keeping labels and provenance.
    pub fn select(&self, rows: &[usize]) -> FeatureSet {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        FeatureSet {
            features,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            generator_names: self.generator_names.clone(),
            backbone_id: self.backbone_id.clone(),
            layer_index: self.layer_index,
            normalization: self.normalization,
            dim: self.dim,
        }
    }

    /// Copies the given rows into a set whose label space is `names`
    /// (generators only; real stays label 0). Every selected row's class must
    /// appear in `names` or be real.
    fn select_relabeled(&self, rows: &[usize], names: &[String]) -> FeatureSet {
        let mut out = self.select(rows);
        out.labels = rows
            .iter()
            .map(|&r| {
                let l = self.labels[r];
                if l == 0 {
                    0
                } else {
                    let name = &self.generator_names[l as usize - 1];
                    names.iter().position(|n| n == name).expect("class in target label space") as u32 + 1
                }
            })
            .collect();
        out.generator_names = names.to_vec();
        out
    }

    fn metadata(&self) -> FeatsetMeta {
        FeatsetMeta {
            backbone_id: self.backbone_id.clone(),
            layer_index: self.layer_index,
            dim: self.dim as u64,
            count: self.count() as u64,
            dtype: "f32le".into(),
            normalization: self.normalization,
            generator_names: self.generator_names.clone(),
        }
    }

    /// Encodes the set in the FEATSET format.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut payload = Vec::with_capacity(4 * (self.features.len() + self.count()));
        container::push_f32s(&mut payload, self.features.iter().copied());
        for &l in &self.labels {
            payload.extend_from_slice(&(l as i32).to_le_bytes());
        }
        container::encode(FEATSET_MAGIC, &self.metadata(), &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureSet> {
        let (meta, payload): (FeatsetMeta, _) = container::decode(FEATSET_MAGIC, bytes)?;
        if meta.dtype != "f32le" {
            return Err(Error::Metadata(format!("unsupported dtype {:?}", meta.dtype)));
        }
        let n_values = meta
            .count
            .checked_mul(meta.dim)
            .ok_or_else(|| Error::Metadata("count × dim overflows".into()))?;
        let expected = n_values
            .checked_add(meta.count)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Metadata("payload size overflows".into()))?;
        container::check_payload_len(payload, expected)?;
        let split = (n_values * 4) as usize;
        let features = container::read_f32s(&payload[..split]);
        let labels = container::read_i32s(&payload[split..]);
        FeatureSet::new(
            features,
            meta.dim as usize,
            labels,
            meta.generator_names,
            meta.backbone_id,
            meta.layer_index,
            meta.normalization,
        )
    }
}

pub fn write_feature_set(set: &FeatureSet, path: &Path) -> Result<()> {
    container::write_atomic(path, &set.to_bytes()?)
}

pub fn read_feature_set(path: &Path) -> Result<FeatureSet> {
    FeatureSet::from_bytes(&container::read_file(path)?)
}

/// Scales every row to unit Euclidean norm. A set already flagged as
/// l2-normalized is returned unchanged, which makes the operation idempotent.
pub fn l2_normalize(set: &FeatureSet) -> Result<FeatureSet> {
    if set.normalization == Normalization::L2 {
        return Ok(set.clone());
    }
    let mut out = set.clone();
    for i in 0..set.count() {
        let row = &mut out.features[i * set.dim..(i + 1) * set.dim];
        let n = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / n) as f32;
        }
    }
    out.normalization = Normalization::L2;
    out.validate()?;
    Ok(out)
}

/// Caps on how many rows each subset draws. The defaults are totals per
/// subset; fake totals are divided evenly over the generators of the subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub seen_real: usize,
    pub seen_fake_total: usize,
    pub unseen_fake_total: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts {
            seen_real: 4000,
            seen_fake_total: 16000,
            unseen_fake_total: 16000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub name: String,
    pub seen_generators: Vec<String>,
    pub unseen_generators: Vec<String>,
    #[serde(default = "default_true")]
    pub include_real: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub per_class_counts: SplitCounts,
    /// Fraction of each seen class carved out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Fraction of each seen class held out for testing when a single pool
    /// is split (ignored by [`apply_split_with_test_pool`]).
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_true() -> bool {
    true
}

fn default_val_fraction() -> f64 {
    0.1
}

fn default_test_fraction() -> f64 {
    0.2
}

impl SplitSpec {
    pub fn new<S: AsRef<str>>(seen: &[S], unseen: &[S], seed: u64) -> Self {
        SplitSpec {
            name: String::new(),
            seen_generators: seen.iter().map(|s| s.as_ref().to_string()).collect(),
            unseen_generators: unseen.iter().map(|s| s.as_ref().to_string()).collect(),
            include_real: true,
            seed,
            per_class_counts: SplitCounts::default(),
            val_fraction: default_val_fraction(),
            test_fraction: default_test_fraction(),
        }
    }

    /// The five GenImage seen/unseen generator splits.
    pub fn genimage_splits(seed: u64) -> Vec<SplitSpec> {
        const SPLITS: [([&str; 4], [&str; 4]); 5] = [
            (["wukong", "Midjourney", "SD1.4", "VQDM"], ["glide", "ADM", "SD1.5", "BigGAN"]),
            (["Midjourney", "SD1.4", "VQDM", "BigGAN"], ["wukong", "glide", "ADM", "SD1.5"]),
            (["SD1.4", "VQDM", "BigGAN", "ADM"], ["wukong", "glide", "SD1.5", "Midjourney"]),
            (["SD1.4", "VQDM", "BigGAN", "ADM"], ["wukong", "glide", "SD1.5", "Midjourney"]),
            (["SD1.5", "BigGAN", "ADM", "glide"], ["wukong", "SD1.4", "Midjourney", "VQDM"]),
        ];
        SPLITS
            .iter()
            .enumerate()
            .map(|(i, (seen, unseen))| SplitSpec {
                name: format!("split{}", i + 1),
                ..SplitSpec::new(seen, unseen, seed)
            })
            .collect()
    }

    /// Seen classes in label order: real first (when included), then the
    /// seen generators.
    pub fn seen_classes(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.include_real {
            v.push(REAL.to_string());
        }
        v.extend(self.seen_generators.iter().cloned());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<_> = self.seen_generators.iter().collect();
        let unseen: BTreeSet<_> = self.unseen_generators.iter().collect();
        if seen.len() != self.seen_generators.len() || unseen.len() != self.unseen_generators.len() {
            return Err(Error::validation("duplicate generator in split"));
        }
        if let Some(g) = seen.intersection(&unseen).next() {
            return Err(Error::validation(format!("generator {g:?} is both seen and unseen")));
        }
        if seen.contains(&REAL.to_string()) || unseen.contains(&REAL.to_string()) {
            return Err(Error::validation("\"real\" is not a generator"));
        }
        for (name, f) in [("val_fraction", self.val_fraction), ("test_fraction", self.test_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::validation(format!("{name} must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }

    fn validate_against(&self, set: &FeatureSet) -> Result<()> {
        self.validate()?;
        for g in self.seen_generators.iter().chain(&self.unseen_generators) {
            if set.label_of(g).is_none() {
                return Err(Error::validation(format!("generator {g:?} not present in data")));
            }
        }
        Ok(())
    }

    fn seen_cap(&self, class: &str) -> usize {
        if class == REAL {
            self.per_class_counts.seen_real
        } else {
            self.per_class_counts.seen_fake_total / self.seen_generators.len().max(1)
        }
    }

    fn unseen_cap(&self) -> usize {
        self.per_class_counts.unseen_fake_total / self.unseen_generators.len().max(1)
    }
}

/// Row indices (into the source pool) that landed in each partition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionRows {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

/// Output of a split. `train`, `val` and `test_seen` share the label space
/// `{real} ∪ seen`; `test_unseen` uses the unseen generators as its label space.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedData {
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test_seen: FeatureSet,
    pub test_unseen: FeatureSet,
    pub rows: PartitionRows,
}

fn shuffled_prefix(rows: &[usize], cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut rows = rows.to_vec();
    rows.shuffle(rng);
    rows.truncate(cap);
    rows
}

fn class_rows(set: &FeatureSet, class: &str) -> Vec<usize> {
    let Some(label) = set.label_of(class) else {
        return Vec::new();
    };
    (0..set.count()).filter(|&i| set.labels[i] == label).collect()
}

/// Splits a single pool into train / val / test partitions.
///
/// Each seen class draws up to its cap of rows (seeded shuffle), holds out
/// `test_fraction` for testing, then `val_fraction` of the remainder for
/// validation. Unseen generators contribute only to `test_unseen`.
pub fn apply_split(set: &FeatureSet, spec: &SplitSpec) -> Result<PartitionedData> {
    spec.validate_against(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = PartitionRows::default();
    for class in spec.seen_classes() {
        let drawn = shuffled_prefix(&class_rows(set, &class), spec.seen_cap(&class), &mut rng);
        let n_test = (drawn.len() as f64 * spec.test_fraction).round() as usize;
        let (test, rest) = drawn.split_at(n_test);
        let n_val = (rest.len() as f64 * spec.val_fraction).round() as usize;
        rows.test_seen.extend_from_slice(test);
        rows.val.extend_from_slice(&rest[..n_val]);
        rows.train.extend_from_slice(&rest[n_val..]);
    }
    for g in &spec.unseen_generators {
        rows.test_unseen
            .extend(shuffled_prefix(&class_rows(set, g), spec.unseen_cap(), &mut rng));
    }
    Ok(assemble(set, set, spec, rows))
}

/// Splits data that already comes with a separate test pool (as GenImage
/// does). Seen classes of `train_pool` are capped and carved into train/val;
/// `test_pool` supplies every seen test row and up to the unseen cap per
/// unseen generator. Row indices of test partitions refer to `test_pool`.
pub fn apply_split_with_test_pool(
    train_pool: &FeatureSet,
    test_pool: &FeatureSet,
    spec: &SplitSpec,
) -> Result<PartitionedData> {
    for g in spec.seen_generators.iter() {
        if train_pool.label_of(g).is_none() {
            return Err(Error::validation(format!("generator {g:?} not present in training data")));
        }
    }
    spec.validate_against(test_pool)?;
    if train_pool.dim != test_pool.dim {
        return Err(Error::DimensionMismatch {
            expected: train_pool.dim,
            got: test_pool.dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = PartitionRows::default();
    for class in spec.seen_classes() {
        let drawn = shuffled_prefix(&class_rows(train_pool, &class), spec.seen_cap(&class), &mut rng);
        let n_val = (drawn.len() as f64 * spec.val_fraction).round() as usize;
        rows.val.extend_from_slice(&drawn[..n_val]);
        rows.train.extend_from_slice(&drawn[n_val..]);
        rows.test_seen.extend(class_rows(test_pool, &class));
    }
    for g in &spec.unseen_generators {
        rows.test_unseen
            .extend(shuffled_prefix(&class_rows(test_pool, g), spec.unseen_cap(), &mut rng));
    }
    Ok(assemble(train_pool, test_pool, spec, rows))
}

fn assemble(train_pool: &FeatureSet, test_pool: &FeatureSet, spec: &SplitSpec, mut rows: PartitionRows) -> PartitionedData {
    // keep partitions in source order so downstream results do not depend on draw order
    rows.train.sort_unstable();
    rows.val.sort_unstable();
    rows.test_seen.sort_unstable();
    rows.test_unseen.sort_unstable();
    let seen = &spec.seen_generators;
    PartitionedData {
        train: train_pool.select_relabeled(&rows.train, seen),
        val: train_pool.select_relabeled(&rows.val, seen),
        test_seen: test_pool.select_relabeled(&rows.test_seen, seen),
        test_unseen: test_pool.select_relabeled(&rows.test_unseen, &spec.unseen_generators),
        rows,
    }
}

/// Draws exactly `n` rows of every class present, without replacement.
/// Output is grouped by ascending label and keeps source row order within a class.
pub fn subsample_per_class(set: &FeatureSet, n: usize, seed: u64) -> Result<FeatureSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    for (label, rows) in set.rows_by_class() {
        if rows.len() < n {
            return Err(Error::validation(format!(
                "class {:?} has {} rows, fewer than the {} requested",
                set.label_name(label),
                rows.len(),
                n
            )));
        }
        let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, rows.len(), n)
            .into_iter()
            .map(|i| rows[i])
            .collect();
        idx.sort_unstable();
        picked.extend(idx);
    }
    Ok(set.select(&picked))
}

/// Concatenates sets with identical provenance. Generator names are unioned
/// in first-appearance order and labels remapped accordingly.
pub fn merge(sets: &[FeatureSet]) -> Result<FeatureSet> {
    let first = sets.first().ok_or_else(|| Error::validation("nothing to merge"))?;
    let mut names: Vec<String> = Vec::new();
    for s in sets {
        if s.dim != first.dim {
            return Err(Error::DimensionMismatch {
                expected: first.dim,
                got: s.dim,
            });
        }
        if s.backbone_id != first.backbone_id
            || s.layer_index != first.layer_index
            || s.normalization != first.normalization
        {
            return Err(Error::validation(format!(
                "provenance mismatch: ({}, layer {}, {:?}) vs ({}, layer {}, {:?})",
                first.backbone_id,
                first.layer_index,
                first.normalization,
                s.backbone_id,
                s.layer_index,
                s.normalization
            )));
        }
        for g in &s.generator_names {
            if !names.contains(g) {
                names.push(g.clone());
            }
        }
    }
    let mut features = Vec::with_capacity(sets.iter().map(|s| s.features.len()).sum());
    let mut labels = Vec::with_capacity(sets.iter().map(|s| s.count()).sum());
    for s in sets {
        features.extend_from_slice(&s.features);
        labels.extend(s.labels.iter().map(|&l| {
            if l == 0 {
                0
            } else {
                names.iter().position(|n| *n == s.generator_names[l as usize - 1]).unwrap() as u32 + 1
            }
        }));
    }
    Ok(FeatureSet {
        features,
        labels,
        generator_names: names,
        backbone_id: first.backbone_id.clone(),
        layer_index: first.layer_index,
        normalization: first.normalization,
        dim: first.dim,
    })
}
