//! Cosine k-nearest-neighbour attribution over an exact, exhaustive index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::matrix::{dot, norm, Matrix};

/// Number of neighbours used when none is configured.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    vectors: Matrix,
    labels: Vec<u32>,
    class_names: Vec<String>,
    projected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub train_row: usize,
    pub distance: f64,
    pub label: u32,
}

impl KnnIndex {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Class names indexed by label (`class_names()[0]` is the real class).
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, label: u32) -> &str {
        &self.class_names[label as usize]
    }

    /// True when the index holds SupCon-projected features (NN+).
    pub fn is_projected(&self) -> bool {
        self.projected
    }

    fn unit_query(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let n = norm(x);
        if n == 0.0 {
            return Err(Error::ZeroNorm { row: 0 });
        }
        Ok(x.iter().map(|v| v / n).collect())
    }

    fn distances(&self, q: &[f64]) -> Vec<f64> {
        self.vectors
            .rows_iter()
            .map(|v| (1.0 - dot(q, v)).clamp(0.0, 2.0))
            .collect()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            Err(Error::validation(format!("k = {k} outside [1, {}]", self.len())))
        } else {
            Ok(())
        }
    }
}

/// Stores L2-normalized copies of the training rows.
pub fn build_index(train: &FeatureSet) -> Result<KnnIndex> {
    build_index_with(train, false)
}

/// Like [`build_index`], recording whether the features were projected.
pub fn build_index_with(train: &FeatureSet, projected: bool) -> Result<KnnIndex> {
    if train.is_empty() {
        return Err(Error::validation("cannot index an empty feature set"));
    }
    let mut vectors = train.to_matrix();
    for i in 0..vectors.nrows() {
        let n = norm(vectors.row(i));
        if n == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        vectors.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    let class_names = (0..=train.generator_names().len() as u32)
        .map(|l| train.label_name(l).to_string())
        .collect();
    Ok(KnnIndex {
        vectors,
        labels: train.labels().to_vec(),
        class_names,
        projected,
    })
}

/// `1 − a·b / (‖a‖‖b‖)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na2, nb2) = (dot(a, a), dot(b, b));
    if na2 == 0.0 {
        return Err(Error::ZeroNorm { row: 0 });
    }
    if nb2 == 0.0 {
        return Err(Error::ZeroNorm { row: 1 });
    }
    Ok((1.0 - dot(a, b) / (na2 * nb2).sqrt()).clamp(0.0, 2.0))
}

/// The `k` closest rows in ascending distance; equal distances keep row order.
pub fn retrieve(index: &KnnIndex, x: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    index.check_k(k)?;
    let q = index.unit_query(x)?;
    let dist = index.distances(&q);
    let mut rows: Vec<usize> = (0..dist.len()).collect();
    let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
    if k < rows.len() {
        rows.select_nth_unstable_by(k - 1, cmp);
        rows.truncate(k);
    }
    rows.sort_unstable_by(cmp);
    Ok(rows
        .into_iter()
        .map(|r| Neighbor {
            train_row: r,
            distance: dist[r],
            label: index.labels[r],
        })
        .collect())
}

/// Majority vote over the `k` nearest neighbours. Vote ties go to the label
/// with the smaller summed distance, then to the lower label.
pub fn classify(index: &KnnIndex, x: &[f64], k: usize) -> Result<(u32, Vec<Neighbor>)> {
    let neighbors = retrieve(index, x, k)?;
    let mut tally: Vec<(u32, usize, f64)> = Vec::new();
    for n in &neighbors {
        match tally.iter_mut().find(|t| t.0 == n.label) {
            Some(t) => {
                t.1 += 1;
                t.2 += n.distance;
            }
            None => tally.push((n.label, 1, n.distance)),
        }
    }
    let winner = tally
        .iter()
        .min_by(|a, b| b.1.cmp(&a.1).then(a.2.total_cmp(&b.2)).then(a.0.cmp(&b.0)))
        .map(|t| t.0)
        .expect("k >= 1");
    Ok((winner, neighbors))
}

/// Negative distance to the nearest training vector (higher means more known).
pub fn rejection_score_nn(index: &KnnIndex, x: &[f64]) -> Result<f64> {
    let q = index.unit_query(x)?;
    let min = index.distances(&q).into_iter().fold(f64::INFINITY, f64::min);
    Ok(-min)
}

/// Per-query prediction for a batch, evaluated in parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnPrediction {
    pub label: u32,
    /// `−` nearest cosine distance.
    pub score: f64,
}

pub fn classify_batch(index: &KnnIndex, x: &Matrix, k: usize) -> Result<Vec<KnnPrediction>> {
    index.check_k(k)?;
    (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let (label, neighbors) = classify(index, x.row(i), k).map_err(|e| match e {
                Error::ZeroNorm { .. } => Error::ZeroNorm { row: i },
                e => e,
            })?;
            Ok(KnnPrediction {
                label,
                score: -neighbors[0].distance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::Normalization;

    fn index(rows: &[[f32; 2]], labels: &[i32]) -> KnnIndex {
        let f = rows.iter().flatten().copied().collect();
        let set = FeatureSet::new(
            f,
            2,
            labels.to_vec(),
            vec!["a".into(), "b".into()],
            "t",
            0,
            Normalization::None,
        )
        .unwrap();
        build_index(&set).unwrap()
    }

    #[test]
    fn index_stores_unit_rows() {
        let idx = index(&[[3.0, 4.0], [1.0, 0.0], [0.0, 2.0]], &[0, 1, 2]);
        assert_eq!(idx.len(), 3);
        assert!((idx.vectors()[(0, 0)] - 0.6).abs() < 1e-7);
        for r in idx.vectors().rows_iter() {
            assert!((norm(r) - 1.0).abs() < 1e-12);
        }
        let empty = FeatureSet::new(vec![], 2, vec![], vec![], "t", 0, Normalization::None).unwrap();
        assert!(build_index(&empty).is_err());
    }

    #[test]
    fn cosine_distance_examples() {
        assert_eq!(cosine_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-2.0, 0.0]).unwrap(), 2.0);
        assert!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn classify_examples() {
        let idx = index(&[[1.0, 0.0], [0.0, 1.0]], &[1, 2]);
        let (label, n) = classify(&idx, &[0.0, 1.0], 1).unwrap();
        assert_eq!((label, n[0].distance), (2, 0.0));

        // votes {a, a, b}
        let idx = index(&[[1.0, 0.0], [1.0, 0.1], [1.0, 0.2]], &[1, 1, 2]);
        assert_eq!(classify(&idx, &[1.0, 0.0], 3).unwrap().0, 1);

        // one vote each: the closer neighbour's class wins
        let idx = index(&[[1.0, 0.0], [0.0, 1.0]], &[2, 1]);
        assert_eq!(classify(&idx, &[1.0, 0.3], 2).unwrap().0, 2);
        assert!(classify(&idx, &[1.0, 0.3], 3).is_err());
        assert!(classify(&idx, &[1.0, 0.3], 0).is_err());
    }

    #[test]
    fn nn_score_examples() {
        let idx = index(&[[1.0, 0.0], [-1.0, 0.0]], &[1, 2]);
        assert_eq!(rejection_score_nn(&idx, &[2.0, 0.0]).unwrap(), 0.0);
        assert_eq!(rejection_score_nn(&idx, &[0.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn retrieval_orders_duplicates_by_row() {
        let idx = index(&[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0]], &[0, 1, 2, 1]);
        let r = retrieve(&idx, &[1.0, 0.0], 4).unwrap();
        let rows: Vec<usize> = r.iter().map(|n| n.train_row).collect();
        assert_eq!(rows, vec![1, 2, 3, 0]);
    }
}
