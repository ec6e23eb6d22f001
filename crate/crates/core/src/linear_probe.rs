//! L2-regularized multinomial logistic regression on frozen features.

use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{self, PROBE_MAGIC};
use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::lbfgs::{self, LbfgsOptions};
use crate::matrix::{dot, log_sum_exp, softmax, Matrix};

/// Rows per block of the parallel loss reduction. Fixed so the summation
/// order, and therefore the result, does not depend on the thread count.
const REDUCE_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub history_size: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_iterations: 1000,
            gradient_tolerance: 1e-6,
            history_size: 10,
            seed: 0,
        }
    }
}

impl TrainOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.history_size == 0 || !(self.gradient_tolerance > 0.0) {
            return Err(Error::validation("train options must be strictly positive"));
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iterations: self.max_iterations,
            gradient_tolerance: self.gradient_tolerance,
            history_size: self.history_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    /// `K × dim`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub class_names: Vec<String>,
    pub lambda: f64,
    pub layer_index: i32,
    pub final_loss: f64,
    pub grad_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct ProbeMeta {
    class_names: Vec<String>,
    dim: u64,
    lambda: f64,
    layer_index: i32,
    final_loss: f64,
    grad_norm: f64,
}

/// Diagnostics of a probe fit.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub initial_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loss_history: Vec<f64>,
}

impl LogisticProbe {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    /// Logits `W·x + b` of a single feature vector.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self
            .weights
            .rows_iter()
            .zip(&self.bias)
            .map(|(w, b)| dot(w, x) + b)
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = ProbeMeta {
            class_names: self.class_names.clone(),
            dim: self.dim() as u64,
            lambda: self.lambda,
            layer_index: self.layer_index,
            final_loss: self.final_loss,
            grad_norm: self.grad_norm,
        };
        let mut payload = Vec::new();
        container::push_f32s(&mut payload, self.weights.as_slice().iter().map(|&v| v as f32));
        container::push_f32s(&mut payload, self.bias.iter().map(|&v| v as f32));
        container::encode(PROBE_MAGIC, &meta, &payload)
    }

    /// Decodes a probe. Parameters come back rounded to `f32`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload): (ProbeMeta, _) = container::decode(PROBE_MAGIC, bytes)?;
        let k = meta.class_names.len() as u64;
        container::check_payload_len(payload, 4 * (k * meta.dim + k))?;
        let values: Vec<f64> = container::read_f32s(payload).into_iter().map(f64::from).collect();
        let split = (k * meta.dim) as usize;
        Ok(LogisticProbe {
            weights: Matrix::from_vec(k as usize, meta.dim as usize, values[..split].to_vec())?,
            bias: values[split..].to_vec(),
            class_names: meta.class_names,
            lambda: meta.lambda,
            layer_index: meta.layer_index,
            final_loss: meta.final_loss,
            grad_norm: meta.grad_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

struct Partial {
    loss: f64,
    grad: Vec<f64>,
    bad_row: Option<usize>,
}

/// Objective over flat parameters `[W row-major (K×d), b (K)]`.
fn objective(params: &[f64], x: &Matrix, y: &[usize], k: usize, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let d = x.ncols();
    let n = x.nrows();
    let (w, b) = params.split_at(k * d);
    let blocks: Vec<Partial> = (0..n.div_ceil(REDUCE_BLOCK))
        .into_par_iter()
        .map(|blk| {
            let mut part = Partial {
                loss: 0.0,
                grad: vec![0.0; params.len()],
                bad_row: None,
            };
            let mut logits = vec![0.0; k];
            for i in blk * REDUCE_BLOCK..((blk + 1) * REDUCE_BLOCK).min(n) {
                let xi = x.row(i);
                for c in 0..k {
                    logits[c] = dot(&w[c * d..(c + 1) * d], xi) + b[c];
                }
                let lse = log_sum_exp(&logits);
                let li = lse - logits[y[i]];
                if !li.is_finite() {
                    part.bad_row.get_or_insert(i);
                    continue;
                }
                part.loss += li;
                for c in 0..k {
                    let r = (logits[c] - lse).exp() - if c == y[i] { 1.0 } else { 0.0 };
                    let gw = &mut part.grad[c * d..(c + 1) * d];
                    for (g, &xv) in gw.iter_mut().zip(xi) {
                        *g += r * xv;
                    }
                    part.grad[k * d + c] += r;
                }
            }
            part
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; params.len()];
    for p in blocks {
        if let Some(row) = p.bad_row {
            return Err(Error::Numerical {
                row,
                what: "non-finite cross-entropy".into(),
            });
        }
        loss += p.loss;
        for (g, v) in grad.iter_mut().zip(p.grad) {
            *g += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    loss *= inv_n;
    for g in &mut grad {
        *g *= inv_n;
    }
    loss += 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    for (g, &wv) in grad[..k * d].iter_mut().zip(w) {
        *g += lambda * wv;
    }
    Ok((loss, grad))
}

/// Mean cross-entropy of `softmax(W·x + b)` plus `λ/2·‖W‖²_F` (bias unpenalized),
/// and its gradient flattened as `[W row-major, b]`.
pub fn nll_loss_and_grad(weights: &Matrix, bias: &[f64], x: &Matrix, y: &[usize], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let k = weights.nrows();
    if bias.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: bias.len(),
        });
    }
    if x.ncols() != weights.ncols() {
        return Err(Error::DimensionMismatch {
            expected: weights.ncols(),
            got: x.ncols(),
        });
    }
    if y.len() != x.nrows() || x.nrows() == 0 {
        return Err(Error::validation("labels must match a nonempty design matrix"));
    }
    if let Some(bad) = y.iter().position(|&c| c >= k) {
        return Err(Error::validation(format!("row {bad}: class {} out of range", y[bad])));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be non-negative, got {lambda}")));
    }
    let mut params = weights.as_slice().to_vec();
    params.extend_from_slice(bias);
    objective(&params, x, y, k, lambda)
}

/// Design matrix and probe-class targets of a training set.
fn design(train: &FeatureSet) -> Result<(Matrix, Vec<usize>, Vec<String>)> {
    let classes = train.classes();
    if classes.len() < 2 {
        return Err(Error::validation(format!(
            "training needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let names = classes.iter().map(|&c| train.label_name(c).to_string()).collect();
    let y = train
        .labels()
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();
    Ok((train.to_matrix(), y, names))
}

/// Trains a probe from zero initialization.
pub fn train_probe(train: &FeatureSet, lambda: f64, opts: &TrainOptions) -> Result<LogisticProbe> {
    train_probe_traced(train, lambda, opts, None).map(|(p, _)| p)
}

/// Like [`train_probe`] but starts from `init` (flat `[W, b]`, zero when
/// `None`) and also returns the optimizer trace.
pub fn train_probe_traced(
    train: &FeatureSet,
    lambda: f64,
    opts: &TrainOptions,
    init: Option<&[f64]>,
) -> Result<(LogisticProbe, FitTrace)> {
    opts.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::validation(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let (x, y, class_names) = design(train)?;
    let (k, d) = (class_names.len(), x.ncols());
    let n_params = k * d + k;
    let x0 = match init {
        Some(v) if v.len() == n_params => v.to_vec(),
        Some(v) => {
            return Err(Error::DimensionMismatch {
                expected: n_params,
                got: v.len(),
            })
        }
        None => vec![0.0; n_params],
    };

    let mut failure = None;
    let outcome = lbfgs::minimize(
        |p, g| match objective(p, &x, &y, k, lambda) {
            Ok((l, grad)) => {
                g.copy_from_slice(&grad);
                l
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        x0,
        &opts.lbfgs(),
    );
    let outcome = match (outcome, failure) {
        (Ok(o), _) => o,
        (Err(_), Some(e)) | (Err(e), None) => return Err(e),
    };

    let (w, b) = outcome.x.split_at(k * d);
    let probe = LogisticProbe {
        weights: Matrix::from_vec(k, d, w.to_vec())?,
        bias: b.to_vec(),
        class_names,
        lambda,
        layer_index: train.layer_index(),
        final_loss: outcome.loss,
        grad_norm: outcome.grad_norm,
    };
    let trace = FitTrace {
        initial_loss: outcome.loss_history[0],
        iterations: outcome.iterations,
        converged: outcome.converged,
        loss_history: outcome.loss_history,
    };
    Ok((probe, trace))
}

/// Nine log-spaced strengths from 1e-4 to 1e4.
pub fn default_lambda_grid() -> Vec<f64> {
    (-4..=4).map(|e| 10f64.powi(e)).collect()
}

/// Fraction of rows whose argmax class matches the row's class name.
pub fn accuracy(probe: &LogisticProbe, set: &FeatureSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::validation("accuracy of an empty set"));
    }
    let logits = predict_logits(probe, &set.to_matrix())?;
    let correct = logits
        .rows_iter()
        .zip(set.labels())
        .filter(|(row, &l)| probe.class_names[argmax(row)] == set.label_name(l))
        .count();
    Ok(correct as f64 / set.count() as f64)
}

/// Trains one probe per grid point and keeps the one with the best
/// validation accuracy (ties go to the larger λ). A grid point whose training
/// fails is skipped with a warning.
pub fn sweep_regularization(
    train: &FeatureSet,
    val: &FeatureSet,
    grid: &[f64],
    opts: &TrainOptions,
) -> Result<(f64, LogisticProbe)> {
    if grid.is_empty() {
        return Err(Error::validation("empty regularization grid"));
    }
    let mut best: Option<(f64, f64, LogisticProbe)> = None;
    let mut last_err = None;
    for &lambda in grid {
        let probe = match train_probe(train, lambda, opts) {
            Ok(p) => p,
            Err(e) => {
                warn!("lambda {lambda}: training failed: {e}");
                last_err = Some(e);
                continue;
            }
        };
        let acc = accuracy(&probe, val)?;
        let better = match &best {
            None => true,
            Some((best_acc, best_lambda, _)) => acc > *best_acc || (acc == *best_acc && lambda > *best_lambda),
        };
        if better {
            best = Some((acc, lambda, probe));
        }
    }
    match best {
        Some((_, lambda, probe)) => Ok((lambda, probe)),
        None => Err(last_err.unwrap_or_else(|| Error::validation("every grid point failed"))),
    }
}

pub fn predict_logits(probe: &LogisticProbe, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != probe.dim() {
        return Err(Error::DimensionMismatch {
            expected: probe.dim(),
            got: x.ncols(),
        });
    }
    let k = probe.num_classes();
    let mut out = Matrix::zeros(x.nrows(), k);
    for (i, xi) in x.rows_iter().enumerate() {
        let row = out.row_mut(i);
        for (c, w) in probe.weights.rows_iter().enumerate() {
            row[c] = dot(w, xi) + probe.bias[c];
        }
    }
    Ok(out)
}

pub fn predict_proba(probe: &LogisticProbe, x: &Matrix) -> Result<Matrix> {
    let mut logits = predict_logits(probe, x)?;
    for i in 0..logits.nrows() {
        let p = softmax(logits.row(i));
        logits.row_mut(i).copy_from_slice(&p);
    }
    Ok(logits)
}

/// Index of the largest value; the first one wins on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::Normalization;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(margin: f64, per: usize, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for c in 0..2 {
            let cx = if c == 0 { -margin } else { margin };
            for _ in 0..per {
                f.push((cx + rng.random_range(-0.9..0.9)) as f32);
                f.push(rng.random_range(-1.0..1.0) as f32);
                l.push(c);
            }
        }
        FeatureSet::new(f, 2, l, vec!["g".into()], "t", 0, Normalization::None).unwrap()
    }

    #[test]
    fn zero_parameters_give_log_k() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0]]).unwrap();
        let (loss, _) = nll_loss_and_grad(&Matrix::zeros(4, 2), &[0.0; 4], &x, &[0, 1, 3], 0.5).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logit_leaves_only_penalty() {
        let w = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (loss, _) = nll_loss_and_grad(&w, &[0.0, 800.0], &x, &[1], 0.2).unwrap();
        assert!((loss - 0.1).abs() < 1e-12);
    }

    #[test]
    fn separable_blobs_are_fit_exactly() {
        let train = blobs(2.0, 50, 1);
        let p = train_probe(&train, 1e-4, &TrainOptions::default()).unwrap();
        assert_eq!(accuracy(&p, &train).unwrap(), 1.0);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let p = train_probe(&blobs(2.0, 50, 2), 1e6, &TrainOptions::default()).unwrap();
        assert!(p.weights.frobenius_norm_sq().sqrt() < 1e-2);
    }

    #[test]
    fn single_class_is_rejected() {
        let s = FeatureSet::new(vec![1.0, 2.0], 1, vec![0, 0], vec![], "t", 0, Normalization::None).unwrap();
        assert!(train_probe(&s, 1.0, &TrainOptions::default()).is_err());
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let train = blobs(1.0, 40, 3);
        let (a, trace) = train_probe_traced(&train, 1e-2, &TrainOptions::default(), None).unwrap();
        let (b, _) = train_probe_traced(&train, 1e-2, &TrainOptions::default(), None).unwrap();
        assert!(a.final_loss <= trace.initial_loss);
        assert!(trace.loss_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_examples() {
        let train = blobs(2.0, 40, 4);
        let val = blobs(2.0, 20, 5);
        let (l, _) = sweep_regularization(&train, &val, &[0.3], &TrainOptions::default()).unwrap();
        assert_eq!(l, 0.3);
        assert!(sweep_regularization(&train, &val, &[], &TrainOptions::default()).is_err());
    }

    #[test]
    fn logits_examples() {
        let p = LogisticProbe {
            weights: Matrix::identity(2),
            bias: vec![0.5, -0.5],
            class_names: vec!["a".into(), "b".into()],
            lambda: 0.0,
            layer_index: 0,
            final_loss: 0.0,
            grad_norm: 0.0,
        };
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let l = predict_logits(&p, &x).unwrap();
        assert_eq!(l.row(0), &[1.5, -0.5]);
        assert_eq!(l.row(1), &[0.5, -0.5]);
        assert!(predict_logits(&p, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn probe_file_roundtrip() {
        let p = train_probe(&blobs(2.0, 10, 6), 1e-2, &TrainOptions::default()).unwrap();
        let q = LogisticProbe::from_bytes(&p.to_bytes().unwrap()).unwrap();
        assert_eq!(q.class_names, p.class_names);
        for (a, b) in q.weights.as_slice().iter().zip(p.weights.as_slice()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(&q.to_bytes().unwrap()[..8], b"PROBEv1\n");
    }
}
