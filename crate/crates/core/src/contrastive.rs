//! Linear projection head trained with the supervised contrastive loss.
//!
//! For projected, unit-normalized embeddings `z_i` the loss of anchor `i` is
//!
//! ```text
//! L_i = -1/|P(i)| Σ_{p ∈ P(i)} log( exp(z_i·z_p/τ) / Σ_{a ≠ i} exp(z_i·z_a/τ) )
//! ```
//!
//! where `P(i)` are the other batch members sharing the anchor's label.
//! Anchors without positives are left out of the batch mean.

use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{self, PROJ_MAGIC};
use crate::error::{Error, Result};
use crate::feature_store::{l2_normalize, FeatureSet, Normalization};
use crate::matrix::{dot, norm, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    /// `out_dim × dim`.
    pub matrix: Matrix,
    pub temperature: f64,
    pub epochs_trained: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ProjMeta {
    out_dim: u64,
    dim: u64,
    tau: f64,
    epochs: u64,
    seed: u64,
}

impl ProjectionHead {
    pub fn new(matrix: Matrix, temperature: f64) -> Result<Self> {
        if matrix.nrows() < 2 {
            return Err(Error::validation("projection needs out_dim >= 2"));
        }
        if !matrix.is_finite() {
            return Err(Error::validation("projection matrix has non-finite entries"));
        }
        check_tau(temperature)?;
        Ok(ProjectionHead {
            matrix,
            temperature,
            epochs_trained: 0,
            seed: 0,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = ProjMeta {
            out_dim: self.out_dim() as u64,
            dim: self.dim() as u64,
            tau: self.temperature,
            epochs: self.epochs_trained as u64,
            seed: self.seed,
        };
        let mut payload = Vec::new();
        container::push_f32s(&mut payload, self.matrix.as_slice().iter().map(|&v| v as f32));
        container::encode(PROJ_MAGIC, &meta, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload): (ProjMeta, _) = container::decode(PROJ_MAGIC, bytes)?;
        container::check_payload_len(payload, 4 * meta.out_dim * meta.dim)?;
        let values = container::read_f32s(payload).into_iter().map(f64::from).collect();
        Ok(ProjectionHead {
            matrix: Matrix::from_vec(meta.out_dim as usize, meta.dim as usize, values)?,
            temperature: meta.tau,
            epochs_trained: meta.epochs as usize,
            seed: meta.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("temperature must be positive, got {tau}")))
    }
}

/// Mean SupCon loss over anchors that have positives, and its gradient with
/// respect to the projection matrix (normalization Jacobian included).
pub fn supcon_loss_and_grad(head: &ProjectionHead, x: &Matrix, y: &[u32], tau: f64) -> Result<(f64, Matrix)> {
    check_tau(tau)?;
    if x.ncols() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: x.ncols(),
        });
    }
    let b = x.nrows();
    if y.len() != b {
        return Err(Error::DimensionMismatch { expected: b, got: y.len() });
    }
    if b < 2 {
        return Err(Error::validation("SupCon batch needs at least 2 rows"));
    }

    let out = head.out_dim();
    let mut z = Matrix::zeros(b, out);
    let mut norms = vec![0.0; b];
    for i in 0..b {
        let h = head.matrix.mul_vec(x.row(i));
        let n = norm(&h);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm { row: i });
        }
        norms[i] = n;
        for (zv, hv) in z.row_mut(i).iter_mut().zip(&h) {
            *zv = hv / n;
        }
    }

    let mut sim = Matrix::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let s = dot(z.row(i), z.row(j)) / tau;
            sim[(i, j)] = s;
            sim[(j, i)] = s;
        }
    }

    let mut gz = Matrix::zeros(b, out);
    let mut loss = 0.0;
    let mut anchors = 0usize;
    let mut coef = vec![0.0; b];
    for i in 0..b {
        let n_pos = (0..b).filter(|&a| a != i && y[a] == y[i]).count();
        if n_pos == 0 {
            continue;
        }
        anchors += 1;
        let max = (0..b)
            .filter(|&a| a != i)
            .map(|a| sim[(i, a)])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (sim[(i, a)] - max).exp()).sum();
        let lse = max + denom.ln();
        let pos_mean = (0..b)
            .filter(|&a| a != i && y[a] == y[i])
            .map(|a| sim[(i, a)])
            .sum::<f64>()
            / n_pos as f64;
        loss += lse - pos_mean;
        for a in 0..b {
            coef[a] = if a == i {
                0.0
            } else {
                let q = (sim[(i, a)] - lse).exp();
                let target = if y[a] == y[i] { 1.0 / n_pos as f64 } else { 0.0 };
                (q - target) / tau
            };
        }
        // ∂s_ia/∂z_i = z_a/τ and ∂s_ia/∂z_a = z_i/τ
        for a in 0..b {
            if coef[a] == 0.0 {
                continue;
            }
            let c = coef[a];
            for k in 0..out {
                let (zi, za) = (z[(i, k)], z[(a, k)]);
                gz[(i, k)] += c * za;
                gz[(a, k)] += c * zi;
            }
        }
    }
    if anchors == 0 {
        return Err(Error::validation("no positive pairs in batch"));
    }
    let scale = 1.0 / anchors as f64;
    loss *= scale;

    let mut grad = Matrix::zeros(out, head.dim());
    for i in 0..b {
        let zi = z.row(i);
        let g = gz.row(i);
        let along = dot(zi, g);
        let xi = x.row(i);
        for k in 0..out {
            // Jacobian of h ↦ h/‖h‖ is (I − z zᵀ)/‖h‖
            let gh = scale * (g[k] - zi[k] * along) / norms[i];
            if gh == 0.0 {
                continue;
            }
            for (gw, &xv) in grad.row_mut(k).iter_mut().zip(xi) {
                *gw += gh * xv;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub tau: f64,
    pub out_dim: usize,
    pub seed: u64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            tau: 0.1,
            out_dim: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProjectionTrace {
    /// Mean loss over the processed batches of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Batches skipped because no anchor had a positive.
    pub skipped_batches: usize,
}

/// Seeded Gaussian initialization with entries of variance `1/dim`.
pub fn init_head(dim: usize, opts: &ProjectionOptions) -> Result<ProjectionHead> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
    let data = (0..opts.out_dim * dim).map(|_| normal.sample(&mut rng)).collect();
    let mut head = ProjectionHead::new(Matrix::from_vec(opts.out_dim, dim, data)?, opts.tau)?;
    head.seed = opts.seed;
    Ok(head)
}

/// Mini-batch gradient descent on the SupCon loss for `opts.epochs` passes.
/// Input rows are L2-normalized before projection.
pub fn train_projection(train: &FeatureSet, opts: &ProjectionOptions) -> Result<(ProjectionHead, ProjectionTrace)> {
    if opts.batch_size < 2 {
        return Err(Error::validation("batch_size must be at least 2"));
    }
    if train.classes().len() < 2 {
        return Err(Error::validation("projection training needs at least 2 classes"));
    }
    if !(opts.learning_rate > 0.0) {
        return Err(Error::validation("learning rate must be positive"));
    }
    let x = l2_normalize(train)?.to_matrix();
    let labels = train.labels();
    let mut head = init_head(train.dim(), opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut trace = ProjectionTrace::default();

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut used = 0usize;
        for batch in order.chunks(opts.batch_size) {
            let y: Vec<u32> = batch.iter().map(|&i| labels[i]).collect();
            let has_pair = y.iter().enumerate().any(|(a, la)| y[a + 1..].contains(la));
            if !has_pair {
                trace.skipped_batches += 1;
                continue;
            }
            let xb = x.select_rows(batch);
            let (loss, grad) = supcon_loss_and_grad(&head, &xb, &y, opts.tau)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { iteration: epoch });
            }
            for (w, g) in head.matrix.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *w -= opts.learning_rate * g;
            }
            sum += loss;
            used += 1;
        }
        if used == 0 {
            return Err(Error::validation(format!("epoch {epoch}: every batch was degenerate")));
        }
        debug!("supcon epoch {epoch}: mean loss {:.6}", sum / used as f64);
        trace.epoch_losses.push(sum / used as f64);
    }
    if trace.skipped_batches > 0 {
        warn!("skipped {} batches without positive pairs", trace.skipped_batches);
    }
    head.epochs_trained = opts.epochs;
    Ok((head, trace))
}

/// Projects rows and normalizes them to unit length.
pub fn project(head: &ProjectionHead, x: &Matrix) -> Result<Matrix> {
    if x.ncols() != head.dim() {
        return Err(Error::DimensionMismatch {
            expected: head.dim(),
            got: x.ncols(),
        });
    }
    let mut out = Matrix::zeros(x.nrows(), head.out_dim());
    for (i, xi) in x.rows_iter().enumerate() {
        let h = head.matrix.mul_vec(xi);
        let n = norm(&h);
        if n == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        for (o, v) in out.row_mut(i).iter_mut().zip(h) {
            *o = v / n;
        }
    }
    Ok(out)
}

/// Projects a whole feature set, keeping labels and provenance.
pub fn project_set(head: &ProjectionHead, set: &FeatureSet) -> Result<FeatureSet> {
    let p = project(head, &set.to_matrix())?;
    let f = p.as_slice().iter().map(|&v| v as f32).collect();
    let labels = set.labels().iter().map(|&l| l as i32).collect();
    FeatureSet::new(
        f,
        head.out_dim(),
        labels,
        set.generator_names().to_vec(),
        format!("{}+proj", set.backbone_id()),
        set.layer_index(),
        Normalization::L2,
    )
}

/// Mean cosine similarity over all same-class pairs of rows.
pub fn mean_intra_class_cosine(x: &Matrix, y: &[u32]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            if y[i] == y[j] {
                let (a, b) = (x.row(i), x.row(j));
                sum += dot(a, b) / (norm(a) * norm(b));
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pair_has_zero_loss() {
        let head = ProjectionHead::new(Matrix::identity(2), 0.1).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let (loss, _) = supcon_loss_and_grad(&head, &x, &[3, 3], 0.1).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn no_positive_pairs_is_an_error() {
        let head = ProjectionHead::new(Matrix::identity(2), 0.1).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let err = supcon_loss_and_grad(&head, &x, &[0, 1], 0.1).unwrap_err();
        assert!(err.to_string().contains("no positive pairs"));
        assert!(supcon_loss_and_grad(&head, &x, &[0, 0], 0.0).is_err());
    }

    #[test]
    fn project_examples() {
        let mut m = Matrix::zeros(3, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        let head = ProjectionHead::new(m, 0.1).unwrap();
        let x = Matrix::from_rows(&[vec![0.6, 0.8], vec![1.2, 1.6]]).unwrap();
        let p = project(&head, &x).unwrap();
        assert!((p[(0, 0)] - 0.6).abs() < 1e-12 && (p[(0, 1)] - 0.8).abs() < 1e-12 && p[(0, 2)] == 0.0);
        assert_eq!(p.row(0), p.row(1));
        let zero = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(project(&head, &zero), Err(Error::ZeroNorm { row: 0 })));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let f: Vec<f32> = (0..40).map(|i| ((i * 7 % 11) as f32) - 5.0).collect();
        let labels = (0..10).map(|i| i % 2).collect();
        let set = FeatureSet::new(f, 4, labels, vec!["g".into()], "t", 0, Normalization::None).unwrap();
        let opts = ProjectionOptions {
            epochs: 0,
            out_dim: 3,
            ..Default::default()
        };
        let (head, _) = train_projection(&set, &opts).unwrap();
        assert_eq!(head, init_head(4, &opts).unwrap());
        let bad = ProjectionOptions {
            batch_size: 1,
            ..opts
        };
        assert!(train_projection(&set, &bad).is_err());
    }

    #[test]
    fn head_file_roundtrip() {
        let head = init_head(5, &ProjectionOptions { out_dim: 3, ..Default::default() }).unwrap();
        let back = ProjectionHead::from_bytes(&head.to_bytes().unwrap()).unwrap();
        assert_eq!(back.out_dim(), 3);
        assert_eq!(back.temperature, head.temperature);
        assert_eq!(back.matrix[(2, 4)], head.matrix[(2, 4)] as f32 as f64);
    }
}
