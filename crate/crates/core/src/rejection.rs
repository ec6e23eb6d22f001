//! Open-set rejection scores.
//!
//! Every score follows one orientation: higher means "more likely from a
//! known generator". A sample is rejected when its score falls below a
//! threshold. Scores that are naturally "higher = unknown" (entropy,
//! residual norm, ViM's virtual-class probability) are negated.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::container::{self, IDSTAT_MAGIC};
use crate::error::{Error, Result};
use crate::feature_store::FeatureSet;
use crate::linear_probe::LogisticProbe;
use crate::matrix::{dot, log_sum_exp, norm, softmax, Matrix};

/// Relative ridge added to the pooled covariance: `ε·trace/d·I`.
pub const COVARIANCE_SHRINKAGE: f64 = 1e-6;

const DISTRIBUTION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReactVariant {
    Global,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    None,
    GenPlusResidual,
    GenPlusReact,
    GenPlusLocalReact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub energy_temperature: f64,
    pub gen_gamma: f64,
    pub gen_top_m: usize,
    pub react_percentile: f64,
    /// Principal subspace dimension; `None` means half the feature dimension.
    pub vim_subspace_dim: Option<usize>,
    pub react_variant: ReactVariant,
    pub combination: Combination,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            energy_temperature: 1.0,
            gen_gamma: 0.1,
            gen_top_m: 10,
            react_percentile: 0.99,
            vim_subspace_dim: None,
            react_variant: ReactVariant::Global,
            combination: Combination::None,
        }
    }
}

impl ScoreConfig {
    pub fn subspace_dim(&self, d: usize) -> usize {
        self.vim_subspace_dim.unwrap_or(d / 2)
    }

    /// Checks the config against `k` classes and feature dimension `d`.
    pub fn validate(&self, k: usize, d: usize) -> Result<()> {
        if !(self.gen_gamma > 0.0 && self.gen_gamma < 1.0) {
            return Err(Error::validation(format!("gen_gamma must lie in (0, 1), got {}", self.gen_gamma)));
        }
        if self.gen_top_m == 0 || self.gen_top_m > k {
            return Err(Error::validation(format!("gen_top_m must lie in [1, {k}], got {}", self.gen_top_m)));
        }
        if !(self.react_percentile > 0.0 && self.react_percentile < 1.0) {
            return Err(Error::validation("react_percentile must lie in (0, 1)"));
        }
        if !(self.energy_temperature > 0.0) {
            return Err(Error::validation("energy temperature must be positive"));
        }
        let dd = self.subspace_dim(d);
        if dd == 0 || dd >= d {
            return Err(Error::validation(format!("subspace dim must lie in [1, {d}), got {dd}")));
        }
        Ok(())
    }
}

/// Min/max of a component score on validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(
            ScoreRange {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |r, v| ScoreRange {
                min: r.min.min(v),
                max: r.max.max(v),
            },
        )
    }

    /// Maps into `[0, 1]`, clamping values outside the recorded range.
    pub fn normalize(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span > 0.0 {
            ((v - self.min) / span).clamp(0.0, 1.0)
        } else if v >= self.max {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentRanges {
    pub gen: ScoreRange,
    pub residual: ScoreRange,
}

/// Statistics of the known training features used by feature-based scores.
#[derive(Debug, Clone, PartialEq)]
pub struct IdStatistics {
    pub class_names: Vec<String>,
    /// `K × d`.
    pub class_means: Matrix,
    /// `d × d`, pooled within-class and shrinkage-regularized.
    pub shared_covariance: Matrix,
    pub precision: Matrix,
    /// `d × D`, orthonormal columns.
    pub principal_basis: Matrix,
    pub feature_mean: Vec<f64>,
    pub residual_scale: f64,
    pub react_threshold: f64,
    pub ranges: Option<ComponentRanges>,
}

#[derive(Serialize, Deserialize)]
struct IdStatMeta {
    class_names: Vec<String>,
    dim: u64,
    subspace_dim: u64,
    alpha: f64,
    react_threshold: f64,
    ranges: Option<ComponentRanges>,
}

impl IdStatistics {
    pub fn dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.principal_basis.ncols()
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: z.len(),
            })
        }
    }

    /// Norm of the centered feature's component orthogonal to the principal subspace.
    pub fn residual_norm(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let c: Vec<f64> = z.iter().zip(&self.feature_mean).map(|(a, m)| a - m).collect();
        let d = self.dim();
        let dd = self.subspace_dim();
        let mut coeffs = vec![0.0; dd];
        for i in 0..d {
            for (j, cj) in coeffs.iter_mut().enumerate() {
                *cj += self.principal_basis[(i, j)] * c[i];
            }
        }
        let mut r = c;
        for (i, ri) in r.iter_mut().enumerate() {
            for (j, cj) in coeffs.iter().enumerate() {
                *ri -= self.principal_basis[(i, j)] * cj;
            }
        }
        Ok(norm(&r))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = IdStatMeta {
            class_names: self.class_names.clone(),
            dim: self.dim() as u64,
            subspace_dim: self.subspace_dim() as u64,
            alpha: self.residual_scale,
            react_threshold: self.react_threshold,
            ranges: self.ranges,
        };
        let mut payload = Vec::new();
        for m in [&self.class_means, &self.shared_covariance, &self.principal_basis] {
            container::push_f32s(&mut payload, m.as_slice().iter().map(|&v| v as f32));
        }
        container::push_f32s(&mut payload, self.feature_mean.iter().map(|&v| v as f32));
        container::encode(IDSTAT_MAGIC, &meta, &payload)
    }

    /// Decodes statistics; the precision matrix is recomputed from the stored covariance.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, payload): (IdStatMeta, _) = container::decode(IDSTAT_MAGIC, bytes)?;
        let (k, d, dd) = (meta.class_names.len(), meta.dim as usize, meta.subspace_dim as usize);
        container::check_payload_len(payload, 4 * (k * d + d * d + d * dd + d) as u64)?;
        let v: Vec<f64> = container::read_f32s(payload).into_iter().map(f64::from).collect();
        let (means, rest) = v.split_at(k * d);
        let (cov, rest) = rest.split_at(d * d);
        let (basis, mean) = rest.split_at(d * dd);
        let shared_covariance = Matrix::from_vec(d, d, cov.to_vec())?;
        let precision = invert_spd(&shared_covariance)?;
        Ok(IdStatistics {
            class_names: meta.class_names,
            class_means: Matrix::from_vec(k, d, means.to_vec())?,
            shared_covariance,
            precision,
            principal_basis: Matrix::from_vec(d, dd, basis.to_vec())?,
            feature_mean: mean.to_vec(),
            residual_scale: meta.alpha,
            react_threshold: meta.react_threshold,
            ranges: meta.ranges,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?)
    }
}

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.nrows(), m.ncols(), m.as_slice())
}

fn from_nalgebra(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn invert_spd(m: &Matrix) -> Result<Matrix> {
    let chol = nalgebra::Cholesky::new(to_nalgebra(m))
        .ok_or_else(|| Error::validation("covariance is not positive definite after shrinkage"))?;
    Ok(from_nalgebra(&chol.inverse()))
}

/// Linear-interpolation quantile (`q ∈ [0, 1]`) of unsorted values.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut lo_v, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || upper.is_empty() {
        return lo_v;
    }
    let hi_v = upper.iter().cloned().fold(f64::INFINITY, f64::min);
    lo_v + frac * (hi_v - lo_v)
}

/// Fits class means, pooled covariance, principal subspace, the ViM scale α
/// and the global ReAct threshold on known training features.
pub fn fit_id_statistics(train: &FeatureSet, probe: &LogisticProbe, cfg: &ScoreConfig) -> Result<IdStatistics> {
    let d = train.dim();
    let n = train.count();
    if d != probe.dim() {
        return Err(Error::DimensionMismatch {
            expected: probe.dim(),
            got: d,
        });
    }
    if n < d + 1 {
        return Err(Error::validation(format!("need at least {} rows for {d}-d statistics, got {n}", d + 1)));
    }
    let dd = cfg.subspace_dim(d);
    if dd == 0 || dd >= d {
        return Err(Error::validation(format!("subspace dim must lie in [1, {d}), got {dd}")));
    }
    let x = train.to_matrix();
    let by_class = train.rows_by_class();
    let mut class_names = Vec::with_capacity(by_class.len());
    let mut class_means = Matrix::zeros(by_class.len(), d);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (ci, (&label, rows)) in by_class.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::validation(format!(
                "class {:?} has {} row(s); at least 2 are required",
                train.label_name(label),
                rows.len()
            )));
        }
        class_names.push(train.label_name(label).to_string());
        let mean = class_means.row_mut(ci);
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        let mean = class_means.row(ci).to_vec();
        for &r in rows {
            let c = nalgebra::DVector::from_iterator(d, x.row(r).iter().zip(&mean).map(|(a, m)| a - m));
            cov.ger(1.0, &c, &c, 1.0);
        }
    }
    cov /= n as f64;
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::validation("within-class covariance has zero trace"));
    }
    for i in 0..d {
        cov[(i, i)] += COVARIANCE_SHRINKAGE * trace / d as f64;
    }
    let shared_covariance = from_nalgebra(&cov);
    let precision = invert_spd(&shared_covariance)?;

    // principal subspace of the globally centered features
    let mut feature_mean = vec![0.0; d];
    for r in x.rows_iter() {
        for (m, v) in feature_mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    feature_mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, r) in x.rows_iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = r[j] - feature_mean[j];
        }
    }
    let gcov = centered.tr_mul(&centered) / n as f64;
    let eig = SymmetricEigen::new(gcov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut basis = Matrix::zeros(d, dd);
    for (j, &src) in order.iter().take(dd).enumerate() {
        let col = eig.eigenvectors.column(src);
        // fix the sign so the largest-magnitude entry is positive
        let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[(i, j)] = sign * col[i];
        }
    }

    let mut stats = IdStatistics {
        class_names,
        class_means,
        shared_covariance,
        precision,
        principal_basis: basis,
        feature_mean,
        residual_scale: 0.0,
        react_threshold: 0.0,
        ranges: None,
    };

    let mut logit_sum = 0.0;
    let mut residual_sum = 0.0;
    for r in x.rows_iter() {
        logit_sum += score_maxlogit(&probe.logits(r)?);
        residual_sum += stats.residual_norm(r)?;
    }
    stats.residual_scale = if residual_sum > 0.0 { logit_sum / residual_sum } else { 0.0 };
    let mut activations = x.into_vec();
    stats.react_threshold = quantile(&mut activations, cfg.react_percentile);
    Ok(stats)
}

/// Records GEN and residual score ranges on validation data, enabling the
/// `gen_plus_residual` combination.
pub fn calibrate_ranges(
    stats: &IdStatistics,
    probe: &LogisticProbe,
    val: &FeatureSet,
    cfg: &ScoreConfig,
) -> Result<IdStatistics> {
    if val.is_empty() {
        return Err(Error::validation("calibration needs validation rows"));
    }
    let x = val.to_matrix();
    let m = cfg.gen_top_m.min(probe.num_classes());
    let mut gens = Vec::with_capacity(x.nrows());
    let mut res = Vec::with_capacity(x.nrows());
    for r in x.rows_iter() {
        gens.push(score_gen(&softmax(&probe.logits(r)?), cfg.gen_gamma, m)?);
        res.push(score_residual(stats, r)?);
    }
    let mut out = stats.clone();
    out.ranges = Some(ComponentRanges {
        gen: ScoreRange::of(gens),
        residual: ScoreRange::of(res),
    });
    Ok(out)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > DISTRIBUTION_TOL {
        return Err(Error::validation(format!("not a probability distribution (sum {sum})")));
    }
    Ok(())
}

/// Maximum softmax probability.
pub fn score_msp(proba: &[f64]) -> Result<f64> {
    check_distribution(proba)?;
    Ok(proba.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

pub fn score_maxlogit(logits: &[f64]) -> f64 {
    logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `T · log Σ exp(logit/T)`.
pub fn score_energy(logits: &[f64], temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::validation(format!("energy temperature must be positive, got {temperature}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    Ok(temperature * log_sum_exp(&scaled))
}

/// Negated Shannon entropy `Σ p ln p` (with `0 ln 0 = 0`).
pub fn score_entropy(proba: &[f64]) -> Result<f64> {
    check_distribution(proba)?;
    Ok(proba.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum())
}

/// Negated generalized entropy over the `top_m` largest probabilities:
/// `−Σ p^γ (1−p)^γ`.
pub fn score_gen(proba: &[f64], gamma: f64, top_m: usize) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::validation(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if top_m == 0 || top_m > proba.len() {
        return Err(Error::validation(format!("top_m must lie in [1, {}], got {top_m}", proba.len())));
    }
    check_distribution(proba)?;
    let mut sorted = proba.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(-sorted[..top_m]
        .iter()
        .map(|&p| p.powf(gamma) * (1.0 - p).max(0.0).powf(gamma))
        .sum::<f64>())
}

/// L1 norm of the gradient, with respect to the probe weights, of
/// `KL(uniform ‖ softmax(Wx + b))`. For a linear head this is
/// `Σ_k |p_k − 1/K| · Σ_j |x_j|`.
pub fn score_gradnorm(probe: &LogisticProbe, x: &[f64]) -> Result<f64> {
    let p = softmax(&probe.logits(x)?);
    let u = 1.0 / p.len() as f64;
    let class_part: f64 = p.iter().map(|pk| (pk - u).abs()).sum();
    let feature_part: f64 = x.iter().map(|v| v.abs()).sum();
    Ok(class_part * feature_part)
}

/// Negative Mahalanobis distance to the closest class mean.
pub fn score_mahalanobis(stats: &IdStatistics, z: &[f64]) -> Result<f64> {
    stats.check_dim(z)?;
    let d = stats.dim();
    let mut best = f64::INFINITY;
    let mut diff = vec![0.0; d];
    for mu in stats.class_means.rows_iter() {
        for ((o, a), m) in diff.iter_mut().zip(z).zip(mu) {
            *o = a - m;
        }
        let m = dot(&diff, &stats.precision.mul_vec(&diff));
        best = best.min(m);
    }
    Ok(-best)
}

/// Negative norm of the feature's component outside the principal subspace.
pub fn score_residual(stats: &IdStatistics, z: &[f64]) -> Result<f64> {
    Ok(-stats.residual_norm(z)?)
}

/// Negative softmax probability of the virtual logit `α·‖z^{P⊥}‖` appended
/// to the probe logits.
pub fn score_vim(stats: &IdStatistics, probe: &LogisticProbe, z: &[f64]) -> Result<f64> {
    let mut logits = probe.logits(z)?;
    logits.push(stats.residual_scale * stats.residual_norm(z)?);
    let p = softmax(&logits);
    Ok(-p[p.len() - 1])
}

/// Clips feature activations and returns the probe logits of the clipped
/// feature. `Global` clips at the training threshold; `Local` clips at the
/// `percentile` quantile of the sample's own coordinates.
pub fn apply_react(
    stats: Option<&IdStatistics>,
    probe: &LogisticProbe,
    z: &[f64],
    variant: ReactVariant,
    percentile: f64,
) -> Result<Vec<f64>> {
    let c = match variant {
        ReactVariant::Global => {
            stats
                .ok_or_else(|| Error::validation("global ReAct needs fitted statistics"))?
                .react_threshold
        }
        ReactVariant::Local => {
            if z.is_empty() {
                return Err(Error::validation("empty feature"));
            }
            quantile(&mut z.to_vec(), percentile)
        }
    };
    let clipped: Vec<f64> = z.iter().map(|&v| v.min(c)).collect();
    probe.logits(&clipped)
}

/// Fused scores. `gen_plus_residual` averages the validation-range
/// normalized GEN and residual scores; the ReAct variants apply GEN to the
/// softmax of the clipped-feature logits.
pub fn score_combined(stats: &IdStatistics, probe: &LogisticProbe, z: &[f64], cfg: &ScoreConfig) -> Result<f64> {
    let m = cfg.gen_top_m.min(probe.num_classes());
    match cfg.combination {
        Combination::None => Err(Error::validation("no score combination configured")),
        Combination::GenPlusResidual => {
            let ranges = stats
                .ranges
                .ok_or_else(|| Error::validation("GEN + Residual needs validation ranges; call calibrate_ranges"))?;
            let gen = score_gen(&softmax(&probe.logits(z)?), cfg.gen_gamma, m)?;
            let res = score_residual(stats, z)?;
            Ok(0.5 * (ranges.gen.normalize(gen) + ranges.residual.normalize(res)))
        }
        Combination::GenPlusReact | Combination::GenPlusLocalReact => {
            let variant = if cfg.combination == Combination::GenPlusReact {
                ReactVariant::Global
            } else {
                ReactVariant::Local
            };
            let logits = apply_react(Some(stats), probe, z, variant, cfg.react_percentile)?;
            score_gen(&softmax(&logits), cfg.gen_gamma, m)
        }
    }
}

/// Rejection strategy selectable from configuration and the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "msp")]
    Msp,
    #[serde(rename = "maxlogit")]
    MaxLogit,
    #[serde(rename = "energy")]
    Energy,
    #[serde(rename = "entropy")]
    Entropy,
    #[serde(rename = "gen")]
    Gen,
    #[serde(rename = "gradnorm")]
    GradNorm,
    #[serde(rename = "mahalanobis")]
    Mahalanobis,
    #[serde(rename = "residual")]
    Residual,
    #[serde(rename = "vim")]
    Vim,
    #[serde(rename = "gen+react")]
    GenReact,
    #[serde(rename = "gen+local-react")]
    GenLocalReact,
    #[serde(rename = "gen+residual")]
    GenResidual,
    /// Nearest-neighbour distance (kNN methods only).
    #[serde(rename = "nn")]
    NearestNeighbor,
}

impl Strategy {
    pub const ALL_PROBE: [Strategy; 12] = [
        Strategy::Msp,
        Strategy::MaxLogit,
        Strategy::Energy,
        Strategy::Entropy,
        Strategy::Gen,
        Strategy::GradNorm,
        Strategy::Mahalanobis,
        Strategy::Residual,
        Strategy::Vim,
        Strategy::GenReact,
        Strategy::GenLocalReact,
        Strategy::GenResidual,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Msp => "msp",
            Strategy::MaxLogit => "maxlogit",
            Strategy::Energy => "energy",
            Strategy::Entropy => "entropy",
            Strategy::Gen => "gen",
            Strategy::GradNorm => "gradnorm",
            Strategy::Mahalanobis => "mahalanobis",
            Strategy::Residual => "residual",
            Strategy::Vim => "vim",
            Strategy::GenReact => "gen+react",
            Strategy::GenLocalReact => "gen+local-react",
            Strategy::GenResidual => "gen+residual",
            Strategy::NearestNeighbor => "nn",
        }
    }

    /// True when the score needs [`IdStatistics`].
    pub fn needs_statistics(&self) -> bool {
        matches!(
            self,
            Strategy::Mahalanobis
                | Strategy::Residual
                | Strategy::Vim
                | Strategy::GenReact
                | Strategy::GenResidual
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL_PROBE
            .iter()
            .chain([Strategy::NearestNeighbor].iter())
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown score strategy {s:?}")))
    }
}

/// Everything needed to score samples against a trained probe.
#[derive(Debug, Clone)]
pub struct ProbeScorer<'a> {
    pub probe: &'a LogisticProbe,
    pub stats: Option<&'a IdStatistics>,
    pub cfg: ScoreConfig,
}

impl ProbeScorer<'_> {
    /// Scores one feature vector. GEN's `top_m` is capped at the number of classes.
    pub fn score(&self, strategy: Strategy, z: &[f64]) -> Result<f64> {
        let cfg = &self.cfg;
        let m = cfg.gen_top_m.min(self.probe.num_classes());
        let stats = || {
            self.stats
                .ok_or_else(|| Error::validation(format!("score {strategy} needs fitted statistics")))
        };
        match strategy {
            Strategy::Msp => score_msp(&softmax(&self.probe.logits(z)?)),
            Strategy::MaxLogit => Ok(score_maxlogit(&self.probe.logits(z)?)),
            Strategy::Energy => score_energy(&self.probe.logits(z)?, cfg.energy_temperature),
            Strategy::Entropy => score_entropy(&softmax(&self.probe.logits(z)?)),
            Strategy::Gen => score_gen(&softmax(&self.probe.logits(z)?), cfg.gen_gamma, m),
            Strategy::GradNorm => score_gradnorm(self.probe, z),
            Strategy::Mahalanobis => score_mahalanobis(stats()?, z),
            Strategy::Residual => score_residual(stats()?, z),
            Strategy::Vim => score_vim(stats()?, self.probe, z),
            Strategy::GenReact => score_combined(
                stats()?,
                self.probe,
                z,
                &ScoreConfig {
                    combination: Combination::GenPlusReact,
                    ..*cfg
                },
            ),
            Strategy::GenLocalReact => {
                let logits = apply_react(self.stats, self.probe, z, ReactVariant::Local, cfg.react_percentile)?;
                score_gen(&softmax(&logits), cfg.gen_gamma, m)
            }
            Strategy::GenResidual => score_combined(
                stats()?,
                self.probe,
                z,
                &ScoreConfig {
                    combination: Combination::GenPlusResidual,
                    ..*cfg
                },
            ),
            Strategy::NearestNeighbor => Err(Error::validation("the nn score applies to kNN methods only")),
        }
    }
}
