//! The minimax training loop.
//!
//! Each minibatch alternates three updates:
//!
//! 1. ascend every target feature vector inside its L2 ball to raise the
//!    loss against the current soft pseudo-labels,
//! 2. push the mixture weights by an exponentiated-gradient step toward
//!    the pseudo-sources whose conditionals the classifier currently
//!    violates most, then project back onto simplex ∩ ball,
//! 3. descend the classifier on the minibatch-mean gradient against the
//!    refreshed pseudo-labels at the perturbed features.
//!
//! With both radii zero the projections pin the adversary, and the loop is
//! exactly plain self-training on the mixture pseudo-labels: same floats,
//! same trace.

mod surrogate;

pub use surrogate::{surrogate_value, SurrogateConfig, SurrogateOutcome};

use crate::conditionals::ConditionalEnsemble;
use crate::dataset::{LabeledSet, UnlabeledSet};
use crate::numeric::{
    cross_entropy, project_ball, project_simplex_ball, softmax, Matrix, NumericError, ProbVector,
};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const CLASSIFIER_MAGIC: &[u8; 4] = b"DRLC";
pub const CLASSIFIER_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("shape mismatch: {reason}")]
    Shape { reason: String },
    #[error("loss became non-finite at iteration {iter}")]
    NonFiniteLoss { iter: usize, trace: TrainTrace },
    #[error("mixture weights collapsed to zero mass")]
    DegenerateWeights,
    #[error("evaluation set is empty")]
    EmptyEvaluation,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not a classifier file")]
    BadMagic,
    #[error("unsupported classifier version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// The ambiguity set parameters: covariate radius, mixture radius, and the
/// mixture center.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityConfig {
    pub eps1: f64,
    pub eps2: f64,
    pub beta_bar: ProbVector,
}

impl AmbiguityConfig {
    pub fn new(eps1: f64, eps2: f64, beta_bar: ProbVector) -> Result<Self, TrainError> {
        if !(eps1 >= 0.0) || !eps1.is_finite() {
            return Err(TrainError::InvalidConfig {
                reason: format!("eps1 must be finite and nonnegative, got {eps1}"),
            });
        }
        if !(eps2 >= 0.0) || !eps2.is_finite() {
            return Err(TrainError::InvalidConfig {
                reason: format!("eps2 must be finite and nonnegative, got {eps2}"),
            });
        }
        Ok(Self {
            eps1,
            eps2,
            beta_bar,
        })
    }

    /// Uniform mixture center over `k` pseudo-sources.
    pub fn uniform(eps1: f64, eps2: f64, k: usize) -> Result<Self, TrainError> {
        let beta_bar = ProbVector::uniform(k).map_err(TrainError::Numeric)?;
        Self::new(eps1, eps2, beta_bar)
    }
}

/// Adversarial mixture weights: a point of the simplex kept inside the L2
/// ball around the center by every update.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(ProbVector);

impl MixtureWeights {
    /// Start at the ball center.
    pub fn center(amb: &AmbiguityConfig) -> Self {
        Self(amb.beta_bar.clone())
    }

    pub fn from_prob(p: ProbVector) -> Self {
        Self(p)
    }

    pub fn prob(&self) -> &ProbVector {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Linear classifier over embeddings: logits are `W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    pub fn zeros(class_count: usize, feature_dim: usize) -> Self {
        Self {
            weights: Matrix::zeros(class_count, feature_dim),
            bias: vec![0.0; class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>, NumericError> {
        let mut out = self.weights.matvec(z)?;
        for (o, b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
        Ok(out)
    }

    pub fn predict_proba(&self, z: &[f64]) -> Result<ProbVector, NumericError> {
        softmax(&self.logits(z)?)
    }
}

/// Training hyperparameters. Step sizes must be positive; the zero-step
/// identities hold at the level of the individual update operations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta_z: f64,
    pub eta_beta: f64,
    pub eta_theta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub pgd_steps: usize,
    pub seed: u64,
    pub log_grad_norms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta_z: 0.1,
            eta_beta: 0.1,
            eta_theta: 0.1,
            epochs: 30,
            batch_size: 64,
            pgd_steps: 1,
            seed: 0,
            log_grad_norms: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("eta_z", self.eta_z),
            ("eta_beta", self.eta_beta),
            ("eta_theta", self.eta_theta),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TrainError::InvalidConfig {
                    reason: format!("{name} must be finite and positive, got {v}"),
                });
            }
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "epochs must be at least 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "batch_size must be at least 1".into(),
            });
        }
        if self.pgd_steps == 0 {
            return Err(TrainError::InvalidConfig {
                reason: "pgd_steps must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// One training iteration's diagnostics.
///
/// `z_ball_excess` is max_i ‖z′_i − z_i‖₂ − ε₁ over the minibatch, an
/// in-memory feasibility diagnostic that is not part of the CSV export.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm_beta: f64,
    pub grad_norm_theta: f64,
    pub beta: Vec<f64>,
    pub z_ball_excess: f64,
}

/// Per-iteration history of a training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    /// CSV export: `iter,loss,grad_norm_beta,grad_norm_theta,beta_0..beta_{K-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), std::io::Error> {
        let k = self.records.first().map(|r| r.beta.len()).unwrap_or(0);
        write!(w, "iter,loss,grad_norm_beta,grad_norm_theta")?;
        for i in 0..k {
            write!(w, ",beta_{i}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            write!(
                w,
                "{},{},{},{}",
                r.iter, r.loss, r.grad_norm_beta, r.grad_norm_theta
            )?;
            for b in &r.beta {
                write!(w, ",{b}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()
    }
}

/// Shuffled minibatch index lists for `epochs` passes over `n` rows,
/// reproducible from the seed. Exposed so a reference loop can consume the
/// same batches.
pub fn minibatch_schedule(n: usize, batch_size: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    let mut schedule = Vec::new();
    for _ in 0..epochs {
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(batch_size) {
            schedule.push(chunk.to_vec());
        }
    }
    schedule
}

/// Gradient of z ↦ cross_entropy(softmax(Wz + b), y) at `z`, given the
/// prediction already computed there: Wᵀ(π − y).
pub(crate) fn loss_grad_z(theta: &LinearClassifier, pi: &ProbVector, y: &ProbVector) -> Vec<f64> {
    let d = theta.feature_dim();
    let mut grad = vec![0.0; d];
    for cls in 0..theta.class_count() {
        let delta = pi[cls] - y[cls];
        for (g, w) in grad.iter_mut().zip(theta.weights.row(cls)) {
            *g += delta * w;
        }
    }
    grad
}

/// Projected gradient ascent on the covariate: `steps` gradient steps on
/// z ↦ ℓ(f(z), y), each followed by projection onto the ε₁ ball around
/// the starting point. Zero radius or zero step size return the start.
pub fn ascend_z(
    theta: &LinearClassifier,
    z_target: &[f64],
    y_soft: &ProbVector,
    eps1: f64,
    eta_z: f64,
    steps: usize,
) -> Result<Vec<f64>, TrainError> {
    if y_soft.len() != theta.class_count() {
        return Err(TrainError::Shape {
            reason: format!(
                "pseudo-label has {} classes, classifier has {}",
                y_soft.len(),
                theta.class_count()
            ),
        });
    }
    let mut z = z_target.to_vec();
    for _ in 0..steps {
        let pi = theta.predict_proba(&z)?;
        let grad = loss_grad_z(theta, &pi, y_soft);
        for (zi, g) in z.iter_mut().zip(&grad) {
            *zi += eta_z * g;
        }
        z = project_ball(&z, z_target, eps1)?;
    }
    Ok(z)
}

/// The multiplicative mixture update β̃_k ∝ β_k exp(η ℓ_k), computed with a
/// max-shifted exponent so large losses cannot overflow. Equal losses leave
/// β unchanged.
pub fn eg_step(beta: &ProbVector, losses: &[f64], eta: f64) -> Result<ProbVector, TrainError> {
    if losses.len() != beta.len() {
        return Err(TrainError::Shape {
            reason: format!(
                "{} losses for {} mixture weights",
                losses.len(),
                beta.len()
            ),
        });
    }
    if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
        return Err(TrainError::Numeric(NumericError::NonFinite { index: i }));
    }
    let shift = losses
        .iter()
        .map(|l| eta * l)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = beta
        .as_slice()
        .iter()
        .zip(losses)
        .map(|(b, l)| b * (eta * l - shift).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    if !(sum > 0.0) {
        return Err(TrainError::DegenerateWeights);
    }
    Ok(ProbVector::new_unchecked(
        weights.into_iter().map(|w| w / sum).collect(),
    ))
}

/// Exponentiated-gradient ascent step on the mixture weights followed by
/// projection onto simplex ∩ ball. A zero radius returns the center.
pub fn ascend_beta(
    beta: &MixtureWeights,
    per_group_losses: &[f64],
    eta_beta: f64,
    beta_bar: &ProbVector,
    eps2: f64,
) -> Result<MixtureWeights, TrainError> {
    let tilde = eg_step(beta.prob(), per_group_losses, eta_beta)?;
    let projected = project_simplex_ball(tilde.as_slice(), beta_bar, eps2)?;
    Ok(MixtureWeights(projected))
}

/// Single-sample gradient descent step on the classifier: for softmax with
/// cross-entropy the gradient is (π − y) z′ᵀ for the weights and (π − y)
/// for the bias.
pub fn descend_theta(
    theta: &LinearClassifier,
    z_prime: &[f64],
    y_soft: &ProbVector,
    eta_theta: f64,
) -> Result<LinearClassifier, TrainError> {
    if y_soft.len() != theta.class_count() {
        return Err(TrainError::Shape {
            reason: format!(
                "pseudo-label has {} classes, classifier has {}",
                y_soft.len(),
                theta.class_count()
            ),
        });
    }
    let pi = theta.predict_proba(z_prime)?;
    let mut out = theta.clone();
    for cls in 0..theta.class_count() {
        let delta = pi[cls] - y_soft[cls];
        out.bias[cls] -= eta_theta * delta;
        let row = out.weights.row_mut(cls);
        for (w, x) in row.iter_mut().zip(z_prime) {
            *w -= eta_theta * delta * x;
        }
    }
    Ok(out)
}

/// β-weighted combination of precomputed per-source conditionals; same
/// accumulation order as [`crate::conditionals::soft_pseudo_label`].
fn combine_conditionals(conds: &[ProbVector], beta: &[f64]) -> ProbVector {
    let c = conds[0].len();
    let mut out = vec![0.0; c];
    for (k, p) in conds.iter().enumerate() {
        let w = beta[k];
        for (o, pi) in out.iter_mut().zip(p.as_slice()) {
            *o += w * pi;
        }
    }
    ProbVector::new_unchecked(out)
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Run the full minimax loop from `theta0`.
///
/// Per minibatch: soft pseudo-labels at the current β, one covariate
/// ascent per sample, one projected exponentiated-gradient step on β using
/// the minibatch-mean per-source losses at the perturbed covariates,
/// pseudo-labels refreshed at the new β, then one classifier step on the
/// minibatch-mean gradient. Deterministic given the seed.
pub fn train(
    ensemble: &ConditionalEnsemble,
    target: &UnlabeledSet,
    amb: &AmbiguityConfig,
    cfg: &TrainConfig,
    theta0: &LinearClassifier,
) -> Result<(LinearClassifier, TrainTrace), TrainError> {
    cfg.validate()?;
    let k = ensemble.k();
    let c = ensemble.class_count;
    let d = ensemble.feature_dim;
    if target.dim() != d {
        return Err(TrainError::Shape {
            reason: format!("target has dim {}, ensemble expects {d}", target.dim()),
        });
    }
    if amb.beta_bar.len() != k {
        return Err(TrainError::Shape {
            reason: format!("beta_bar has length {}, ensemble has {k} sources", amb.beta_bar.len()),
        });
    }
    if theta0.class_count() != c || theta0.feature_dim() != d {
        return Err(TrainError::Shape {
            reason: format!(
                "initial classifier is ({}, {}), expected ({c}, {d})",
                theta0.class_count(),
                theta0.feature_dim()
            ),
        });
    }

    let n = target.len();
    // Conditionals depend only on the unperturbed target rows; compute once.
    let mut conditionals: Vec<Vec<ProbVector>> = Vec::with_capacity(n);
    for i in 0..n {
        let z = target.features.row(i);
        let mut per_source = Vec::with_capacity(k);
        for model in &ensemble.models {
            per_source.push(model.predict_proba(z)?);
        }
        conditionals.push(per_source);
    }

    let schedule = minibatch_schedule(n, cfg.batch_size, cfg.epochs, cfg.seed);
    let mut theta = theta0.clone();
    let mut beta = MixtureWeights::center(amb);
    let mut records: Vec<TraceRecord> = Vec::with_capacity(schedule.len());

    for (iter, batch) in schedule.iter().enumerate() {
        let m = batch.len();

        // Pseudo-labels at the current mixture.
        let y_pre: Vec<ProbVector> = batch
            .iter()
            .map(|&i| combine_conditionals(&conditionals[i], beta.as_slice()))
            .collect();

        // Step 1: covariate ascent per sample.
        let mut z_prime: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut z_excess = f64::NEG_INFINITY;
        for (&i, y) in batch.iter().zip(&y_pre) {
            let z_tg = target.features.row(i);
            let z = ascend_z(&theta, z_tg, y, amb.eps1, cfg.eta_z, cfg.pgd_steps)?;
            z_excess = z_excess.max(l2_dist(&z, z_tg) - amb.eps1);
            z_prime.push(z);
        }

        // Predictions at the perturbed covariates, reused below.
        let mut pi: Vec<ProbVector> = Vec::with_capacity(m);
        for z in &z_prime {
            pi.push(theta.predict_proba(z)?);
        }

        // Step 2: mixture ascent on minibatch-mean per-source losses.
        let mut group_losses = vec![0.0; k];
        for (kk, gl) in group_losses.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (p, &i) in pi.iter().zip(batch.iter()) {
                acc += cross_entropy(p, &conditionals[i][kk])?;
            }
            *gl = acc / m as f64;
        }
        let grad_norm_beta = if cfg.log_grad_norms {
            group_losses.iter().map(|l| l * l).sum::<f64>().sqrt()
        } else {
            0.0
        };
        beta = ascend_beta(&beta, &group_losses, cfg.eta_beta, &amb.beta_bar, amb.eps2)?;

        // Pseudo-labels at the updated mixture.
        let y_post: Vec<ProbVector> = batch
            .iter()
            .map(|&i| combine_conditionals(&conditionals[i], beta.as_slice()))
            .collect();

        // Step 3: classifier descent on the minibatch-mean gradient.
        let mut grad_w = Matrix::zeros(c, d);
        let mut grad_b = vec![0.0; c];
        let mut loss_acc = 0.0;
        for ((p, y), z) in pi.iter().zip(&y_post).zip(&z_prime) {
            loss_acc += cross_entropy(p, y)?;
            for cls in 0..c {
                let delta = p[cls] - y[cls];
                grad_b[cls] += delta;
                let gw = grad_w.row_mut(cls);
                for (g, x) in gw.iter_mut().zip(z) {
                    *g += delta * x;
                }
            }
        }
        let inv_m = 1.0 / m as f64;
        let loss = loss_acc * inv_m;
        for g in grad_w.data_mut() {
            *g *= inv_m;
        }
        for g in &mut grad_b {
            *g *= inv_m;
        }
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                iter,
                trace: TrainTrace { records },
            });
        }
        let grad_norm_theta = if cfg.log_grad_norms {
            (grad_w.sq_norm() + grad_b.iter().map(|g| g * g).sum::<f64>()).sqrt()
        } else {
            0.0
        };
        for (w, g) in theta.weights.data_mut().iter_mut().zip(grad_w.data()) {
            *w -= cfg.eta_theta * g;
        }
        for (b, g) in theta.bias.iter_mut().zip(&grad_b) {
            *b -= cfg.eta_theta * g;
        }

        records.push(TraceRecord {
            iter,
            loss,
            grad_norm_beta,
            grad_norm_theta,
            beta: beta.as_slice().to_vec(),
            z_ball_excess: z_excess,
        });
    }

    Ok((theta, TrainTrace { records }))
}

/// Classification metrics on a labeled set. Argmax ties break toward the
/// lowest class index; classes absent from the truth report `None`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub n_test: usize,
}

pub fn evaluate(theta: &LinearClassifier, truth: &LabeledSet) -> Result<Metrics, TrainError> {
    if truth.is_empty() {
        return Err(TrainError::EmptyEvaluation);
    }
    if truth.dim() != theta.feature_dim() || truth.class_count != theta.class_count() {
        return Err(TrainError::Shape {
            reason: format!(
                "truth set is ({} classes, {} dims), classifier is ({}, {})",
                truth.class_count,
                truth.dim(),
                theta.class_count(),
                theta.feature_dim()
            ),
        });
    }
    let c = truth.class_count;
    let mut correct = vec![0usize; c];
    let mut total = vec![0usize; c];
    for i in 0..truth.len() {
        let logits = theta.logits(truth.features.row(i))?;
        let mut best = 0usize;
        for (cls, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = cls;
            }
        }
        let label = truth.labels[i];
        total[label] += 1;
        if best == label {
            correct[label] += 1;
        }
    }
    let accuracy = correct.iter().sum::<usize>() as f64 / truth.len() as f64;
    let per_class_accuracy = correct
        .iter()
        .zip(&total)
        .map(|(&c, &t)| if t > 0 { Some(c as f64 / t as f64) } else { None })
        .collect();
    Ok(Metrics {
        accuracy,
        per_class_accuracy,
        n_test: truth.len(),
    })
}

/// Write a classifier artifact with the producing run's config hash.
pub fn save_classifier(
    path: &Path,
    theta: &LinearClassifier,
    config_hash: &str,
) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CLASSIFIER_MAGIC)?;
    w.write_u16::<LittleEndian>(CLASSIFIER_VERSION)?;
    let hash = config_hash.as_bytes();
    w.write_u16::<LittleEndian>(hash.len() as u16)?;
    w.write_all(hash)?;
    w.write_u64::<LittleEndian>(theta.class_count() as u64)?;
    w.write_u64::<LittleEndian>(theta.feature_dim() as u64)?;
    for &x in theta.weights.data() {
        w.write_f32::<LittleEndian>(x as f32)?;
    }
    for &b in &theta.bias {
        w.write_f32::<LittleEndian>(b as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_classifier(path: &Path) -> Result<(LinearClassifier, String), TrainError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CLASSIFIER_MAGIC {
        return Err(TrainError::BadMagic);
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CLASSIFIER_VERSION {
        return Err(TrainError::UnsupportedVersion(version));
    }
    let hash_len = r.read_u16::<LittleEndian>()? as usize;
    let mut hash_bytes = vec![0u8; hash_len];
    r.read_exact(&mut hash_bytes)?;
    let config_hash = String::from_utf8_lossy(&hash_bytes).into_owned();
    let c = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u64::<LittleEndian>()? as usize;
    let mut data = Vec::with_capacity(c * d);
    for _ in 0..c * d {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    let weights = Matrix::new(c, d, data)?;
    let mut bias = Vec::with_capacity(c);
    for _ in 0..c {
        bias.push(r.read_f32::<LittleEndian>()? as f64);
    }
    Ok((LinearClassifier { weights, bias }, config_hash))
}
