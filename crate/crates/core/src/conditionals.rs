//! Per-pseudo-source conditional label models.
//!
//! Each pseudo-source gets its own L2-regularized multinomial logistic
//! regression over the shared embedding, fitted by full-batch gradient
//! descent with Armijo backtracking from a zero initialization. The fits
//! are deterministic and independent, so an ensemble is reproducible
//! regardless of scheduling.
//!
//! The ensemble's mixture prediction Σ_k β_k p̂⁽ᵏ⁾(·|x) is the soft
//! pseudo-label the trainer consumes.

use crate::dataset::{DatasetError, LabeledSet, PseudoSourcePlan};
use crate::numeric::{softmax, Matrix, NumericError, ProbVector};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_TOL: f64 = 1e-6;

pub const ENSEMBLE_MAGIC: &[u8; 4] = b"DRLE";
pub const ENSEMBLE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("cannot fit on an empty group")]
    EmptyGroup,
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error("objective became non-finite at iteration {iter}")]
    NonFiniteObjective { iter: usize },
    #[error("pseudo-source {index}: {source}")]
    Group {
        index: usize,
        #[source]
        source: Box<FitError>,
    },
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("model {index} has shape ({rows}, {cols}), expected ({expected_rows}, {expected_cols})")]
    ShapeDisagreement {
        index: usize,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes, not an ensemble file")]
    BadMagic,
    #[error("unsupported ensemble version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A multinomial logistic model: class logits are `W z + b`.
///
/// `degenerate` marks models fitted on a single-class group; their output
/// concentrates on that class, which the adversarial mixture is allowed to
/// exploit.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub lambda: f64,
    pub degenerate: bool,
}

impl LogisticModel {
    pub fn class_count(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    /// Class probabilities softmax(W z + b).
    pub fn predict_proba(&self, z: &[f64]) -> Result<ProbVector, NumericError> {
        let mut logits = self.weights.matvec(z)?;
        for (l, b) in logits.iter_mut().zip(&self.bias) {
            *l += b;
        }
        softmax(&logits)
    }
}

/// K fitted conditional models sharing (class_count, feature_dim).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalEnsemble {
    pub models: Vec<LogisticModel>,
    pub class_count: usize,
    pub feature_dim: usize,
}

impl ConditionalEnsemble {
    pub fn new(models: Vec<LogisticModel>) -> Result<Self, FitError> {
        let first = models.first().ok_or(FitError::EmptyEnsemble)?;
        let (class_count, feature_dim) = (first.class_count(), first.feature_dim());
        for (index, m) in models.iter().enumerate() {
            if m.class_count() != class_count || m.feature_dim() != feature_dim {
                return Err(FitError::ShapeDisagreement {
                    index,
                    rows: m.class_count(),
                    cols: m.feature_dim(),
                    expected_rows: class_count,
                    expected_cols: feature_dim,
                });
            }
        }
        Ok(Self {
            models,
            class_count,
            feature_dim,
        })
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }
}

/// Regularized mean cross-entropy and its gradient at (W, b).
///
/// Returns (objective, grad_w, grad_b). The loss term is computed through
/// a max-shifted log-sum-exp, so it stays finite for any finite parameters.
fn objective_and_grad(
    group: &LabeledSet,
    weights: &Matrix,
    bias: &[f64],
    lambda: f64,
) -> (f64, Matrix, Vec<f64>) {
    let n = group.len();
    let c = group.class_count;
    let d = group.dim();
    let mut obj = 0.0;
    let mut grad_w = Matrix::zeros(c, d);
    let mut grad_b = vec![0.0; c];
    for i in 0..n {
        let z = group.features.row(i);
        let y = group.labels[i];
        let mut logits = vec![0.0; c];
        for (cls, logit) in logits.iter_mut().enumerate() {
            let mut acc = bias[cls];
            for (w, x) in weights.row(cls).iter().zip(z) {
                acc += w * x;
            }
            *logit = acc;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        obj += max + sum_exp.ln() - logits[y];
        for cls in 0..c {
            let pi = (logits[cls] - max).exp() / sum_exp;
            let delta = pi - if cls == y { 1.0 } else { 0.0 };
            grad_b[cls] += delta;
            let gw = grad_w.row_mut(cls);
            for (g, x) in gw.iter_mut().zip(z) {
                *g += delta * x;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    obj *= inv_n;
    for g in grad_w.data_mut() {
        *g *= inv_n;
    }
    for g in &mut grad_b {
        *g *= inv_n;
    }
    obj += 0.5 * lambda * weights.sq_norm();
    for (g, w) in grad_w.data_mut().iter_mut().zip(weights.data()) {
        *g += lambda * w;
    }
    (obj, grad_w, grad_b)
}

fn grad_inf_norm(grad_w: &Matrix, grad_b: &[f64]) -> f64 {
    grad_w
        .data()
        .iter()
        .chain(grad_b)
        .fold(0.0f64, |m, g| m.max(g.abs()))
}

fn grad_sq_norm(grad_w: &Matrix, grad_b: &[f64]) -> f64 {
    grad_w.sq_norm() + grad_b.iter().map(|g| g * g).sum::<f64>()
}

/// Fit one logistic model by full-batch gradient descent.
///
/// Stops once the gradient ∞-norm drops below `tol` or after `max_iters`
/// accepted steps. Each step is chosen by halving until the Armijo
/// condition with c = 1e-4 holds, so the objective never increases.
pub fn fit_logistic(
    group: &LabeledSet,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<LogisticModel, FitError> {
    if group.is_empty() {
        return Err(FitError::EmptyGroup);
    }
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(FitError::InvalidParameter {
            reason: format!("lambda must be finite and nonnegative, got {lambda}"),
        });
    }
    let c = group.class_count;
    let d = group.dim();
    let mut weights = Matrix::zeros(c, d);
    let mut bias = vec![0.0; c];
    let mut distinct = group.labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let degenerate = distinct.len() < 2;

    const ARMIJO_C: f64 = 1e-4;
    const MIN_STEP: f64 = 1e-20;
    let mut step = 1.0f64;
    let (mut obj, mut grad_w, mut grad_b) = objective_and_grad(group, &weights, &bias, lambda);
    for iter in 0..max_iters {
        if !obj.is_finite() {
            return Err(FitError::NonFiniteObjective { iter });
        }
        if grad_inf_norm(&grad_w, &grad_b) < tol {
            break;
        }
        let g_sq = grad_sq_norm(&grad_w, &grad_b);
        let mut alpha = (step * 2.0).min(1e4);
        let mut accepted = false;
        while alpha >= MIN_STEP {
            let mut cand_w = weights.clone();
            for (w, g) in cand_w.data_mut().iter_mut().zip(grad_w.data()) {
                *w -= alpha * g;
            }
            let cand_b: Vec<f64> = bias
                .iter()
                .zip(&grad_b)
                .map(|(b, g)| b - alpha * g)
                .collect();
            let (cand_obj, cand_gw, cand_gb) = objective_and_grad(group, &cand_w, &cand_b, lambda);
            if cand_obj.is_finite() && cand_obj <= obj - ARMIJO_C * alpha * g_sq {
                weights = cand_w;
                bias = cand_b;
                obj = cand_obj;
                grad_w = cand_gw;
                grad_b = cand_gb;
                step = alpha;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No step satisfies Armijo at the numeric floor: converged.
            break;
        }
    }
    if !obj.is_finite() {
        return Err(FitError::NonFiniteObjective { iter: max_iters });
    }
    Ok(LogisticModel {
        weights,
        bias,
        lambda,
        degenerate,
    })
}

/// Fit one model per pseudo-source, in parallel. Fits are independent, so
/// the result does not depend on scheduling.
pub fn fit_ensemble(
    source: &LabeledSet,
    plan: &PseudoSourcePlan,
    lambda: f64,
    max_iters: usize,
    tol: f64,
) -> Result<ConditionalEnsemble, FitError> {
    plan.validate(source.len())?;
    let models: Vec<LogisticModel> = plan
        .index_lists
        .par_iter()
        .enumerate()
        .map(|(index, list)| {
            let group = source.select(list).map_err(|e| FitError::Group {
                index,
                source: Box::new(FitError::Dataset(e)),
            })?;
            fit_logistic(&group, lambda, max_iters, tol).map_err(|e| FitError::Group {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_, _>>()?;
    ConditionalEnsemble::new(models)
}

/// The soft pseudo-label Σ_k β_k p̂⁽ᵏ⁾(·|z): a convex combination of the
/// per-source conditional probability vectors, hence itself a probability
/// vector.
pub fn soft_pseudo_label(
    ensemble: &ConditionalEnsemble,
    beta: &ProbVector,
    z: &[f64],
) -> Result<ProbVector, NumericError> {
    if beta.len() != ensemble.k() {
        return Err(NumericError::DimensionMismatch {
            expected: ensemble.k(),
            got: beta.len(),
        });
    }
    let mut out = vec![0.0; ensemble.class_count];
    for (k, model) in ensemble.models.iter().enumerate() {
        let p = model.predict_proba(z)?;
        let w = beta[k];
        for (o, pi) in out.iter_mut().zip(p.as_slice()) {
            *o += w * pi;
        }
    }
    Ok(ProbVector::new_unchecked(out))
}

/// Write the ensemble container: header (K, C, d, λ) plus each model's
/// weights and bias as little-endian `f32`, preceded by the configuration
/// hash of the run that produced it.
pub fn save_ensemble(
    path: &Path,
    ensemble: &ConditionalEnsemble,
    config_hash: &str,
) -> Result<(), FitError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(ENSEMBLE_MAGIC)?;
    w.write_u16::<LittleEndian>(ENSEMBLE_VERSION)?;
    let hash = config_hash.as_bytes();
    w.write_u16::<LittleEndian>(hash.len() as u16)?;
    w.write_all(hash)?;
    w.write_u64::<LittleEndian>(ensemble.k() as u64)?;
    w.write_u64::<LittleEndian>(ensemble.class_count as u64)?;
    w.write_u64::<LittleEndian>(ensemble.feature_dim as u64)?;
    let lambda = ensemble.models.first().map(|m| m.lambda).unwrap_or(0.0);
    w.write_f64::<LittleEndian>(lambda)?;
    for model in &ensemble.models {
        w.write_u8(model.degenerate as u8)?;
        for &x in model.weights.data() {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
        for &b in &model.bias {
            w.write_f32::<LittleEndian>(b as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an ensemble container back, returning the stored config hash.
pub fn load_ensemble(path: &Path) -> Result<(ConditionalEnsemble, String), FitError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ENSEMBLE_MAGIC {
        return Err(FitError::BadMagic);
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != ENSEMBLE_VERSION {
        return Err(FitError::UnsupportedVersion(version));
    }
    let hash_len = r.read_u16::<LittleEndian>()? as usize;
    let mut hash_bytes = vec![0u8; hash_len];
    r.read_exact(&mut hash_bytes)?;
    let config_hash = String::from_utf8_lossy(&hash_bytes).into_owned();
    let k = r.read_u64::<LittleEndian>()? as usize;
    let class_count = r.read_u64::<LittleEndian>()? as usize;
    let feature_dim = r.read_u64::<LittleEndian>()? as usize;
    let lambda = r.read_f64::<LittleEndian>()?;
    let mut models = Vec::with_capacity(k);
    for _ in 0..k {
        let degenerate = r.read_u8()? != 0;
        let mut data = Vec::with_capacity(class_count * feature_dim);
        for _ in 0..class_count * feature_dim {
            data.push(r.read_f32::<LittleEndian>()? as f64);
        }
        let weights = Matrix::new(class_count, feature_dim, data)?;
        let mut bias = Vec::with_capacity(class_count);
        for _ in 0..class_count {
            bias.push(r.read_f32::<LittleEndian>()? as f64);
        }
        models.push(LogisticModel {
            weights,
            bias,
            lambda,
            degenerate,
        });
    }
    Ok((ConditionalEnsemble::new(models)?, config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_pseudo_sources;
    use approx::assert_abs_diff_eq;

    fn separable_1d() -> LabeledSet {
        let xs = vec![-2.0, -1.5, -1.0, 1.0, 1.5, 2.0];
        let labels = vec![0, 0, 0, 1, 1, 1];
        LabeledSet::new(Matrix::new(6, 1, xs).unwrap(), labels, 2).unwrap()
    }

    #[test]
    fn separable_data_reaches_full_accuracy() {
        let set = separable_1d();
        let model = fit_logistic(&set, 1e-4, 2000, 1e-6).unwrap();
        for i in 0..set.len() {
            let p = model.predict_proba(set.features.row(i)).unwrap();
            let pred = if p[0] >= p[1] { 0 } else { 1 };
            assert_eq!(pred, set.labels[i]);
        }
        assert!(!model.degenerate);
    }

    #[test]
    fn huge_lambda_drives_weights_to_zero() {
        let set = separable_1d();
        let model = fit_logistic(&set, 1e6, 2000, 1e-9).unwrap();
        assert!(model.weights.data().iter().all(|w| w.abs() < 1e-5));
        // Balanced classes and free bias: predictions near uniform.
        let p = model.predict_proba(&[0.7]).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn objective_non_increasing_and_below_random_points() {
        let set = separable_1d();
        let model = fit_logistic(&set, 1e-3, 500, 1e-8).unwrap();
        let (final_obj, _, _) = objective_and_grad(&set, &model.weights, &model.bias, 1e-3);
        // Convexity check: the fit beats 50 random parameter points.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let w = Matrix::new(2, 1, vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
                .unwrap();
            let b = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let (obj, _, _) = objective_and_grad(&set, &w, &b, 1e-3);
            assert!(final_obj <= obj + 1e-9);
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = 12;
        let d = 3;
        let c = 3;
        let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let set = LabeledSet::new(Matrix::new(n, d, data).unwrap(), labels, c).unwrap();
        let lambda = 0.05;
        let h = 1e-5;
        for _ in 0..10 {
            let w_data: Vec<f64> = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let weights = Matrix::new(c, d, w_data).unwrap();
            let bias: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, gw, gb) = objective_and_grad(&set, &weights, &bias, lambda);
            let mut fd: Vec<f64> = Vec::new();
            let mut analytic: Vec<f64> = Vec::new();
            for idx in 0..c * d {
                let mut wp = weights.clone();
                wp.data_mut()[idx] += h;
                let mut wm = weights.clone();
                wm.data_mut()[idx] -= h;
                let (op, _, _) = objective_and_grad(&set, &wp, &bias, lambda);
                let (om, _, _) = objective_and_grad(&set, &wm, &bias, lambda);
                fd.push((op - om) / (2.0 * h));
                analytic.push(gw.data()[idx]);
            }
            for idx in 0..c {
                let mut bp = bias.clone();
                bp[idx] += h;
                let mut bm = bias.clone();
                bm[idx] -= h;
                let (op, _, _) = objective_and_grad(&set, &weights, &bp, lambda);
                let (om, _, _) = objective_and_grad(&set, &weights, &bm, lambda);
                fd.push((op - om) / (2.0 * h));
                analytic.push(gb[idx]);
            }
            let num: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, f)| (a - f) * (a - f))
                .sum::<f64>()
                .sqrt();
            let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
            assert!(num / den < 1e-4, "relative gradient error {}", num / den);
        }
    }

    #[test]
    fn single_class_group_is_degenerate_but_usable() {
        let set = LabeledSet::new(
            Matrix::new(3, 1, vec![0.1, 0.2, 0.3]).unwrap(),
            vec![1, 1, 1],
            2,
        )
        .unwrap();
        let model = fit_logistic(&set, 1e-4, 500, 1e-8).unwrap();
        assert!(model.degenerate);
        let p = model.predict_proba(&[0.2]).unwrap();
        assert!(p[1] > 0.9);
    }

    #[test]
    fn ensemble_single_full_plan_equals_direct_fit() {
        let set = separable_1d();
        let plan = make_pseudo_sources(&set, 1, 1.0, 3).unwrap();
        let ensemble = fit_ensemble(&set, &plan, 1e-4, 500, 1e-8).unwrap();
        let direct = fit_logistic(&set.select(&plan.index_lists[0]).unwrap(), 1e-4, 500, 1e-8)
            .unwrap();
        assert_eq!(ensemble.models[0], direct);
    }

    #[test]
    fn identical_index_lists_give_identical_models() {
        let set = separable_1d();
        let list = vec![0, 1, 2, 3, 4, 5];
        let plan = PseudoSourcePlan::from_index_lists(vec![list.clone(), list]).unwrap();
        let ensemble = fit_ensemble(&set, &plan, 1e-4, 500, 1e-8).unwrap();
        assert_eq!(ensemble.models[0], ensemble.models[1]);
    }

    #[test]
    fn bootstrap_diversity_vanishes_for_duplicated_lists() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let n = 100;
        let data: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| usize::from(i % 3 == 0)).collect();
        let set = LabeledSet::new(Matrix::new(n, 2, data).unwrap(), labels, 2).unwrap();

        let bootstrap = make_pseudo_sources(&set, 6, 0.2, 9).unwrap();
        let varied = fit_ensemble(&set, &bootstrap, 1e-4, 800, 1e-8).unwrap();
        let same_list = vec![bootstrap.index_lists[0].clone(); 6];
        let constant =
            fit_ensemble(&set, &PseudoSourcePlan::from_index_lists(same_list).unwrap(), 1e-4, 800, 1e-8)
                .unwrap();

        let dispersion = |e: &ConditionalEnsemble| -> f64 {
            let dim = e.class_count * e.feature_dim;
            let mut mean = vec![0.0; dim];
            for m in &e.models {
                for (acc, w) in mean.iter_mut().zip(m.weights.data()) {
                    *acc += w / e.k() as f64;
                }
            }
            e.models
                .iter()
                .map(|m| {
                    m.weights
                        .data()
                        .iter()
                        .zip(&mean)
                        .map(|(w, mu)| (w - mu) * (w - mu))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / e.k() as f64
        };
        assert!(dispersion(&varied) > 1e-6);
        assert!(dispersion(&constant) < 1e-20);
    }

    #[test]
    fn predict_proba_trivial_cases() {
        let uniform = LogisticModel {
            weights: Matrix::zeros(3, 2),
            bias: vec![0.0; 3],
            lambda: 0.0,
            degenerate: false,
        };
        let p = uniform.predict_proba(&[0.4, -0.7]).unwrap();
        for &x in p.as_slice() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }

        let antisym = LogisticModel {
            weights: Matrix::new(2, 1, vec![1.0, -1.0]).unwrap(),
            bias: vec![0.0, 0.0],
            lambda: 0.0,
            degenerate: false,
        };
        let p = antisym.predict_proba(&[0.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn predict_proba_matches_direct_evaluation() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = 4;
            let d = 3;
            let w_data: Vec<f64> = (0..c * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let model = LogisticModel {
                weights: Matrix::new(c, d, w_data).unwrap(),
                bias: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
                lambda: 0.0,
                degenerate: false,
            };
            let z: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = model.predict_proba(&z).unwrap();
            let logits: Vec<f64> = (0..c)
                .map(|cls| {
                    model.bias[cls]
                        + model
                            .weights
                            .row(cls)
                            .iter()
                            .zip(&z)
                            .map(|(w, x)| w * x)
                            .sum::<f64>()
                })
                .collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            for (cls, &x) in p.as_slice().iter().enumerate() {
                assert!((x - logits[cls].exp() / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn soft_pseudo_label_vertex_and_constant_cases() {
        let set = separable_1d();
        let plan = make_pseudo_sources(&set, 3, 0.5, 5).unwrap();
        let ensemble = fit_ensemble(&set, &plan, 1e-4, 500, 1e-8).unwrap();
        let z = [0.3];
        // Vertex of the simplex: exactly model k's prediction.
        for k in 0..3 {
            let beta = ProbVector::one_hot(3, k).unwrap();
            let y = soft_pseudo_label(&ensemble, &beta, &z).unwrap();
            let direct = ensemble.models[k].predict_proba(&z).unwrap();
            assert_eq!(y.as_slice(), direct.as_slice());
        }
        // Identical models: output independent of beta.
        let clones =
            ConditionalEnsemble::new(vec![ensemble.models[0].clone(); 3]).unwrap();
        let a = soft_pseudo_label(&clones, &ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap(), &z)
            .unwrap();
        let b = soft_pseudo_label(&clones, &ProbVector::uniform(3).unwrap(), &z).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn soft_pseudo_label_matches_independent_combination() {
        let set = separable_1d();
        let plan = make_pseudo_sources(&set, 3, 0.5, 6).unwrap();
        let ensemble = fit_ensemble(&set, &plan, 1e-4, 500, 1e-8).unwrap();
        let beta = ProbVector::new(vec![0.2, 0.3, 0.5]).unwrap();
        let z = [-0.8];
        let y = soft_pseudo_label(&ensemble, &beta, &z).unwrap();
        // Recompute with the summation order flipped.
        let mut expect = vec![0.0; 2];
        for k in (0..3).rev() {
            let p = ensemble.models[k].predict_proba(&z).unwrap();
            for (e, pi) in expect.iter_mut().zip(p.as_slice()) {
                *e += beta[k] * pi;
            }
        }
        for (a, b) in y.as_slice().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_round_trip_is_bit_exact() {
        let set = separable_1d();
        let plan = make_pseudo_sources(&set, 2, 0.5, 8).unwrap();
        let ensemble = fit_ensemble(&set, &plan, 1e-4, 500, 1e-8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.drle");
        save_ensemble(&path, &ensemble, "deadbeef").unwrap();
        let bytes_a = std::fs::read(&path).unwrap();
        let (back, hash) = load_ensemble(&path).unwrap();
        assert_eq!(hash, "deadbeef");
        assert_eq!(back.k(), 2);
        save_ensemble(&path, &back, &hash).unwrap();
        let bytes_b = std::fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }
}
