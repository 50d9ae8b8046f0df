//! The worst-case surrogate objective for a fixed classifier:
//!
//! ```text
//! sup_{β ∈ Δ ∩ B(β̄, ε₂)}  mean_i  sup_{‖z′ − z_i‖ ≤ ε₁}  ℓ(f_θ(z′), y°(β, z_i))
//! ```
//!
//! The inner supremum is solved per sample by projected gradient ascent
//! with a backtracking line search; the outer supremum by exponentiated
//! gradient ascent with ball projection, iterated until the weights stop
//! moving.

use super::{ascend_beta, LinearClassifier, MixtureWeights, TrainError};
use crate::conditionals::ConditionalEnsemble;
use crate::dataset::UnlabeledSet;
use crate::numeric::{cross_entropy, project_ball, ProbVector};
use crate::trainer::AmbiguityConfig;

/// Knobs of the surrogate evaluation. Defaults: 50 ascent steps per sample,
/// exponentiated-gradient step 0.5, convergence once β moves less than
/// 1e-8 in L2.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateConfig {
    pub pgd_steps: usize,
    pub eta_z: f64,
    pub eta_beta: f64,
    pub beta_tol: f64,
    pub max_beta_iters: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            pgd_steps: 50,
            eta_z: 1.0,
            eta_beta: 0.5,
            beta_tol: 1e-8,
            max_beta_iters: 500,
        }
    }
}

/// The surrogate value together with the adversary achieving it.
/// `converged` is false when the mixture ascent hit its iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutcome {
    pub value: f64,
    pub beta: MixtureWeights,
    pub z_prime: Vec<Vec<f64>>,
    pub converged: bool,
}

/// Maximize z ↦ ℓ(f_θ(z), y) over the ε₁ ball around `z_target` by PGD
/// with halving line search; returns the maximizer and its loss.
fn inner_max(
    theta: &LinearClassifier,
    z_target: &[f64],
    y: &ProbVector,
    eps1: f64,
    cfg: &SurrogateConfig,
) -> Result<(Vec<f64>, f64), TrainError> {
    let mut z = z_target.to_vec();
    let mut pi = theta.predict_proba(&z)?;
    let mut loss = cross_entropy(&pi, y)?;
    if eps1 == 0.0 {
        return Ok((z, loss));
    }
    let mut eta = cfg.eta_z;
    for _ in 0..cfg.pgd_steps {
        let grad = super::loss_grad_z(theta, &pi, y);
        if grad.iter().map(|g| g * g).sum::<f64>() < 1e-24 {
            break;
        }
        let mut alpha = eta;
        let mut accepted = false;
        while alpha > 1e-14 {
            let stepped: Vec<f64> = z.iter().zip(&grad).map(|(zi, g)| zi + alpha * g).collect();
            let cand = project_ball(&stepped, z_target, eps1)?;
            let cand_pi = theta.predict_proba(&cand)?;
            let cand_loss = cross_entropy(&cand_pi, y)?;
            if cand_loss > loss {
                z = cand;
                pi = cand_pi;
                loss = cand_loss;
                eta = (alpha * 2.0).min(1e6);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((z, loss))
}

/// Evaluate the surrogate objective at `theta`.
pub fn surrogate_value(
    theta: &LinearClassifier,
    ensemble: &ConditionalEnsemble,
    target: &UnlabeledSet,
    amb: &AmbiguityConfig,
    cfg: &SurrogateConfig,
) -> Result<SurrogateOutcome, TrainError> {
    let k = ensemble.k();
    if target.dim() != ensemble.feature_dim {
        return Err(TrainError::Shape {
            reason: format!(
                "target has dim {}, ensemble expects {}",
                target.dim(),
                ensemble.feature_dim
            ),
        });
    }
    if amb.beta_bar.len() != k {
        return Err(TrainError::Shape {
            reason: format!(
                "beta_bar has length {}, ensemble has {k} sources",
                amb.beta_bar.len()
            ),
        });
    }
    if theta.class_count() != ensemble.class_count || theta.feature_dim() != ensemble.feature_dim {
        return Err(TrainError::Shape {
            reason: "classifier shape disagrees with ensemble".into(),
        });
    }

    let n = target.len();
    let mut conditionals: Vec<Vec<ProbVector>> = Vec::with_capacity(n);
    for i in 0..n {
        let z = target.features.row(i);
        let mut per_source = Vec::with_capacity(k);
        for model in &ensemble.models {
            per_source.push(model.predict_proba(z)?);
        }
        conditionals.push(per_source);
    }

    let combine = |conds: &[ProbVector], beta: &[f64]| {
        let c = conds[0].len();
        let mut out = vec![0.0; c];
        for (kk, p) in conds.iter().enumerate() {
            for (o, pi) in out.iter_mut().zip(p.as_slice()) {
                *o += beta[kk] * pi;
            }
        }
        ProbVector::new_unchecked(out)
    };

    let solve_inner = |beta: &ProbVector| -> Result<(Vec<Vec<f64>>, Vec<ProbVector>), TrainError> {
        let mut zs = Vec::with_capacity(n);
        let mut pis = Vec::with_capacity(n);
        for i in 0..n {
            let y = combine(&conditionals[i], beta.as_slice());
            let (z, _) = inner_max(theta, target.features.row(i), &y, amb.eps1, cfg)?;
            let pi = theta.predict_proba(&z)?;
            zs.push(z);
            pis.push(pi);
        }
        Ok((zs, pis))
    };

    let mut beta = MixtureWeights::center(amb);
    let mut converged = false;
    for _ in 0..cfg.max_beta_iters {
        let (_, pis) = solve_inner(beta.prob())?;
        let mut group_losses = vec![0.0; k];
        for (kk, gl) in group_losses.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (pi, conds) in pis.iter().zip(&conditionals) {
                acc += cross_entropy(pi, &conds[kk])?;
            }
            *gl = acc / n as f64;
        }
        let next = ascend_beta(&beta, &group_losses, cfg.eta_beta, &amb.beta_bar, amb.eps2)?;
        let change: f64 = next
            .as_slice()
            .iter()
            .zip(beta.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        beta = next;
        if change < cfg.beta_tol {
            converged = true;
            break;
        }
    }

    // Final inner solve at the converged mixture.
    let (z_prime, pis) = solve_inner(beta.prob())?;
    let mut acc = 0.0;
    for (i, pi) in pis.iter().enumerate() {
        let y = combine(&conditionals[i], beta.as_slice());
        acc += cross_entropy(pi, &y)?;
    }
    let value = acc / n as f64;

    Ok(SurrogateOutcome {
        value,
        beta,
        z_prime,
        converged,
    })
}
