//! Synthetic subpopulation-shift benchmark.
//!
//! Samples are Gaussian in two feature blocks: a *core* block whose mean
//! depends only on the class label (predictive everywhere), and a
//! *spurious* block whose mean depends on the group (predictive in the
//! source mixture, misleading under the target mixture). Source and target
//! share the same groups but mix them with different weights, which is the
//! smallest construction that exhibits a spurious-correlation failure of
//! source-fitted classifiers.

use super::{DatasetError, LabeledSet, UnlabeledSet};
use crate::numeric::{Matrix, PROB_SUM_TOL};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One subpopulation: a class label plus Gaussian block parameters.
/// Covariances are diagonal, given as per-dimension standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub label: usize,
    pub core_mean: Vec<f64>,
    pub core_std: Vec<f64>,
    pub spurious_mean: Vec<f64>,
    pub spurious_std: Vec<f64>,
}

/// Full benchmark specification; deterministic given `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub groups: Vec<SynthGroup>,
    /// Group mixture weights of the source domain (on the simplex).
    pub source_weights: Vec<f64>,
    /// Group mixture weights of the target domain (on the simplex).
    pub target_weights: Vec<f64>,
    pub source_count: usize,
    pub target_count: usize,
    /// Global multiplier on every standard deviation.
    pub noise_scale: f64,
    pub seed: u64,
    pub class_count: usize,
}

/// A full draw, keeping group assignments for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct SynthDraw {
    pub source: LabeledSet,
    pub target: UnlabeledSet,
    pub target_truth: LabeledSet,
    pub source_groups: Vec<usize>,
    pub target_groups: Vec<usize>,
}

impl SynthSpec {
    pub fn feature_dim(&self) -> usize {
        self.groups
            .first()
            .map(|g| g.core_mean.len() + g.spurious_mean.len())
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.groups.is_empty() {
            return Err(DatasetError::InvalidParameter {
                reason: "at least one group required".into(),
            });
        }
        if self.source_count == 0 || self.target_count == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(DatasetError::InvalidParameter {
                reason: format!("noise_scale must be finite and nonnegative, got {}", self.noise_scale),
            });
        }
        let (core_dim, spur_dim) = (
            self.groups[0].core_mean.len(),
            self.groups[0].spurious_mean.len(),
        );
        for (i, g) in self.groups.iter().enumerate() {
            if g.label >= self.class_count {
                return Err(DatasetError::LabelOutOfRange {
                    label: g.label,
                    class_count: self.class_count,
                    row: i,
                });
            }
            if g.core_mean.len() != core_dim
                || g.core_std.len() != core_dim
                || g.spurious_mean.len() != spur_dim
                || g.spurious_std.len() != spur_dim
            {
                return Err(DatasetError::InvalidParameter {
                    reason: format!("group {i} block dimensions disagree with group 0"),
                });
            }
            if g.core_std.iter().chain(&g.spurious_std).any(|&s| s < 0.0) {
                return Err(DatasetError::InvalidParameter {
                    reason: format!("group {i} has a negative standard deviation"),
                });
            }
        }
        for (name, w) in [("source", &self.source_weights), ("target", &self.target_weights)] {
            if w.len() != self.groups.len() {
                return Err(DatasetError::InvalidParameter {
                    reason: format!("{name} weights length {} != {} groups", w.len(), self.groups.len()),
                });
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(DatasetError::InvalidParameter {
                    reason: format!("{name} weights must be nonnegative"),
                });
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(DatasetError::InvalidParameter {
                    reason: format!("{name} weights sum to {sum}, expected 1"),
                });
            }
        }
        Ok(())
    }

    /// The bundled spurious-correlation benchmark.
    ///
    /// Two classes, four groups indexed by (label, spurious sign). The
    /// core block holds two label-aligned dimensions plus eight pure-noise
    /// dimensions, so a handful of unlabeled target points is easy to
    /// overfit. The source mixes three groups; the held-out minority group
    /// (label 0 with the spurious block pointing the label-1 way) is the
    /// entire target. The spurious block separates the source classes more
    /// cleanly than the core block, so a source-fitted classifier leans on
    /// it and fails on the target, while the small misaligned group sits
    /// at extreme spurious values, capping the spurious weight and giving
    /// bootstrap subsamples something to disagree about.
    pub fn spurious_benchmark(
        source_count: usize,
        target_count: usize,
        noise_scale: f64,
        seed: u64,
    ) -> Self {
        let nuisance_dims = 8;
        let group = |label: usize, spur: f64| {
            let aligned = if label == 0 { 1.0 } else { -1.0 };
            let mut core_mean = vec![aligned, aligned];
            core_mean.extend(std::iter::repeat(0.0).take(nuisance_dims));
            SynthGroup {
                label,
                core_std: vec![1.0; core_mean.len()],
                core_mean,
                spurious_mean: vec![spur, spur],
                spurious_std: vec![1.0, 1.0],
            }
        };
        SynthSpec {
            groups: vec![
                group(0, 1.0),  // majority: label 0, spurious +
                group(1, 1.8),  // minority-in-source: label 1, extreme spurious +
                group(1, -1.0), // majority: label 1, spurious −
                group(0, -1.0), // held out of source, the target group
            ],
            source_weights: vec![0.45, 0.10, 0.45, 0.0],
            target_weights: vec![0.0, 0.0, 0.0, 1.0],
            source_count,
            target_count,
            noise_scale,
            seed,
            class_count: 2,
        }
    }
}

fn pick_group(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn draw_split(
    spec: &SynthSpec,
    weights: &[f64],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> (Matrix, Vec<usize>, Vec<usize>) {
    let d = spec.feature_dim();
    let mut data = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    let mut groups = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.random();
        let g = pick_group(weights, u);
        let spec_g = &spec.groups[g];
        for (m, s) in spec_g.core_mean.iter().zip(&spec_g.core_std) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + spec.noise_scale * s * z);
        }
        for (m, s) in spec_g.spurious_mean.iter().zip(&spec_g.spurious_std) {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + spec.noise_scale * s * z);
        }
        labels.push(spec_g.label);
        groups.push(g);
    }
    let features = Matrix::new(count, d, data).expect("finite by construction");
    (features, labels, groups)
}

/// Draw source and target, keeping group assignments.
pub fn synth_generate_detailed(spec: &SynthSpec) -> Result<SynthDraw, DatasetError> {
    spec.validate()?;
    let mut src_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    src_rng.set_stream(0);
    let (src_features, src_labels, source_groups) =
        draw_split(spec, &spec.source_weights, spec.source_count, &mut src_rng);
    let mut tgt_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    tgt_rng.set_stream(1);
    let (tgt_features, tgt_labels, target_groups) =
        draw_split(spec, &spec.target_weights, spec.target_count, &mut tgt_rng);
    let source = LabeledSet::new(src_features, src_labels, spec.class_count)?;
    let target = UnlabeledSet::new(tgt_features.clone())?;
    let target_truth = LabeledSet::new(tgt_features, tgt_labels, spec.class_count)?;
    Ok(SynthDraw {
        source,
        target,
        target_truth,
        source_groups,
        target_groups,
    })
}

/// Draw (labeled source, unlabeled target, labeled target truth). The truth
/// set shares the target's feature rows and exists for evaluation only.
pub fn synth_generate(
    spec: &SynthSpec,
) -> Result<(LabeledSet, UnlabeledSet, LabeledSet), DatasetError> {
    let draw = synth_generate_detailed(spec)?;
    Ok((draw.source, draw.target, draw.target_truth))
}
