//! Distributionally robust self-training for unsupervised domain adaptation
//! on precomputed feature embeddings.
//!
//! The library takes a labeled source embedding matrix and an unlabeled
//! target embedding matrix, splits the source into bootstrap pseudo-sources,
//! fits one conditional label model per pseudo-source, and then trains a
//! linear classifier against an adversary that may
//!
//! * reweight the pseudo-source conditionals inside an L2 ball on the
//!   simplex (mixture shift), and
//! * perturb every target feature vector inside an L2 ball (covariate
//!   shift).
//!
//! The minimax problem is solved by alternating projected gradient ascent on
//! the perturbations, projected exponentiated gradient ascent on the mixture
//! weights, and gradient descent on the classifier.
//!
//! Module map:
//!
//! * [`numeric`] — softmax, cross-entropy, and the projection operators.
//! * [`dataset`] — ingestion, bootstrap pseudo-source plans, synthetic
//!   subpopulation-shift benchmarks.
//! * [`conditionals`] — per-pseudo-source multinomial logistic models and
//!   soft pseudo-labels.
//! * [`trainer`] — the minimax training loop, surrogate objective, and
//!   evaluation.
//! * [`selection`] — radius grid search, leave-one-pseudo-source-out cross
//!   validation, sensitivity sweeps, and pseudo-source count selection.

pub mod conditionals;
pub mod dataset;
pub mod numeric;
pub mod selection;
pub mod trainer;

pub use conditionals::{ConditionalEnsemble, LogisticModel};
pub use dataset::{LabeledSet, PseudoSourcePlan, SynthSpec, UnlabeledSet};
pub use numeric::{Matrix, ProbVector};
pub use trainer::{AmbiguityConfig, LinearClassifier, MixtureWeights, TrainConfig, TrainTrace};
