//! Dataset ingestion and construction: labeled/unlabeled embedding sets,
//! bootstrap pseudo-source plans, validation splits, feature
//! standardization, and a synthetic subpopulation-shift benchmark.
//!
//! All randomness goes through `ChaCha8` seeded from a caller-supplied
//! `u64`, with one stream per logical substream (pseudo-source index,
//! source/target draw). ChaCha output is specified byte-for-byte, so plans
//! and synthetic draws reproduce across platforms.

mod io;
mod synth;

pub use io::{
    load_features, load_features_binary, load_features_csv, load_labels, save_features_binary,
    save_features_csv, save_labels, FeatureFormat, BINARY_MAGIC, BINARY_VERSION,
};
pub use synth::{synth_generate, synth_generate_detailed, SynthDraw, SynthGroup, SynthSpec};

use crate::numeric::{Matrix, NumericError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {reason}")]
    MalformedHeader { reason: String },
    #[error("dimension mismatch at row {row}: expected {expected} columns, got {got}")]
    RowWidthMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("bad magic bytes, not a feature file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated: expected {expected} bytes of payload")]
    Truncated { expected: usize },
    #[error("malformed value on line {line}: {reason}")]
    MalformedValue { line: usize, reason: String },
    #[error("label {label} out of range for {class_count} classes (row {row})")]
    LabelOutOfRange {
        label: usize,
        class_count: usize,
        row: usize,
    },
    #[error("feature rows ({rows}) do not match label count ({labels})")]
    LabelCountMismatch { rows: usize, labels: usize },
    #[error("class {class} has {have} samples, need at least {need}")]
    InsufficientClass {
        class: usize,
        have: usize,
        need: usize,
    },
    #[error("subsample size is zero (fraction {fraction} of {rows} rows)")]
    EmptySubsample { fraction: f64, rows: usize },
    #[error("invalid parameter: {reason}")]
    InvalidParameter { reason: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// Labeled embeddings: an n×d feature matrix with one class id per row.
///
/// The class count is declared explicitly and never inferred from the
/// largest label seen.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl LabeledSet {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self, DatasetError> {
        if class_count == 0 {
            return Err(DatasetError::InvalidParameter {
                reason: "class_count must be at least 1".into(),
            });
        }
        if features.rows() != labels.len() {
            return Err(DatasetError::LabelCountMismatch {
                rows: features.rows(),
                labels: labels.len(),
            });
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(DatasetError::LabelOutOfRange {
                    label,
                    class_count,
                    row,
                });
            }
        }
        Ok(Self {
            features,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// The subset given by `indices` (duplicates allowed, order kept).
    pub fn select(&self, indices: &[usize]) -> Result<Self, DatasetError> {
        let features = self.features.select_rows(indices)?;
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features,
            labels,
            class_count: self.class_count,
        })
    }
}

/// Unlabeled target embeddings; always nonempty.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSet {
    pub features: Matrix,
}

impl UnlabeledSet {
    pub fn new(features: Matrix) -> Result<Self, DatasetError> {
        if features.rows() == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        Ok(Self { features })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// A reproducible bootstrap plan: `k` lists of row indices into a source
/// set, each of length `subsample_size`, drawn i.i.d. uniformly with
/// replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSourcePlan {
    pub k: usize,
    pub subsample_size: usize,
    pub seed: u64,
    pub index_lists: Vec<Vec<usize>>,
}

impl PseudoSourcePlan {
    /// Wrap explicit index lists (a natural grouping variable instead of
    /// bootstrap draws). The recorded seed is zero and the subsample size
    /// is the length of the longest list.
    pub fn from_index_lists(index_lists: Vec<Vec<usize>>) -> Result<Self, DatasetError> {
        if index_lists.is_empty() || index_lists.iter().any(|l| l.is_empty()) {
            return Err(DatasetError::InvalidParameter {
                reason: "index lists must be nonempty".into(),
            });
        }
        let subsample_size = index_lists.iter().map(|l| l.len()).max().unwrap_or(0);
        Ok(Self {
            k: index_lists.len(),
            subsample_size,
            seed: 0,
            index_lists,
        })
    }

    /// Check every index against the number of source rows.
    pub fn validate(&self, rows: usize) -> Result<(), DatasetError> {
        if self.index_lists.len() != self.k {
            return Err(DatasetError::InvalidParameter {
                reason: format!(
                    "plan declares k={} but holds {} lists",
                    self.k,
                    self.index_lists.len()
                ),
            });
        }
        for list in &self.index_lists {
            for &i in list {
                if i >= rows {
                    return Err(DatasetError::InvalidParameter {
                        reason: format!("index {i} out of range for {rows} rows"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Default bootstrap fraction: each pseudo-source holds a fifth of the
/// source rows.
pub const DEFAULT_SUBSAMPLE_FRACTION: f64 = 0.2;

/// Default number of pseudo-sources.
pub const DEFAULT_PSEUDO_SOURCES: usize = 10;

/// Draw `k` bootstrap index lists of size `round(fraction · n)` from the
/// source, i.i.d. uniform with replacement.
///
/// Pseudo-source `g` uses ChaCha8 stream `g` of the seed, so lists are
/// independent of each other and of how many lists are drawn.
pub fn make_pseudo_sources(
    source: &LabeledSet,
    k: usize,
    fraction: f64,
    seed: u64,
) -> Result<PseudoSourcePlan, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidParameter {
            reason: "k must be at least 1".into(),
        });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DatasetError::InvalidParameter {
            reason: format!("fraction must be in (0, 1], got {fraction}"),
        });
    }
    let n = source.len();
    let subsample_size = (fraction * n as f64).round() as usize;
    if subsample_size == 0 {
        return Err(DatasetError::EmptySubsample { fraction, rows: n });
    }
    let mut index_lists = Vec::with_capacity(k);
    for g in 0..k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let list: Vec<usize> = (0..subsample_size).map(|_| rng.random_range(0..n)).collect();
        index_lists.push(list);
    }
    Ok(PseudoSourcePlan {
        k,
        subsample_size,
        seed,
        index_lists,
    })
}

/// Split off exactly `per_class` rows per class into a validation set; the
/// remainder keeps everything else. Both halves preserve ascending row
/// order, so the pair is a deterministic partition of the input.
pub fn split_validation(
    set: &LabeledSet,
    per_class: usize,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet), DatasetError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.class_count];
    for (i, &label) in set.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    if per_class > 0 {
        for (class, rows) in by_class.iter().enumerate() {
            if rows.len() < per_class {
                return Err(DatasetError::InsufficientClass {
                    class,
                    have: rows.len(),
                    need: per_class,
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut val_indices = Vec::with_capacity(per_class * set.class_count);
    for rows in &mut by_class {
        use rand::seq::SliceRandom;
        rows.shuffle(&mut rng);
        val_indices.extend_from_slice(&rows[..per_class.min(rows.len())]);
    }
    val_indices.sort_unstable();
    let in_val: std::collections::HashSet<usize> = val_indices.iter().copied().collect();
    let rest_indices: Vec<usize> = (0..set.len()).filter(|i| !in_val.contains(i)).collect();
    Ok((set.select(&val_indices)?, set.select(&rest_indices)?))
}

/// Per-dimension z-scoring fitted on one matrix (the source) and applied
/// unchanged to others (the target), so perturbation radii are comparable
/// across datasets. Constant dimensions keep scale 1 instead of dividing
/// by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix) -> Result<Self, DatasetError> {
        let n = features.rows();
        if n == 0 {
            return Err(DatasetError::EmptyDataset);
        }
        let d = features.cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(features.row(r)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                let c = x - m;
                *v += c * c;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &Matrix) -> Result<Matrix, DatasetError> {
        if features.cols() != self.mean.len() {
            return Err(DatasetError::InvalidParameter {
                reason: format!(
                    "standardizer fitted on {} dims, matrix has {}",
                    self.mean.len(),
                    features.cols()
                ),
            });
        }
        let mut out = features.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}
