//! Hyperparameter selection: (ε₁, ε₂) grid search against a labeled
//! validation set, leave-one-pseudo-source-out cross validation that never
//! touches target labels, multi-seed sensitivity sweeps, and
//! cross-validated choice of the pseudo-source count.

use crate::conditionals::{fit_ensemble, ConditionalEnsemble, FitError};
use crate::dataset::{make_pseudo_sources, DatasetError, LabeledSet, PseudoSourcePlan, UnlabeledSet};
use crate::numeric::LOG_CLAMP_MIN;
use crate::trainer::{
    evaluate, train, AmbiguityConfig, LinearClassifier, TrainConfig, TrainError,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("invalid grid: {reason}")]
    InvalidGrid { reason: String },
    #[error("leave-one-out needs at least 2 pseudo-sources, got {0}")]
    TooFewSources(usize),
    #[error("no candidate values supplied")]
    EmptyCandidates,
    #[error("cross validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("no seeds supplied")]
    EmptySeeds,
    #[error("cell (eps1={eps1}, eps2={eps2}): {source}")]
    Cell {
        eps1: f64,
        eps2: f64,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Numeric(#[from] crate::numeric::NumericError),
}

/// The (ε₁, ε₂) search grid; values are nonnegative and strictly
/// increasing along each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub eps1_values: Vec<f64>,
    pub eps2_values: Vec<f64>,
}

impl GridSpec {
    pub fn new(eps1_values: Vec<f64>, eps2_values: Vec<f64>) -> Result<Self, SelectionError> {
        for (name, vals) in [("eps1", &eps1_values), ("eps2", &eps2_values)] {
            if vals.is_empty() {
                return Err(SelectionError::InvalidGrid {
                    reason: format!("{name} axis is empty"),
                });
            }
            if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(SelectionError::InvalidGrid {
                    reason: format!("{name} axis has a negative or non-finite value"),
                });
            }
            if vals.windows(2).any(|w| w[0] >= w[1]) {
                return Err(SelectionError::InvalidGrid {
                    reason: format!("{name} axis must be strictly increasing"),
                });
            }
        }
        Ok(Self {
            eps1_values,
            eps2_values,
        })
    }

    /// The default search grid: ε₁ ∈ {0, 0.2, 0.4, 0.6, 0.8, 1},
    /// ε₂ ∈ {0, 0.2, 0.4, 0.6, 1}.
    pub fn default_grid() -> Self {
        Self {
            eps1_values: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            eps2_values: vec![0.0, 0.2, 0.4, 0.6, 1.0],
        }
    }

    pub fn cells(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.eps1_values.len() * self.eps2_values.len());
        for &e1 in &self.eps1_values {
            for &e2 in &self.eps2_values {
                out.push((e1, e2));
            }
        }
        out
    }
}

/// One grid cell's aggregated score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub eps1: f64,
    pub eps2: f64,
    pub mean_acc: f64,
    pub sd_acc: f64,
}

/// Scores for every grid cell, stored in lexicographic (ε₁, ε₂) order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub n_seeds: usize,
}

impl SweepResult {
    /// Sort cells into lexicographic order so the table is independent of
    /// evaluation order.
    pub fn from_cells(mut cells: Vec<SweepCell>, n_seeds: usize) -> Self {
        cells.sort_by(|a, b| {
            (a.eps1, a.eps2)
                .partial_cmp(&(b.eps1, b.eps2))
                .expect("finite radii")
        });
        Self { cells, n_seeds }
    }

    /// The argmax cell; ties resolve to the smaller ε₁, then smaller ε₂.
    /// A pure function of the table, so re-selection reproduces the choice.
    pub fn select_best(&self) -> (f64, f64) {
        let mut best = 0;
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.mean_acc > self.cells[best].mean_acc {
                best = i;
            }
        }
        (self.cells[best].eps1, self.cells[best].eps2)
    }

    pub fn cell(&self, eps1: f64, eps2: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.eps1 == eps1 && c.eps2 == eps2)
    }

    /// CSV export: `eps1,eps2,mean_acc,sd_acc,n_seeds`, one row per cell in
    /// lexicographic order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), std::io::Error> {
        writeln!(w, "eps1,eps2,mean_acc,sd_acc,n_seeds")?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{}",
                c.eps1, c.eps2, c.mean_acc, c.sd_acc, self.n_seeds
            )?;
        }
        Ok(())
    }
}

/// Mean and population standard deviation over values summed in sorted
/// order, so the statistics are invariant to the order seeds were run in.
fn sorted_mean_sd(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite accuracies"));
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Everything a per-cell training run needs besides the radii.
#[derive(Debug, Clone)]
pub struct TrainInputs<'a> {
    pub ensemble: &'a ConditionalEnsemble,
    pub target: &'a UnlabeledSet,
    pub train: TrainConfig,
}

/// A grid selection plus the full table it was made from.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub eps1: f64,
    pub eps2: f64,
    pub table: SweepResult,
}

fn train_cell(
    inputs: &TrainInputs,
    eps1: f64,
    eps2: f64,
) -> Result<LinearClassifier, SelectionError> {
    let amb = AmbiguityConfig::uniform(eps1, eps2, inputs.ensemble.k())
        .map_err(|e| SelectionError::Cell {
            eps1,
            eps2,
            source: Box::new(e),
        })?;
    let theta0 = LinearClassifier::zeros(inputs.ensemble.class_count, inputs.ensemble.feature_dim);
    let (theta, _) = train(inputs.ensemble, inputs.target, &amb, &inputs.train, &theta0).map_err(
        |e| SelectionError::Cell {
            eps1,
            eps2,
            source: Box::new(e),
        },
    )?;
    Ok(theta)
}

/// Train one classifier per cell, score each on the labeled validation
/// set, and return the best cell with the whole table.
pub fn grid_search(
    grid: &GridSpec,
    val: &LabeledSet,
    inputs: &TrainInputs,
) -> Result<SelectionOutcome, SelectionError> {
    if val.is_empty() {
        return Err(SelectionError::Train(TrainError::EmptyEvaluation));
    }
    let cells = grid.cells();
    let scored: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(eps1, eps2)| {
            let theta = train_cell(inputs, eps1, eps2)?;
            let metrics = evaluate(&theta, val).map_err(|e| SelectionError::Cell {
                eps1,
                eps2,
                source: Box::new(e),
            })?;
            Ok(SweepCell {
                eps1,
                eps2,
                mean_acc: metrics.accuracy,
                sd_acc: 0.0,
            })
        })
        .collect::<Result<_, SelectionError>>()?;
    let table = SweepResult::from_cells(scored, 1);
    let (eps1, eps2) = table.select_best();
    Ok(SelectionOutcome { eps1, eps2, table })
}

/// Leave-one-pseudo-source-out cross validation.
///
/// For every held-out pseudo-source, train against the remaining
/// conditionals (uniform center over K−1) and score on the held-out
/// labeled subsample; pick the cell with the best mean score. Target
/// labels are never read.
pub fn lodo_cv(
    grid: &GridSpec,
    source: &LabeledSet,
    plan: &PseudoSourcePlan,
    target: &UnlabeledSet,
    lambda: f64,
    fit_max_iters: usize,
    fit_tol: f64,
    train_cfg: &TrainConfig,
) -> Result<SelectionOutcome, SelectionError> {
    let k = plan.k;
    if k < 2 {
        return Err(SelectionError::TooFewSources(k));
    }
    plan.validate(source.len())?;
    let full = fit_ensemble(source, plan, lambda, fit_max_iters, fit_tol)?;
    let folds: Vec<(ConditionalEnsemble, LabeledSet)> = (0..k)
        .map(|held| {
            let models: Vec<_> = full
                .models
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != held)
                .map(|(_, m)| m.clone())
                .collect();
            let sub = ConditionalEnsemble::new(models)?;
            let heldout = source.select(&plan.index_lists[held])?;
            Ok((sub, heldout))
        })
        .collect::<Result<_, SelectionError>>()?;

    let cells = grid.cells();
    let scored: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(eps1, eps2)| {
            let mut accs = Vec::with_capacity(k);
            for (sub, heldout) in &folds {
                let inputs = TrainInputs {
                    ensemble: sub,
                    target,
                    train: train_cfg.clone(),
                };
                let theta = train_cell(&inputs, eps1, eps2)?;
                let metrics = evaluate(&theta, heldout).map_err(|e| SelectionError::Cell {
                    eps1,
                    eps2,
                    source: Box::new(e),
                })?;
                accs.push(metrics.accuracy);
            }
            let (mean, sd) = sorted_mean_sd(&accs);
            Ok(SweepCell {
                eps1,
                eps2,
                mean_acc: mean,
                sd_acc: sd,
            })
        })
        .collect::<Result<_, SelectionError>>()?;
    let table = SweepResult::from_cells(scored, k);
    let (eps1, eps2) = table.select_best();
    Ok(SelectionOutcome { eps1, eps2, table })
}

/// Inputs of a multi-seed sensitivity sweep. Each seed rebuilds the
/// bootstrap plan and the conditional ensemble before scanning the grid.
#[derive(Debug, Clone)]
pub struct SweepInputs<'a> {
    pub source: &'a LabeledSet,
    pub target: &'a UnlabeledSet,
    pub eval: &'a LabeledSet,
    pub k: usize,
    pub fraction: f64,
    pub lambda: f64,
    pub fit_max_iters: usize,
    pub fit_tol: f64,
    pub train: TrainConfig,
}

/// Mean ± sd of evaluation accuracy per grid cell over the given seeds.
/// Each seed drives the bootstrap plan, the fits, and the training run.
pub fn sweep_heatmap(
    grid: &GridSpec,
    seeds: &[u64],
    inputs: &SweepInputs,
) -> Result<SweepResult, SelectionError> {
    if seeds.is_empty() {
        return Err(SelectionError::EmptySeeds);
    }
    let cells = grid.cells();
    // accs[seed][cell]
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&seed| {
            let plan = make_pseudo_sources(inputs.source, inputs.k, inputs.fraction, seed)?;
            let ensemble = fit_ensemble(
                inputs.source,
                &plan,
                inputs.lambda,
                inputs.fit_max_iters,
                inputs.fit_tol,
            )?;
            let mut train_cfg = inputs.train.clone();
            train_cfg.seed = seed;
            let ti = TrainInputs {
                ensemble: &ensemble,
                target: inputs.target,
                train: train_cfg,
            };
            let mut row = Vec::with_capacity(cells.len());
            for &(eps1, eps2) in &cells {
                let theta = train_cell(&ti, eps1, eps2)?;
                let metrics = evaluate(&theta, inputs.eval).map_err(|e| SelectionError::Cell {
                    eps1,
                    eps2,
                    source: Box::new(e),
                })?;
                row.push(metrics.accuracy);
            }
            Ok(row)
        })
        .collect::<Result<_, SelectionError>>()?;

    let scored: Vec<SweepCell> = cells
        .iter()
        .enumerate()
        .map(|(ci, &(eps1, eps2))| {
            let accs: Vec<f64> = per_seed.iter().map(|row| row[ci]).collect();
            let (mean, sd) = sorted_mean_sd(&accs);
            SweepCell {
                eps1,
                eps2,
                mean_acc: mean,
                sd_acc: sd,
            }
        })
        .collect();
    Ok(SweepResult::from_cells(scored, seeds.len()))
}

/// Per-candidate score of the pseudo-source count selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KScore {
    pub k: usize,
    pub mean_log_likelihood: f64,
    pub standard_error: f64,
}

/// Outcome of [`select_k`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSelection {
    pub selected: usize,
    pub scores: Vec<KScore>,
}

/// Round-robin class-stratified folds so every fold keeps samples of every
/// class; errors naming the first class with fewer samples than folds.
fn stratified_folds(
    set: &LabeledSet,
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, SelectionError> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); set.class_count];
    for (i, &label) in set.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    for (class, rows) in by_class.iter().enumerate() {
        if rows.len() < folds {
            return Err(SelectionError::Dataset(DatasetError::InsufficientClass {
                class,
                have: rows.len(),
                need: folds,
            }));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for rows in &mut by_class {
        use rand::seq::SliceRandom;
        rows.shuffle(&mut rng);
        for (j, &i) in rows.iter().enumerate() {
            out[j % folds].push(i);
        }
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    Ok(out)
}

/// Pick the pseudo-source count by source-only cross validation.
///
/// For each candidate K and fold: build K bootstrap pseudo-sources from
/// the training part, fit the conditionals, and score the mean per-model
/// log-likelihood on the held-out part. Returns the smallest candidate
/// whose mean score is within one standard error of the best (plateau
/// rule).
pub fn select_k(
    source: &LabeledSet,
    k_candidates: &[usize],
    folds: usize,
    seed: u64,
    fraction: f64,
    lambda: f64,
    fit_max_iters: usize,
    fit_tol: f64,
) -> Result<KSelection, SelectionError> {
    if k_candidates.is_empty() {
        return Err(SelectionError::EmptyCandidates);
    }
    if folds < 2 {
        return Err(SelectionError::TooFewFolds(folds));
    }
    let mut candidates = k_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    let fold_indices = stratified_folds(source, folds, seed)?;

    // Sub-seeds drawn in a fixed order so parallel scoring stays
    // deterministic.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::new();
    for &k in &candidates {
        for fold in 0..folds {
            jobs.push((k, fold, rng.random::<u64>()));
        }
    }

    let fold_scores: Vec<((usize, usize), f64)> = jobs
        .par_iter()
        .map(|&(k, fold, sub_seed)| {
            let val_idx = &fold_indices[fold];
            let train_idx: Vec<usize> = (0..folds)
                .filter(|f| *f != fold)
                .flat_map(|f| fold_indices[f].iter().copied())
                .collect();
            let train_part = source.select(&train_idx)?;
            let val_part = source.select(val_idx)?;
            let plan = make_pseudo_sources(&train_part, k, fraction, sub_seed)?;
            let ensemble = fit_ensemble(&train_part, &plan, lambda, fit_max_iters, fit_tol)?;
            let mut per_model = 0.0;
            for model in &ensemble.models {
                let mut ll = 0.0;
                for i in 0..val_part.len() {
                    let p = model.predict_proba(val_part.features.row(i))?;
                    ll += p[val_part.labels[i]].clamp(LOG_CLAMP_MIN, 1.0).ln();
                }
                per_model += ll / val_part.len() as f64;
            }
            Ok(((k, fold), per_model / ensemble.k() as f64))
        })
        .collect::<Result<_, SelectionError>>()?;

    let mut scores = Vec::with_capacity(candidates.len());
    for &k in &candidates {
        let vals: Vec<f64> = fold_scores
            .iter()
            .filter(|((kk, _), _)| *kk == k)
            .map(|(_, v)| *v)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        scores.push(KScore {
            k,
            mean_log_likelihood: mean,
            standard_error: (var / n).sqrt(),
        });
    }
    let best = scores
        .iter()
        .max_by(|a, b| {
            a.mean_log_likelihood
                .partial_cmp(&b.mean_log_likelihood)
                .expect("finite scores")
        })
        .expect("nonempty candidates");
    let threshold = best.mean_log_likelihood - best.standard_error;
    let selected = scores
        .iter()
        .find(|s| s.mean_log_likelihood >= threshold)
        .map(|s| s.k)
        .unwrap_or(best.k);
    Ok(KSelection { selected, scores })
}
