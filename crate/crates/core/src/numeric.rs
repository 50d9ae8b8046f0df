//! Numeric kernels shared by the rest of the crate: softmax, cross-entropy
//! between probability vectors, and the three projection operators the
//! minimax loop needs (L2 ball, probability simplex, and their
//! intersection).
//!
//! All routines work in `f64`. Probability mass that enters a logarithm is
//! clamped to `[1e-12, 1]` so saturated predictions never produce
//! `-inf`/`NaN`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability vectors must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// Lower clamp applied to probabilities inside logarithms.
pub const LOG_CLAMP_MIN: f64 = 1e-12;

/// Iterate-change tolerance of the alternating (Dykstra) projection.
pub const DYKSTRA_TOL: f64 = 1e-9;

/// Maximum number of Dykstra rounds before giving up.
pub const DYKSTRA_MAX_ROUNDS: usize = 1000;

/// Slack allowed on the ball constraint of a projected point.
pub const BALL_FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty vector")]
    Empty,
    #[error("invalid probability vector: {reason}")]
    InvalidProbability { reason: String },
    #[error("radius must be nonnegative, got {radius}")]
    NegativeRadius { radius: f64 },
    #[error("alternating projection did not converge after {rounds} rounds")]
    ProjectionDidNotConverge { rounds: usize, last: Vec<f64> },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    ShapeMismatch { len: usize, rows: usize, cols: usize },
}

/// A vector of class probabilities: nonnegative entries summing to one
/// within [`PROB_SUM_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validate and wrap a raw vector.
    pub fn new(p: Vec<f64>) -> Result<Self, NumericError> {
        if p.is_empty() {
            return Err(NumericError::Empty);
        }
        for (index, &x) in p.iter().enumerate() {
            if !x.is_finite() {
                return Err(NumericError::NonFinite { index });
            }
            if x < 0.0 {
                return Err(NumericError::InvalidProbability {
                    reason: format!("negative entry {x} at index {index}"),
                });
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(NumericError::InvalidProbability {
                reason: format!("entries sum to {sum}, expected 1"),
            });
        }
        Ok(Self(p))
    }

    /// Wrap a vector that is valid by construction (softmax output, convex
    /// combinations of probability vectors, simplex projections).
    pub fn new_unchecked(p: Vec<f64>) -> Self {
        debug_assert!(!p.is_empty());
        debug_assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        Self(p)
    }

    /// The uniform distribution over `len` classes.
    pub fn uniform(len: usize) -> Result<Self, NumericError> {
        if len == 0 {
            return Err(NumericError::Empty);
        }
        Ok(Self(vec![1.0 / len as f64; len]))
    }

    /// Point mass on `index`.
    pub fn one_hot(len: usize, index: usize) -> Result<Self, NumericError> {
        if len == 0 {
            return Err(NumericError::Empty);
        }
        if index >= len {
            return Err(NumericError::DimensionMismatch {
                expected: len,
                got: index,
            });
        }
        let mut p = vec![0.0; len];
        p[index] = 1.0;
        Ok(Self(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Dense row-major matrix of finite reals with explicit dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build from row-major data, rejecting shape mismatches and non-finite
    /// entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericError> {
        if data.len() != rows * cols {
            return Err(NumericError::ShapeMismatch {
                len: data.len(),
                rows,
                cols,
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(NumericError::NonFinite { index });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Row `r` as a slice of length `cols`.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// y = A x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, NumericError> {
        if x.len() != self.cols {
            return Err(NumericError::DimensionMismatch {
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[r] = acc;
        }
        Ok(y)
    }

    /// Copy the rows listed in `indices` into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, NumericError> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(NumericError::DimensionMismatch {
                    expected: self.rows,
                    got: i,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Numerically stable softmax: shifts by the max logit before
/// exponentiating, so `softmax([1000, 0])` is `[1, 0]` instead of `NaN`.
pub fn softmax(logits: &[f64]) -> Result<ProbVector, NumericError> {
    if logits.is_empty() {
        return Err(NumericError::Empty);
    }
    if let Some(index) = logits.iter().position(|x| !x.is_finite()) {
        return Err(NumericError::NonFinite { index });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(ProbVector::new_unchecked(
        exps.into_iter().map(|e| e / sum).collect(),
    ))
}

/// Cross-entropy −Σ_y target_y · log(pred_y) between two probability
/// vectors, with `pred` clamped to `[1e-12, 1]` inside the logarithm.
pub fn cross_entropy(pred: &ProbVector, target: &ProbVector) -> Result<f64, NumericError> {
    if pred.len() != target.len() {
        return Err(NumericError::DimensionMismatch {
            expected: target.len(),
            got: pred.len(),
        });
    }
    let mut acc = 0.0;
    for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
        acc -= t * p.clamp(LOG_CLAMP_MIN, 1.0).ln();
    }
    Ok(acc)
}

/// Euclidean projection onto the ball `{x : ‖x − center‖₂ ≤ radius}`.
///
/// Points already inside the ball are returned unchanged; a zero radius
/// returns the center exactly.
pub fn project_ball(point: &[f64], center: &[f64], radius: f64) -> Result<Vec<f64>, NumericError> {
    if point.len() != center.len() {
        return Err(NumericError::DimensionMismatch {
            expected: center.len(),
            got: point.len(),
        });
    }
    assert!(radius >= 0.0, "radius must be nonnegative");
    if radius == 0.0 {
        return Ok(center.to_vec());
    }
    let mut sq = 0.0;
    for (p, c) in point.iter().zip(center) {
        let d = p - c;
        sq += d * d;
    }
    let norm = sq.sqrt();
    if norm <= radius {
        return Ok(point.to_vec());
    }
    let scale = radius / norm;
    Ok(point
        .iter()
        .zip(center)
        .map(|(p, c)| c + (p - c) * scale)
        .collect())
}

/// Euclidean projection onto the probability simplex via the sorted
/// threshold rule: find τ so that Σ max(vᵢ − τ, 0) = 1 and clip.
pub fn project_simplex(v: &[f64]) -> Result<ProbVector, NumericError> {
    if v.is_empty() {
        return Err(NumericError::Empty);
    }
    if let Some(index) = v.iter().position(|x| !x.is_finite()) {
        return Err(NumericError::NonFinite { index });
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (j + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    Ok(ProbVector::new_unchecked(
        v.iter().map(|&x| (x - tau).max(0.0)).collect(),
    ))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean projection onto `Δ ∩ {‖x − center‖₂ ≤ radius}` by Dykstra's
/// alternating projections.
///
/// The feasible set is never empty because `center` itself lies in both
/// sets. A zero radius collapses it to the singleton `{center}`, which is
/// returned exactly. Stops once the simplex iterate moves less than
/// [`DYKSTRA_TOL`] between rounds and satisfies the ball constraint within
/// [`BALL_FEASIBILITY_TOL`]; errors with the last iterate after
/// [`DYKSTRA_MAX_ROUNDS`] rounds.
pub fn project_simplex_ball(
    v: &[f64],
    center: &ProbVector,
    radius: f64,
) -> Result<ProbVector, NumericError> {
    if radius < 0.0 {
        return Err(NumericError::NegativeRadius { radius });
    }
    if v.len() != center.len() {
        return Err(NumericError::DimensionMismatch {
            expected: center.len(),
            got: v.len(),
        });
    }
    if radius == 0.0 {
        return Ok(center.clone());
    }
    let n = v.len();
    let mut x = v.to_vec();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    for round in 0..DYKSTRA_MAX_ROUNDS {
        for i in 0..n {
            scratch[i] = x[i] + p[i];
        }
        let y = project_ball(&scratch, center.as_slice(), radius)?;
        for i in 0..n {
            p[i] = scratch[i] - y[i];
            scratch[i] = y[i] + q[i];
        }
        let x_new = project_simplex(&scratch)?.into_inner();
        for i in 0..n {
            q[i] = scratch[i] - x_new[i];
        }
        let change = x
            .iter()
            .zip(&x_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let feasible = dist(&x_new, center.as_slice()) <= radius + BALL_FEASIBILITY_TOL;
        x = x_new;
        if change < DYKSTRA_TOL && feasible {
            return Ok(ProbVector::new_unchecked(x));
        }
        let _ = round;
    }
    Err(NumericError::ProjectionDidNotConverge {
        rounds: DYKSTRA_MAX_ROUNDS,
        last: x,
    })
}
