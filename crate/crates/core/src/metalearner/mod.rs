//! The three-stage doubly robust meta-learner for functional outcomes.
//!
//! 1. Nuisances: outcome regressions `μ⁽⁰⁾, μ⁽¹⁾` and the propensity `π` are
//!    fitted out-of-fold for every cross-fitting fold.
//! 2. Pseudo-outcomes: each subject gets
//!    `γ⁽¹⁾ = μ⁽¹⁾(X) + A/π(X)·(Y − μ⁽¹⁾(X))` and
//!    `γ⁽⁰⁾ = μ⁽⁰⁾(X) + (1−A)/(1−π(X))·(Y − μ⁽⁰⁾(X))` from the models that
//!    never saw it.
//! 3. Final stage: within each fold the difference `γ⁽¹⁾ − γ⁽⁰⁾` is regressed
//!    on `X`; the fold regressors are averaged into `θ̂(x)`.

mod bands;
mod bias;
mod fate;
mod fit;
mod surface;

pub use bands::{bootstrap_band, confidence_band, BandMode, BandOptions, ConfidenceBand};
pub use bias::{dr_bias_diagnostic, NuisanceOracle};
pub use fate::{fate, fate_band, fate_summary, FateEstimate};
pub use fit::{
    fit_fcate, fit_nuisances, predict_theta, pseudo_outcomes, pseudo_outcomes_from_predictions,
    FcateFit, FcateModel, FoldNuisance, LearnerSpec, NuisanceFit, PseudoOutcomes,
};
pub use surface::{surface_rows, SurfaceRows};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::funcdata::CurveSet;
use crate::{rng, Error, Result};

/// Observed samples `(Xᵢ, Aᵢ, Yᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    a: Vec<bool>,
    y: CurveSet,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, a: Vec<bool>, y: CurveSet) -> Result<Self> {
        let n = x.nrows();
        if a.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} covariate rows, {} treatments, {} curves",
                a.len(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariates must be finite"));
        }
        let treated = a.iter().filter(|&&v| v).count();
        if treated == 0 || treated == n {
            return Err(Error::invalid("both treatment arms required"));
        }
        Ok(Self { x, a, y })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn a(&self) -> &[bool] {
        &self.a
    }

    pub fn y(&self) -> &CurveSet {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }
}

/// Random balanced partition of `0..n` into `folds` disjoint folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossFitPlan {
    folds: usize,
    assignment: Vec<usize>,
    seed: u64,
}

/// Shuffle the indices and deal them round-robin, so fold sizes differ by at
/// most one and the first `n mod J` folds carry the extra subject.
pub fn make_plan(n: usize, folds: usize, seed: u64) -> Result<CrossFitPlan> {
    if folds < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if folds > n {
        return Err(Error::invalid(format!(
            "{folds} folds requested for {n} subjects"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag::FOLDS]));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(CrossFitPlan {
        folds,
        assignment,
        seed,
    })
}

impl CrossFitPlan {
    /// Degenerate single-fold plan, for assembling a model by hand.
    pub fn single(n: usize) -> Self {
        Self {
            folds: 1,
            assignment: vec![0; n],
            seed: 0,
        }
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    /// Indices in fold `j`, ascending.
    pub fn members(&self, j: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.assignment[i] == j)
            .collect()
    }

    /// Indices outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.assignment[i] != j)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    /// Relabel folds by `perm` (fold `j` becomes fold `perm[j]`).
    pub fn relabel(&self, perm: &[usize]) -> Result<CrossFitPlan> {
        let mut seen = vec![false; self.folds];
        if perm.len() != self.folds
            || perm
                .iter()
                .any(|&p| p >= self.folds || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid("fold relabelling must be a permutation"));
        }
        Ok(CrossFitPlan {
            folds: self.folds,
            assignment: self.assignment.iter().map(|&f| perm[f]).collect(),
            seed: self.seed,
        })
    }
}
