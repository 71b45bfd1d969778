use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CrossFitPlan, Dataset};
use crate::funcdata::{Curve, CurveSet, Grid};
use crate::learners::{
    CovModel, FeatureMap, FosLearner, FosModel, PropensityConfig, PropensityModel,
};
use crate::{rng, Error, Result};

/// Learners and feature maps for all three stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    #[serde(default)]
    pub outcome: FosLearner,
    #[serde(default)]
    pub outcome_features: FeatureMap,
    #[serde(default)]
    pub propensity: PropensityConfig,
    #[serde(default)]
    pub propensity_features: FeatureMap,
    #[serde(default)]
    pub final_stage: FosLearner,
    /// Neighbour count for the conditional covariance; `max(50, n/10)` if unset.
    #[serde(default)]
    pub cov_k: Option<usize>,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        Self {
            outcome: FosLearner::default(),
            outcome_features: FeatureMap::Identity,
            propensity: PropensityConfig::default(),
            propensity_features: FeatureMap::Identity,
            final_stage: FosLearner::default(),
            cov_k: None,
        }
    }
}

/// Nuisance models fitted without fold `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldNuisance {
    pub mu0: FosModel,
    pub mu1: FosModel,
    pub pi: PropensityModel,
    /// Every subject any of the three models was trained on.
    pub train_idx: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceFit {
    pub folds: Vec<FoldNuisance>,
}

impl NuisanceFit {
    /// Check that no subject's pseudo-outcome uses a model trained on it.
    pub fn verify_out_of_fold(&self, plan: &CrossFitPlan) -> Result<()> {
        if self.folds.len() != plan.folds() {
            return Err(Error::invalid(
                "nuisance fit and plan disagree on the fold count",
            ));
        }
        for (j, f) in self.folds.iter().enumerate() {
            if let Some(&i) = f.train_idx.iter().find(|&&i| plan.fold_of(i) == j) {
                return Err(Error::invalid(format!(
                    "fold {j} nuisances were trained on subject {i}"
                )));
            }
        }
        Ok(())
    }
}

/// `γ̂⁽¹⁾`, `γ̂⁽⁰⁾` and their difference for every subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOutcomes {
    pub gamma1: CurveSet,
    pub gamma0: CurveSet,
    pub diff: CurveSet,
}

fn seed_for(seed: u64, fold: usize, role: u64) -> u64 {
    rng::derive_seed(seed, &[rng::tag::MLP_INIT, fold as u64, role])
}

fn subset(d: &Dataset, idx: &[usize]) -> Result<(DMatrix<f64>, CurveSet)> {
    Ok((d.x().select_rows(idx.iter()), d.y().select(idx)?))
}

/// Stage one: out-of-fold outcome regressions and propensity for each fold.
pub fn fit_nuisances(
    d: &Dataset,
    plan: &CrossFitPlan,
    spec: &LearnerSpec,
    seed: u64,
) -> Result<NuisanceFit> {
    if plan.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} subjects, dataset has {}",
            plan.len(),
            d.len()
        )));
    }
    let folds = (0..plan.folds())
        .into_par_iter()
        .map(|j| {
            let train = plan.complement(j);
            let (controls, treated): (Vec<usize>, Vec<usize>) =
                train.iter().partition(|&&i| !d.a()[i]);
            if controls.is_empty() || treated.is_empty() {
                return Err(
                    Error::invalid("both treatment arms required outside the fold").in_fold(j),
                );
            }
            let fit_arm = |idx: &[usize], role| -> Result<FosModel> {
                let (x, y) = subset(d, idx)?;
                spec.outcome
                    .fit(&x, &y, spec.outcome_features, seed_for(seed, j, role))
            };
            let mu0 = fit_arm(&controls, 0).map_err(|e| e.in_fold(j))?;
            let mu1 = fit_arm(&treated, 1).map_err(|e| e.in_fold(j))?;
            let x_train = d.x().select_rows(train.iter());
            let a_train: Vec<bool> = train.iter().map(|&i| d.a()[i]).collect();
            let pi = PropensityModel::fit(
                &x_train,
                &a_train,
                &spec.propensity,
                spec.propensity_features,
            )
            .map_err(|e| e.in_fold(j))?;
            Ok(FoldNuisance {
                mu0,
                mu1,
                pi,
                train_idx: train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NuisanceFit { folds })
}

/// Apply the pseudo-outcome formulas to given nuisance predictions.
///
/// `mu0`, `mu1` are `n × T` predictions and `pi` the propensities.
pub fn pseudo_outcomes_from_predictions(
    y: &CurveSet,
    a: &[bool],
    mu0: &DMatrix<f64>,
    mu1: &DMatrix<f64>,
    pi: &[f64],
) -> Result<PseudoOutcomes> {
    let (n, t) = y.values().shape();
    if a.len() != n || pi.len() != n || mu0.shape() != (n, t) || mu1.shape() != (n, t) {
        return Err(Error::DimensionMismatch(
            "nuisance predictions do not match the outcomes".into(),
        ));
    }
    if pi.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid(
            "propensities must lie strictly inside (0, 1)",
        ));
    }
    let yv = y.values();
    let mut g1 = DMatrix::zeros(n, t);
    let mut g0 = DMatrix::zeros(n, t);
    for i in 0..n {
        let w1 = if a[i] { 1.0 / pi[i] } else { 0.0 };
        let w0 = if a[i] { 0.0 } else { 1.0 / (1.0 - pi[i]) };
        for s in 0..t {
            g1[(i, s)] = mu1[(i, s)] + w1 * (yv[(i, s)] - mu1[(i, s)]);
            g0[(i, s)] = mu0[(i, s)] + w0 * (yv[(i, s)] - mu0[(i, s)]);
        }
    }
    let diff = &g1 - &g0;
    let grid = y.grid().clone();
    Ok(PseudoOutcomes {
        gamma1: CurveSet::new(grid.clone(), g1)?,
        gamma0: CurveSet::new(grid.clone(), g0)?,
        diff: CurveSet::new(grid, diff)?,
    })
}

/// Stage two: pseudo-outcomes, each subject scored by its own fold's
/// out-of-fold models.
pub fn pseudo_outcomes(
    d: &Dataset,
    nf: &NuisanceFit,
    plan: &CrossFitPlan,
) -> Result<PseudoOutcomes> {
    nf.verify_out_of_fold(plan)?;
    let (n, t) = d.y().values().shape();
    let mut mu0 = DMatrix::zeros(n, t);
    let mut mu1 = DMatrix::zeros(n, t);
    let mut pi = vec![0.0; n];
    for (j, f) in nf.folds.iter().enumerate() {
        let idx = plan.members(j);
        let x = d.x().select_rows(idx.iter());
        let p0 = f.mu0.predict_many(&x).map_err(|e| e.in_fold(j))?;
        let p1 = f.mu1.predict_many(&x).map_err(|e| e.in_fold(j))?;
        let pp = f.pi.predict_many(&x).map_err(|e| e.in_fold(j))?;
        for (r, &i) in idx.iter().enumerate() {
            mu0.row_mut(i).copy_from(&p0.row(r));
            mu1.row_mut(i).copy_from(&p1.row(r));
            pi[i] = pp[r];
        }
    }
    pseudo_outcomes_from_predictions(d.y(), d.a(), &mu0, &mu1, &pi)
}

/// Cross-fitted F-CATE regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcateModel {
    plan: CrossFitPlan,
    spec: LearnerSpec,
    grid: Grid,
    input_dim: usize,
    nuisance: NuisanceFit,
    stage3: Vec<FosModel>,
    cov: CovModel,
}

/// Everything produced by [`fit_fcate`].
#[derive(Debug, Clone)]
pub struct FcateFit {
    pub model: FcateModel,
    pub pseudo: PseudoOutcomes,
}

/// Run all three stages and build the covariance model for bands.
pub fn fit_fcate(
    d: &Dataset,
    spec: &LearnerSpec,
    plan: &CrossFitPlan,
    seed: u64,
) -> Result<FcateFit> {
    let nuisance = fit_nuisances(d, plan, spec, seed)?;
    let pseudo = pseudo_outcomes(d, &nuisance, plan)?;
    let stage3 = (0..plan.folds())
        .into_par_iter()
        .map(|j| {
            let idx = plan.members(j);
            let x = d.x().select_rows(idx.iter());
            let diff = pseudo.diff.select(&idx)?;
            spec.final_stage
                .fit(&x, &diff, FeatureMap::Identity, seed_for(seed, j, 2))
                .map_err(|e| e.in_fold(j))
        })
        .collect::<Result<Vec<_>>>()?;
    let theta_x = average_predictions(&stage3, d.x())?;
    let theta_x = CurveSet::new(d.y().grid().clone(), theta_x)?;
    let k = spec.cov_k.unwrap_or_else(|| CovModel::default_k(d.len()));
    let cov = CovModel::fit(d.x(), &pseudo.diff, &theta_x, k)?;
    Ok(FcateFit {
        model: FcateModel {
            plan: plan.clone(),
            spec: spec.clone(),
            grid: d.y().grid().clone(),
            input_dim: d.n_covariates(),
            nuisance,
            stage3,
            cov,
        },
        pseudo,
    })
}

/// Fold average with the summands sorted per grid point, so the result does
/// not depend on the order of the folds.
fn average_predictions(models: &[FosModel], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let preds = models
        .iter()
        .map(|m| m.predict_many(x))
        .collect::<Result<Vec<_>>>()?;
    let (n, t) = preds[0].shape();
    let j = preds.len() as f64;
    let mut buf = vec![0.0; preds.len()];
    Ok(DMatrix::from_fn(n, t, |i, s| {
        for (b, p) in buf.iter_mut().zip(&preds) {
            *b = p[(i, s)];
        }
        buf.sort_by(f64::total_cmp);
        buf.iter().sum::<f64>() / j
    }))
}

impl FcateModel {
    /// Assemble a model from already fitted parts.
    pub fn from_parts(
        plan: CrossFitPlan,
        spec: LearnerSpec,
        nuisance: NuisanceFit,
        stage3: Vec<FosModel>,
        cov: CovModel,
    ) -> Result<Self> {
        let first = stage3
            .first()
            .ok_or_else(|| Error::invalid("no third-stage models"))?;
        let grid = first.grid().clone();
        let input_dim = first.input_dim();
        if stage3
            .iter()
            .any(|m| m.grid() != &grid || m.input_dim() != input_dim)
        {
            return Err(Error::DimensionMismatch(
                "third-stage models disagree on grid or inputs".into(),
            ));
        }
        Ok(Self {
            plan,
            spec,
            grid,
            input_dim,
            nuisance,
            stage3,
            cov,
        })
    }

    pub fn plan(&self) -> &CrossFitPlan {
        &self.plan
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn nuisance(&self) -> &NuisanceFit {
        &self.nuisance
    }

    pub fn stage3(&self) -> &[FosModel] {
        &self.stage3
    }

    pub fn cov(&self) -> &CovModel {
        &self.cov
    }

    /// Mean fold size, the default effective sample size for bands.
    pub fn fold_n_eff(&self) -> f64 {
        self.plan.len() as f64 / self.stage3.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Result<Curve> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} covariates, got {}",
                self.input_dim,
                x.len()
            )));
        }
        let m = DMatrix::from_row_slice(1, x.len(), x);
        let avg = average_predictions(&self.stage3, &m)?;
        Curve::new(self.grid.clone(), avg.row(0).iter().copied().collect())
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<CurveSet> {
        if x.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} covariates, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        CurveSet::new(self.grid.clone(), average_predictions(&self.stage3, x)?)
    }

    /// Same model with fold labels permuted.
    pub fn relabel_folds(&self, perm: &[usize]) -> Result<FcateModel> {
        let plan = self.plan.relabel(perm)?;
        let mut stage3 = self.stage3.clone();
        let mut folds = self.nuisance.folds.clone();
        for (j, &p) in perm.iter().enumerate() {
            stage3[p] = self.stage3[j].clone();
            folds[p] = self.nuisance.folds[j].clone();
        }
        FcateModel::from_parts(
            plan,
            self.spec.clone(),
            NuisanceFit { folds },
            stage3,
            self.cov.clone(),
        )
    }
}

/// `θ̂(x)`, the average of the fold-specific third-stage predictions.
pub fn predict_theta(m: &FcateModel, x: &[f64]) -> Result<Curve> {
    m.predict(x)
}
