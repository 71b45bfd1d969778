use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_covariates, Coefficients, DgpConfig, SimTruth};
use crate::funcdata::CurveSet;
use crate::learners::FeatureMap;
use crate::metalearner::{
    confidence_band, fate, fit_fcate, make_plan, BandMode, BandOptions, LearnerSpec,
};
use crate::{rng, Error, Result};

/// Misspecification scenario: which nuisances see the distorted features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scenario {
    /// Both nuisances on raw covariates.
    BothCorrect,
    /// Outcome models on `Z`.
    OutcomeMisspecified,
    /// Propensity on `Z`.
    PropensityMisspecified,
    /// Both on `Z`.
    BothMisspecified,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::BothCorrect,
        Scenario::OutcomeMisspecified,
        Scenario::PropensityMisspecified,
        Scenario::BothMisspecified,
    ];

    pub fn id(self) -> u8 {
        self as u8 + 1
    }

    /// `(outcome features, propensity features)`.
    pub fn feature_maps(self) -> (FeatureMap, FeatureMap) {
        use FeatureMap::{Identity, Misspecified};
        match self {
            Scenario::BothCorrect => (Identity, Identity),
            Scenario::OutcomeMisspecified => (Misspecified, Identity),
            Scenario::PropensityMisspecified => (Identity, Misspecified),
            Scenario::BothMisspecified => (Misspecified, Misspecified),
        }
    }
}

impl TryFrom<u8> for Scenario {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        match id {
            1..=4 => Ok(Scenario::ALL[id as usize - 1]),
            _ => Err(Error::invalid(format!("scenario id must be 1-4, got {id}"))),
        }
    }
}

impl From<Scenario> for u8 {
    fn from(s: Scenario) -> u8 {
        s.id()
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: Scenario,
    /// Learners; the feature maps are overridden by the scenario.
    #[serde(default)]
    pub learners: LearnerSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default = "default_probes")]
    pub probes: Vec<[f64; 4]>,
    #[serde(default)]
    pub bands: BandOptions,
    #[serde(default = "default_trim")]
    pub fate_trim: f64,
    #[serde(default = "default_true")]
    pub compute_bands: bool,
    #[serde(default = "default_true")]
    pub compute_bias: bool,
}

fn default_folds() -> usize {
    5
}
fn default_replications() -> usize {
    50
}
fn default_eval_points() -> usize {
    100
}
fn default_probes() -> Vec<[f64; 4]> {
    vec![
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [-1.0, 0.5, -0.5, 0.0],
        [0.5, -1.0, 1.0, 0.5],
        [-0.5, 0.0, 0.5, -1.0],
    ]
}
fn default_trim() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn new(id: Scenario) -> Self {
        Self {
            id,
            learners: LearnerSpec::default(),
            folds: default_folds(),
            replications: default_replications(),
            base_seed: 0,
            eval_points: default_eval_points(),
            probes: default_probes(),
            bands: BandOptions::default(),
            fate_trim: default_trim(),
            compute_bands: true,
            compute_bias: true,
        }
    }

    /// Learner spec with the scenario's feature maps applied.
    pub fn spec(&self) -> LearnerSpec {
        let (mu, pi) = self.id.feature_maps();
        LearnerSpec {
            outcome_features: mu,
            propensity_features: pi,
            ..self.learners.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::invalid("cross-fitting needs at least 2 folds"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be positive"));
        }
        if self.eval_points == 0 {
            return Err(Error::invalid("eval_points must be positive"));
        }
        if !(0.0..1.0).contains(&self.fate_trim) {
            return Err(Error::invalid("fate_trim must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Seed of replication `rep`; identical across scenarios, so runs are paired.
    pub fn replication_seed(&self, rep: usize) -> u64 {
        rng::derive_seed(self.base_seed, &[rng::tag::REPLICATION, rep as u64])
    }
}

/// Mean 𝕃² distance between matched rows of two curve sets.
pub fn armse(estimate: &CurveSet, truth: &CurveSet) -> Result<f64> {
    if estimate.grid() != truth.grid() {
        return Err(Error::DimensionMismatch(
            "ARMSE curves are on different grids".into(),
        ));
    }
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated curves vs {} true curves",
            estimate.len(),
            truth.len()
        )));
    }
    if estimate.is_empty() {
        return Err(Error::invalid("ARMSE needs at least one evaluation point"));
    }
    let g = estimate.grid();
    let total: f64 = (0..estimate.len())
        .map(|i| g.l2_distance(&estimate.row(i), &truth.row(i)))
        .sum();
    Ok(total / estimate.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One replication of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub scenario: Scenario,
    pub replication: usize,
    pub seed: u64,
    pub n: usize,
    pub status: RowStatus,
    pub error: Option<String>,
    pub armse: Option<f64>,
    /// `sup_t |FATÊ(t) − FATE*(t)|`.
    pub fate_sup_error: Option<f64>,
    /// Mean over the evaluation points of `‖b̂(x)‖`.
    pub bias_norm: Option<f64>,
    /// Whether the simultaneous band at each probe contains the true curve.
    pub band_covered: Vec<bool>,
    /// Fraction of grid points inside the pointwise band, per probe.
    pub pointwise_coverage: Vec<f64>,
}

impl McRow {
    fn failed(sc: &ScenarioConfig, rep: usize, seed: u64, n: usize, err: &Error) -> Self {
        Self {
            scenario: sc.id,
            replication: rep,
            seed,
            n,
            status: RowStatus::Failed,
            error: Some(err.to_string()),
            armse: None,
            fate_sup_error: None,
            bias_norm: None,
            band_covered: Vec::new(),
            pointwise_coverage: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RowStatus::Ok
    }
}

/// Fit one replication; numerical failures are returned as a failed row.
pub fn run_replication(sc: &ScenarioConfig, dgp: &DgpConfig, rep: usize) -> Result<McRow> {
    let seed = sc.replication_seed(rep);
    match replication_inner(sc, dgp, rep, seed) {
        Ok(row) => Ok(row),
        Err(e) if e.is_numerical() => Ok(McRow::failed(sc, rep, seed, dgp.n, &e)),
        Err(e) => Err(e),
    }
}

fn replication_inner(sc: &ScenarioConfig, dgp: &DgpConfig, rep: usize, seed: u64) -> Result<McRow> {
    let cfg = DgpConfig {
        seed,
        ..dgp.clone()
    };
    let coefficients = Coefficients::draw(&cfg)?;
    let truth = SimTruth::sample(coefficients, &cfg, seed)?;
    let data = truth.dataset()?;
    let plan = make_plan(
        data.len(),
        sc.folds,
        rng::derive_seed(seed, &[rng::tag::FOLDS]),
    )?;
    let fit = fit_fcate(&data, &sc.spec(), &plan, seed)?;
    let model = &fit.model;
    let c = &truth.coefficients;

    let x_eval: DMatrix<f64> = draw_covariates(
        sc.eval_points,
        &mut rng::stream(seed, &[rng::tag::EVAL_POINTS]),
    );
    let armse_v = armse(&model.predict_many(&x_eval)?, &c.theta_many(&x_eval)?)?;

    let fate_hat = fate(&fit.pseudo, sc.fate_trim)?;
    let fate_sup_error = fate_hat
        .values()
        .iter()
        .zip(c.fate())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let bias_norm = if sc.compute_bias {
        let mut acc = 0.0;
        for i in 0..x_eval.nrows() {
            let xi: Vec<f64> = x_eval.row(i).iter().copied().collect();
            acc += c.grid().l2_norm(&model.nuisance().bias_at(&xi, c)?);
        }
        Some(acc / x_eval.nrows() as f64)
    } else {
        None
    };

    let mut band_covered = Vec::new();
    let mut pointwise_coverage = Vec::new();
    if sc.compute_bands {
        for (p, probe) in sc.probes.iter().enumerate() {
            let truth_curve = c.theta(probe);
            let band_seed = rng::derive_seed(seed, &[rng::tag::BOOTSTRAP, p as u64]);
            let sim = BandOptions {
                mode: BandMode::Simultaneous,
                ..sc.bands
            };
            let pw = BandOptions {
                mode: BandMode::Pointwise,
                ..sc.bands
            };
            band_covered
                .push(confidence_band(model, probe, &sim, band_seed)?.contains(&truth_curve));
            pointwise_coverage.push(
                confidence_band(model, probe, &pw, band_seed)?.pointwise_coverage(&truth_curve),
            );
        }
    }

    Ok(McRow {
        scenario: sc.id,
        replication: rep,
        seed,
        n: dgp.n,
        status: RowStatus::Ok,
        error: None,
        armse: Some(armse_v),
        fate_sup_error: Some(fate_sup_error),
        bias_norm,
        band_covered,
        pointwise_coverage,
    })
}

/// Run every replication not already present in `done`, in parallel.
///
/// `on_row` sees each new row as soon as it finishes. The run stops early
/// and returns [`Error::TooManyFailures`] once more than 5% of the configured
/// replications have failed.
pub fn run_scenario_resume(
    sc: &ScenarioConfig,
    dgp: &DgpConfig,
    done: &[McRow],
    on_row: &(dyn Fn(&McRow) + Sync),
) -> Result<McReport> {
    sc.validate()?;
    dgp.validate()?;
    let mut rows: Vec<McRow> = done
        .iter()
        .filter(|r| r.scenario == sc.id && r.replication < sc.replications)
        .cloned()
        .collect();
    rows.sort_by_key(|r| r.replication);
    rows.dedup_by_key(|r| r.replication);
    let have: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.replication).collect();
    let todo: Vec<usize> = (0..sc.replications).filter(|r| !have.contains(r)).collect();

    let limit = sc.replications / 20;
    let failed = AtomicUsize::new(rows.iter().filter(|r| !r.is_ok()).count());
    let fresh: Vec<Result<Option<McRow>>> = todo
        .par_iter()
        .map(|&rep| {
            if failed.load(Ordering::Relaxed) > limit {
                return Ok(None);
            }
            let row = run_replication(sc, dgp, rep)?;
            if !row.is_ok() {
                log::warn!(
                    "scenario {} replication {rep} failed: {:?}",
                    sc.id,
                    row.error
                );
                failed.fetch_add(1, Ordering::Relaxed);
            }
            on_row(&row);
            Ok(Some(row))
        })
        .collect();
    for r in fresh {
        if let Some(row) = r? {
            rows.push(row);
        }
    }
    let failed = failed.into_inner();
    if failed > limit {
        return Err(Error::TooManyFailures {
            failed,
            total: sc.replications,
        });
    }
    rows.sort_by_key(|r| r.replication);
    Ok(McReport::from_rows(sc.id, rows))
}

pub fn run_scenario(sc: &ScenarioConfig, dgp: &DgpConfig) -> Result<McReport> {
    run_scenario_resume(sc, dgp, &[], &|_| {})
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl SummaryStats {
    /// Linear-interpolation quantiles of the given values; `None` if empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub replications: usize,
    pub failures: usize,
    pub armse: Option<SummaryStats>,
    pub fate_sup_error: Option<SummaryStats>,
    pub bias_norm: Option<SummaryStats>,
    /// Fraction of (replication, probe) pairs whose simultaneous band covers.
    pub band_coverage: Option<f64>,
    pub pointwise_coverage: Option<f64>,
}

impl Summary {
    pub fn from_rows(scenario: Scenario, rows: &[McRow]) -> Self {
        let ok: Vec<&McRow> = rows.iter().filter(|r| r.is_ok()).collect();
        let pick =
            |f: fn(&McRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
        let covered: Vec<bool> = ok
            .iter()
            .flat_map(|r| r.band_covered.iter().copied())
            .collect();
        let pointwise: Vec<f64> = ok
            .iter()
            .flat_map(|r| r.pointwise_coverage.iter().copied())
            .collect();
        let rate = |n: usize, d: usize| (d > 0).then(|| n as f64 / d as f64);
        Self {
            scenario,
            replications: rows.len(),
            failures: rows.len() - ok.len(),
            armse: SummaryStats::of(&pick(|r| r.armse)),
            fate_sup_error: SummaryStats::of(&pick(|r| r.fate_sup_error)),
            bias_norm: SummaryStats::of(&pick(|r| r.bias_norm)),
            band_coverage: rate(covered.iter().filter(|&&c| c).count(), covered.len()),
            pointwise_coverage: (!pointwise.is_empty())
                .then(|| pointwise.iter().sum::<f64>() / pointwise.len() as f64),
        }
    }
}

/// Rows of one scenario, ordered by replication, with their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub rows: Vec<McRow>,
    pub summary: Summary,
}

impl McReport {
    pub fn from_rows(scenario: Scenario, rows: Vec<McRow>) -> Self {
        let summary = Summary::from_rows(scenario, &rows);
        Self { rows, summary }
    }

    pub fn scenario(&self) -> Scenario {
        self.summary.scenario
    }

    pub fn armse_values(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.armse).collect()
    }

    pub fn median_armse(&self) -> Option<f64> {
        self.summary.armse.map(|s| s.median)
    }
}
