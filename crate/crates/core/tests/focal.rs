use focal_core::funcdata::{CurveSet, Grid};
use focal_core::gp::GpSampler;
use focal_core::learners::{FeatureMap, FosLearner};
use focal_core::metalearner::{
    fit_fcate, make_plan, predict_theta, pseudo_outcomes_from_predictions, CrossFitPlan, Dataset,
    FcateModel, LearnerSpec,
};
use focal_core::rng;
use focal_core::simulate::{armse, generate, Coefficients, DgpConfig, SimTruth};
use focal_core::Error;
use nalgebra::DMatrix;
use rand::Rng;

fn dgp(n: usize, t: usize, seed: u64) -> DgpConfig {
    DgpConfig {
        n,
        grid_size: t,
        seed,
        ..DgpConfig::default()
    }
}

fn col_mean_se(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = m.nrows() as f64;
    (0..m.ncols())
        .map(|s| {
            let c = m.column(s);
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

#[test]
fn pseudo_outcome_hand_values() {
    let g = Grid::uniform(4).unwrap();
    let y = CurveSet::new(g, DMatrix::from_element(2, 4, 2.0)).unwrap();
    let mu0 = DMatrix::from_element(2, 4, -1.0);
    let mu1 = DMatrix::from_element(2, 4, 1.0);
    let p = pseudo_outcomes_from_predictions(&y, &[true, false], &mu0, &mu1, &[0.5, 0.5]).unwrap();
    // Treated: 1 + 2·(2 − 1) = 3. Control: indicator zeroes the correction.
    assert!(p.gamma1.row(0).iter().all(|&v| v == 3.0));
    assert!(p.gamma1.row(1).iter().all(|&v| v == 1.0));
    assert!(p.gamma0.row(0).iter().all(|&v| v == -1.0));
    // Control: −1 + 2·(2 + 1) = 5.
    assert!(p.gamma0.row(1).iter().all(|&v| v == 5.0));
    assert!(p.diff.row(0).iter().all(|&v| v == 4.0));
}

/// Grid-averaged oracle pseudo-outcome difference: subject mean and its
/// standard error.
fn integrated_oracle_mean(s: &SimTruth) -> (f64, f64) {
    let (mu0, mu1, pi) = s.true_nuisances();
    let p = pseudo_outcomes_from_predictions(&s.y, &s.a, &mu0, &mu1, &pi).unwrap();
    let v = p.diff.values();
    let per: Vec<f64> = (0..v.nrows()).map(|i| v.row(i).mean()).collect();
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let var = per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn true_nuisances_identify_the_average_effect() {
    // E[θ*(X)] = β₅·E[X₁] = 0.
    let s = generate(&dgp(20_000, 40, 8)).unwrap();
    let (mean, se) = integrated_oracle_mean(&s);
    assert!(mean.abs() <= 3.0 * se, "{mean} vs se {se}");
}

/// Across independent datasets the standardized error of the oracle mean
/// behaves like a standard normal.
#[test]
fn oracle_mean_is_calibrated_across_replicates() {
    let z: Vec<f64> = (0..200)
        .map(|seed| {
            let (m, se) = integrated_oracle_mean(&generate(&dgp(4000, 20, 1000 + seed)).unwrap());
            m / se
        })
        .collect();
    let k = z.len() as f64;
    let mean = z.iter().sum::<f64>() / k;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    assert!(mean.abs() <= 3.0 / k.sqrt(), "mean z {mean}");
    assert!((0.7..1.4).contains(&var), "var z {var}");
}

/// Many subjects sharing one covariate row: the mean oracle pseudo-outcome
/// difference must match the mean counterfactual contrast.
#[test]
fn pseudo_outcomes_are_conditionally_unbiased_at_fixed_x() {
    let cfg = dgp(1, 30, 31);
    let coef = Coefficients::draw(&cfg).unwrap();
    let noise = GpSampler::new(cfg.noise_kernel.kernel().unwrap(), coef.grid().clone()).unwrap();
    let m = 20_000;
    let xs = [
        [0.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [-1.5, 1.0, 0.5, -0.5],
        [0.5, -0.5, 1.0, 1.0],
        [2.0, 1.0, -1.0, 0.0],
    ];
    for (k, x) in xs.iter().enumerate() {
        let mu0 = coef.outcome_mean(false, x);
        let mu1 = coef.outcome_mean(true, x);
        let p = coef.propensity(x);
        let mut r = rng::stream(500 + k as u64, &[]);
        let a: Vec<bool> = (0..m).map(|_| r.random::<f64>() < p).collect();
        let eps = noise.sample(600 + k as u64, m).unwrap();
        let t = mu0.len();
        let y0 = DMatrix::from_fn(m, t, |i, s| mu0[s] + eps.values()[(i, s)]);
        let y1 = DMatrix::from_fn(m, t, |i, s| mu1[s] + eps.values()[(i, s)]);
        let y = DMatrix::from_fn(m, t, |i, s| if a[i] { y1[(i, s)] } else { y0[(i, s)] });
        let y = CurveSet::new(coef.grid().clone(), y).unwrap();
        let m0 = DMatrix::from_fn(m, t, |_, s| mu0[s]);
        let m1 = DMatrix::from_fn(m, t, |_, s| mu1[s]);
        let d = pseudo_outcomes_from_predictions(&y, &a, &m0, &m1, &vec![p; m]).unwrap();
        let contrast = col_mean_se(&(y1 - y0));
        for (s, (mean, se)) in col_mean_se(d.diff.values()).into_iter().enumerate() {
            let (c, _) = contrast[s];
            assert!(
                (mean - c).abs() <= 3.0 * se.max(1e-12),
                "x {k}, t {s}: {mean} vs {c} (se {se})"
            );
        }
    }
}

#[test]
fn nuisances_never_see_their_own_fold() {
    let s = generate(&dgp(600, 15, 2)).unwrap();
    let d = s.dataset().unwrap();
    let plan = make_plan(d.len(), 4, 1).unwrap();
    let fit = fit_fcate(&d, &LearnerSpec::default(), &plan, 3).unwrap();
    fit.model.nuisance().verify_out_of_fold(&plan).unwrap();
    for (j, f) in fit.model.nuisance().folds.iter().enumerate() {
        assert!(f.train_idx.iter().all(|&i| plan.fold_of(i) != j));
        assert_eq!(f.train_idx.len(), d.len() - plan.members(j).len());
    }
}

#[test]
fn learner_errors_name_the_fold() {
    let s = generate(&dgp(200, 10, 4)).unwrap();
    let mut x = s.x.clone();
    x.set_column(3, &x.column(2).clone_owned());
    let d = Dataset::new(x, s.a.clone(), s.y.clone()).unwrap();
    let spec = LearnerSpec {
        outcome: FosLearner::Ridge { lambda: 0.0 },
        ..LearnerSpec::default()
    };
    let err = fit_fcate(&d, &spec, &make_plan(200, 3, 0).unwrap(), 0).unwrap_err();
    assert!(matches!(err, Error::Fold { .. }), "{err}");
    assert!(err.is_numerical());
}

fn fitted(seed: u64) -> (SimTruth, FcateModel) {
    let s = generate(&dgp(800, 12, seed)).unwrap();
    let d = s.dataset().unwrap();
    let plan = make_plan(d.len(), 5, seed).unwrap();
    let m = fit_fcate(&d, &LearnerSpec::default(), &plan, seed)
        .unwrap()
        .model;
    (s, m)
}

#[test]
fn prediction_is_fold_average_and_label_free() {
    let (_, m) = fitted(5);
    let x = [0.3, -1.0, 0.5, 2.0];
    let theta = predict_theta(&m, &x).unwrap();
    let folds: Vec<Vec<f64>> = m.stage3().iter().map(|f| f.predict(&x).unwrap()).collect();
    for t in 0..theta.len() {
        let avg = folds.iter().map(|f| f[t]).sum::<f64>() / folds.len() as f64;
        assert!((theta.values()[t] - avg).abs() <= 1e-12 * (1.0 + avg.abs()));
    }
    for perm in [[4, 3, 2, 1, 0], [1, 2, 3, 4, 0], [0, 2, 1, 4, 3]] {
        let r = m.relabel_folds(&perm).unwrap();
        assert_eq!(r.predict(&x).unwrap(), theta);
    }
    // Ridge third stage is affine: the midpoint prediction is the mean of a ±δ pair.
    let delta = [0.7, -0.2, 1.1, 0.4];
    let plus: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let minus: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a - b).collect();
    let (p, q) = (m.predict(&plus).unwrap(), m.predict(&minus).unwrap());
    for t in 0..theta.len() {
        let mid = 0.5 * (p.values()[t] + q.values()[t]);
        assert!((mid - theta.values()[t]).abs() <= 1e-9 * (1.0 + mid.abs()));
    }
    assert!(m.predict(&[1.0, 2.0]).is_err());
}

#[test]
fn degenerate_and_identical_fold_models() {
    let (s, m) = fitted(6);
    let one = m.stage3()[2].clone();
    let x = [1.0, 0.0, -0.5, 0.25];
    let single = FcateModel::from_parts(
        CrossFitPlan::single(s.len()),
        LearnerSpec::default(),
        focal_core::metalearner::NuisanceFit {
            folds: vec![m.nuisance().folds[2].clone()],
        },
        vec![one.clone()],
        m.cov().clone(),
    )
    .unwrap();
    assert_eq!(
        single.predict(&x).unwrap().values(),
        one.predict(&x).unwrap().as_slice()
    );

    let same = FcateModel::from_parts(
        m.plan().clone(),
        LearnerSpec::default(),
        m.nuisance().clone(),
        vec![one.clone(); 5],
        m.cov().clone(),
    )
    .unwrap();
    let want = one.predict(&x).unwrap();
    for (a, b) in same.predict(&x).unwrap().values().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

/// With no treatment effect the learned surface should be no larger than a
/// small multiple of what the same final stage gives on oracle pseudo-outcomes.
#[test]
fn null_effect_gives_flat_surface() {
    let cfg = dgp(3000, 30, 12);
    let mut coef = Coefficients::draw(&cfg).unwrap();
    coef.betas[5] = coef.betas[5].scaled(0.0);
    let s = SimTruth::sample(coef, &cfg, 12).unwrap();
    let d = s.dataset().unwrap();
    let plan = make_plan(d.len(), 5, 1).unwrap();
    let m = fit_fcate(&d, &LearnerSpec::default(), &plan, 1)
        .unwrap()
        .model;

    let (mu0, mu1, pi) = s.true_nuisances();
    let oracle = pseudo_outcomes_from_predictions(&s.y, &s.a, &mu0, &mu1, &pi).unwrap();
    let oracle_models: Vec<_> = (0..5)
        .map(|j| {
            let idx = plan.members(j);
            FosLearner::default()
                .fit(
                    &s.x.select_rows(idx.iter()),
                    &oracle.diff.select(&idx).unwrap(),
                    FeatureMap::Identity,
                    0,
                )
                .unwrap()
        })
        .collect();
    let g = s.grid();
    let mut r = rng::stream(77, &[]);
    let (mut sup, mut oracle_sup) = (0.0_f64, 0.0_f64);
    for _ in 0..20 {
        let x: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
        sup = sup.max(g.l2_norm(m.predict(&x).unwrap().values()));
        let o: Vec<f64> = (0..g.len())
            .map(|t| {
                oracle_models
                    .iter()
                    .map(|f| f.predict(&x).unwrap()[t])
                    .sum::<f64>()
                    / 5.0
            })
            .collect();
        oracle_sup = oracle_sup.max(g.l2_norm(&o));
    }
    assert!(sup <= 3.0 * oracle_sup, "{sup} vs oracle {oracle_sup}");
}

#[test]
fn double_misspecification_is_worse_in_most_pairs() {
    use focal_core::simulate::{run_scenario, Scenario, ScenarioConfig};
    let cfg = DgpConfig {
        n: 5000,
        ..DgpConfig::default()
    };
    let run = |id| {
        let sc = ScenarioConfig {
            replications: 50,
            base_seed: 41,
            compute_bands: false,
            compute_bias: false,
            ..ScenarioConfig::new(id)
        };
        run_scenario(&sc, &cfg).unwrap().armse_values()
    };
    let (s1, s4) = (run(Scenario::BothCorrect), run(Scenario::BothMisspecified));
    let wins = s1.iter().zip(&s4).filter(|(a, b)| a < b).count();
    assert!(wins as f64 >= 0.95 * s1.len() as f64, "{wins}/{}", s1.len());
}

#[test]
fn armse_against_truth_matches_manual_average() {
    let (s, m) = fitted(9);
    let mut r = rng::stream(3, &[]);
    let x = DMatrix::from_fn(10, 4, |_, _| r.random_range(-1.0..1.0));
    let est = m.predict_many(&x).unwrap();
    let truth = s.coefficients.theta_many(&x).unwrap();
    let manual: f64 = (0..10)
        .map(|i| {
            let e = m
                .predict(&x.row(i).iter().copied().collect::<Vec<_>>())
                .unwrap();
            let t: Vec<f64> = s.coefficients.betas[5]
                .values()
                .iter()
                .map(|b| b * x[(i, 0)])
                .collect();
            s.grid().l2_distance(e.values(), &t)
        })
        .sum::<f64>()
        / 10.0;
    assert!((armse(&est, &truth).unwrap() - manual).abs() < 1e-12);
}
