use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_dim, FeatureMap, Standardizer};
use crate::{Error, Result};

const MAX_ITER: usize = 100;
const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropensityConfig {
    /// Ridge penalty on the standardised slopes; the intercept is free.
    #[serde(default)]
    pub ridge: f64,
    /// Predictions are clipped to `[clip, 1 - clip]`.
    #[serde(default = "default_clip")]
    pub clip: f64,
}

fn default_clip() -> f64 {
    0.01
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            ridge: 0.0,
            clip: default_clip(),
        }
    }
}

/// Logistic propensity model `P(A = 1 | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// Intercept first, then one weight per feature, on the feature scale.
    pub weights: Vec<f64>,
    pub clip: f64,
    pub ridge: f64,
    pub features: FeatureMap,
    input_dim: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Ridge-penalised logistic regression on the raw covariates.
pub fn fit_propensity(
    x: &DMatrix<f64>,
    a: &[bool],
    ridge: f64,
    clip: f64,
) -> Result<PropensityModel> {
    PropensityModel::fit(
        x,
        a,
        &PropensityConfig { ridge, clip },
        FeatureMap::Identity,
    )
}

impl PropensityModel {
    /// Newton/IRLS on standardised features until the gradient norm of the
    /// mean penalised log-likelihood is ≤ 1e-8 or 100 iterations pass.
    pub fn fit(
        x: &DMatrix<f64>,
        a: &[bool],
        cfg: &PropensityConfig,
        features: FeatureMap,
    ) -> Result<Self> {
        let n = x.nrows();
        if a.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} treatment labels for {n} covariate rows",
                a.len()
            )));
        }
        if !(cfg.clip > 0.0 && cfg.clip < 0.5) {
            return Err(Error::invalid("propensity clip must lie in (0, 0.5)"));
        }
        if !(cfg.ridge >= 0.0) {
            return Err(Error::invalid("propensity ridge must be non-negative"));
        }
        let treated = a.iter().filter(|&&v| v).count();
        if treated == 0 || treated == n {
            return Err(Error::invalid("both treatment arms required"));
        }
        let f = features.apply(x)?;
        let p = f.ncols();
        if n <= p {
            return Err(Error::invalid(format!(
                "need more rows ({n}) than features ({p})"
            )));
        }
        let std = Standardizer::fit(&f);
        let zf = std.apply(&f);
        let mut design = DMatrix::from_element(n, p + 1, 1.0);
        design.view_mut((0, 1), (n, p)).copy_from(&zf);
        let y = DVector::from_iterator(n, a.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        let nf = n as f64;
        let lam = cfg.ridge;

        let objective = |w: &DVector<f64>| -> f64 {
            let eta = &design * w;
            let ll: f64 = eta
                .iter()
                .zip(y.iter())
                .map(|(&e, &yi)| {
                    // log(1 + e^η) computed stably
                    let sp = if e > 0.0 {
                        e + (-e).exp().ln_1p()
                    } else {
                        e.exp().ln_1p()
                    };
                    yi * e - sp
                })
                .sum();
            let pen: f64 = w.iter().skip(1).map(|v| v * v).sum();
            -ll / nf + 0.5 * lam * pen / nf
        };

        let prior = treated as f64 / nf;
        let mut w = DVector::zeros(p + 1);
        w[0] = (prior / (1.0 - prior)).ln();
        let mut obj = objective(&w);
        let mut converged = false;
        for _ in 0..MAX_ITER {
            let eta = &design * &w;
            let mu = eta.map(sigmoid);
            let mut grad = design.transpose() * (&mu - &y);
            for j in 1..=p {
                grad[j] += lam * w[j];
            }
            grad /= nf;
            if grad.norm() <= GRAD_TOL {
                converged = true;
                break;
            }
            let wts = mu.map(|m| (m * (1.0 - m)).max(1e-12));
            let mut weighted = design.clone();
            for (mut row, w) in weighted.row_iter_mut().zip(wts.iter()) {
                row *= *w;
            }
            let mut hess = design.transpose() * weighted;
            for j in 1..=p {
                hess[(j, j)] += lam;
            }
            hess /= nf;
            let step = hess
                .cholesky()
                .ok_or_else(|| Error::NonConvergence("singular IRLS system".into()))?
                .solve(&grad);
            let mut t = 1.0;
            loop {
                let cand = &w - &step * t;
                let c_obj = objective(&cand);
                if c_obj <= obj + 1e-14 * obj.abs() || t < 1e-10 {
                    w = cand;
                    obj = c_obj;
                    break;
                }
                t *= 0.5;
            }
        }
        let max_w = w.iter().skip(1).fold(0.0_f64, |m, v| m.max(v.abs()));
        if lam == 0.0 && (max_w > 30.0 || !converged) {
            return Err(Error::NonConvergence(
                "logistic fit diverges (classes look separable); set a positive propensity ridge"
                    .into(),
            ));
        }
        if !converged {
            log::warn!("propensity IRLS stopped at the iteration cap");
        }

        let mut weights = vec![0.0; p + 1];
        weights[0] = w[0];
        for j in 0..p {
            weights[j + 1] = w[j + 1] / std.scale[j];
            weights[0] -= w[j + 1] * std.mean[j] / std.scale[j];
        }
        Ok(Self {
            weights,
            clip: cfg.clip,
            ridge: cfg.ridge,
            features,
            input_dim: x.ncols(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Linear predictor on the feature scale.
    pub fn linear(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        let f = self.features.apply_row(x)?;
        Ok(self.weights[0]
            + f.iter()
                .zip(&self.weights[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>())
    }

    /// Clipped probability of treatment.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.linear(x)?).clamp(self.clip, 1.0 - self.clip))
    }

    pub fn predict_many(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        (0..x.nrows())
            .map(|i| self.predict(&x.row(i).iter().copied().collect::<Vec<_>>()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_x(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[0]);
        DMatrix::from_fn(n, p, |_, _| r.sample(StandardNormal))
    }

    #[test]
    fn permuted_labels_give_flat_fit() {
        let n = 2000;
        let x = gaussian_x(n, 4, 1);
        let mut r = rng::stream(1, &[1]);
        let mut a: Vec<bool> = (0..n).map(|i| i < 700).collect();
        a.shuffle(&mut r);
        let m = fit_propensity(&x, &a, 0.0, 0.01).unwrap();
        for w in &m.weights[1..] {
            assert!(w.abs() < 0.1, "slope {w}");
        }
        let logit = (0.35f64 / 0.65).ln();
        assert!((m.weights[0] - logit).abs() < 0.1);
    }

    #[test]
    fn recovers_generating_weights() {
        let n = 50_000;
        let x = gaussian_x(n, 4, 2);
        let eta = [-1.0, 0.5, -0.25, -0.1];
        let mut r = rng::stream(2, &[1]);
        let a: Vec<bool> = (0..n)
            .map(|i| {
                let z: f64 = (0..4).map(|j| eta[j] * x[(i, j)]).sum();
                r.random::<f64>() < sigmoid(z)
            })
            .collect();
        let m = fit_propensity(&x, &a, 0.0, 0.01).unwrap();
        let truth = [0.0, -1.0, 0.5, -0.25, -0.1];
        for (w, t) in m.weights.iter().zip(truth) {
            assert!((w - t).abs() < 0.05, "{w} vs {t}");
        }
    }

    #[test]
    fn predictions_are_clipped() {
        let x = gaussian_x(300, 2, 3);
        let a: Vec<bool> = (0..300)
            .map(|i| x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0)
            .collect();
        let m = fit_propensity(&x, &a, 1.0, 0.05).unwrap();
        for v in [-100.0, -3.0, 0.0, 3.0, 100.0] {
            let p = m.predict(&[v, -v]).unwrap();
            assert!((0.05..=0.95).contains(&p));
        }
    }

    #[test]
    fn separation_without_ridge_is_an_error() {
        let x = gaussian_x(200, 2, 4);
        let a: Vec<bool> = (0..200).map(|i| x[(i, 0)] > 0.0).collect();
        let err = fit_propensity(&x, &a, 0.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::NonConvergence(_)));
        assert!(err.to_string().contains("ridge"));
        assert!(fit_propensity(&x, &a, 1.0, 0.01).is_ok());
    }

    #[test]
    fn single_arm_rejected() {
        let x = gaussian_x(50, 2, 5);
        assert!(fit_propensity(&x, &[true; 50], 0.0, 0.01).is_err());
    }

    #[test]
    fn column_reordering_is_exact_equivariance() {
        let n = 500;
        let x = gaussian_x(n, 3, 6);
        let mut r = rng::stream(6, &[1]);
        let a: Vec<bool> = (0..n)
            .map(|i| r.random::<f64>() < sigmoid(x[(i, 0)] - 0.5 * x[(i, 2)]))
            .collect();
        let perm = [2usize, 0, 1];
        let xp = DMatrix::from_fn(n, 3, |i, j| x[(i, perm[j])]);
        let m = fit_propensity(&x, &a, 0.5, 0.01).unwrap();
        let mp = fit_propensity(&xp, &a, 0.5, 0.01).unwrap();
        for j in 0..3 {
            assert!((mp.weights[j + 1] - m.weights[perm[j] + 1]).abs() < 1e-10);
        }
        for i in 0..20 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let rowp: Vec<f64> = perm.iter().map(|&k| row[k]).collect();
            assert!((m.predict(&row).unwrap() - mp.predict(&rowp).unwrap()).abs() < 1e-12);
        }
    }
}
