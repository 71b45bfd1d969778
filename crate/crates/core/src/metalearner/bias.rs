use super::NuisanceFit;
use crate::{Error, Result};

/// Known true nuisance functions (available for simulated data only).
pub trait NuisanceOracle {
    fn propensity(&self, x: &[f64]) -> f64;
    /// `μ*⁽ᵃ⁾(x)` on the outcome grid.
    fn outcome_mean(&self, treated: bool, x: &[f64]) -> Vec<f64>;
}

/// Product-form bias curve
/// `b̂ = (π̂ − π*)(μ̂⁽¹⁾ − μ*⁽¹⁾)/π̂ + (π̂ − π*)(μ̂⁽⁰⁾ − μ*⁽⁰⁾)/(1 − π̂)`.
pub fn dr_bias_diagnostic(
    pi_hat: f64,
    pi_star: f64,
    mu1_hat: &[f64],
    mu1_star: &[f64],
    mu0_hat: &[f64],
    mu0_star: &[f64],
) -> Result<Vec<f64>> {
    let t = mu1_hat.len();
    if mu1_star.len() != t || mu0_hat.len() != t || mu0_star.len() != t {
        return Err(Error::DimensionMismatch(
            "bias curves differ in length".into(),
        ));
    }
    if !(pi_hat > 0.0 && pi_hat < 1.0) {
        return Err(Error::invalid("estimated propensity must lie in (0, 1)"));
    }
    let dp = pi_hat - pi_star;
    Ok((0..t)
        .map(|s| {
            dp * (mu1_hat[s] - mu1_star[s]) / pi_hat
                + dp * (mu0_hat[s] - mu0_star[s]) / (1.0 - pi_hat)
        })
        .collect())
}

impl NuisanceFit {
    /// Bias curve at `x`, averaged over the fold-specific nuisance fits.
    pub fn bias_at(&self, x: &[f64], truth: &dyn NuisanceOracle) -> Result<Vec<f64>> {
        let pi_star = truth.propensity(x);
        let mu1_star = truth.outcome_mean(true, x);
        let mu0_star = truth.outcome_mean(false, x);
        let mut acc = vec![0.0; mu1_star.len()];
        for (j, f) in self.folds.iter().enumerate() {
            let b = dr_bias_diagnostic(
                f.pi.predict(x).map_err(|e| e.in_fold(j))?,
                pi_star,
                &f.mu1.predict(x).map_err(|e| e.in_fold(j))?,
                &mu1_star,
                &f.mu0.predict(x).map_err(|e| e.in_fold(j))?,
                &mu0_star,
            )?;
            acc.iter_mut().zip(b).for_each(|(a, v)| *a += v);
        }
        let j = self.folds.len() as f64;
        Ok(acc.into_iter().map(|v| v / j).collect())
    }
}
