use nalgebra::DMatrix;

use super::bands::{bootstrap_band, BandMode, ConfidenceBand};
use super::PseudoOutcomes;
use crate::funcdata::{Curve, CurveSet};
use crate::learners::CovEstimate;
use crate::{Error, Result};

/// Trimmed FATE with pointwise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct FateEstimate {
    pub mean: Curve,
    /// Pointwise standard error of the mean, `sd / √kept`.
    pub se: Vec<f64>,
    pub kept: Vec<usize>,
}

fn kept_rows(diff: &CurveSet, trim_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..0.5).contains(&trim_fraction) {
        return Err(Error::invalid("trim fraction must lie in [0, 0.5)"));
    }
    let n = diff.len();
    let drop = (trim_fraction * n as f64).ceil() as usize;
    if drop == 0 {
        return Ok((0..n).collect());
    }
    let norms = diff.norms();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = order[drop.min(n - 1)..].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// Pointwise mean of the difference curves after dropping the
/// `⌈trim_fraction·n⌉` curves with the largest L² norm.
pub fn fate(p: &PseudoOutcomes, trim_fraction: f64) -> Result<Curve> {
    fate_summary(p, trim_fraction).map(|f| f.mean)
}

pub fn fate_summary(p: &PseudoOutcomes, trim_fraction: f64) -> Result<FateEstimate> {
    let kept = kept_rows(&p.diff, trim_fraction)?;
    let v = p.diff.values();
    let t = v.ncols();
    let k = kept.len() as f64;
    let mut mean = vec![0.0; t];
    for &i in &kept {
        for (s, m) in mean.iter_mut().enumerate() {
            *m += v[(i, s)];
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let se = (0..t)
        .map(|s| {
            if kept.len() < 2 {
                return 0.0;
            }
            let ss: f64 = kept.iter().map(|&i| (v[(i, s)] - mean[s]).powi(2)).sum();
            (ss / (k - 1.0) / k).sqrt()
        })
        .collect();
    Ok(FateEstimate {
        mean: Curve::new(p.diff.grid().clone(), mean)?,
        se,
        kept,
    })
}

/// Bootstrap band for the FATE using the sample covariance of the kept
/// difference curves and `n_eff` = number of kept curves.
pub fn fate_band(
    p: &PseudoOutcomes,
    trim_fraction: f64,
    alpha: f64,
    draws: usize,
    mode: BandMode,
    seed: u64,
) -> Result<ConfidenceBand> {
    let est = fate_summary(p, trim_fraction)?;
    let v = p.diff.values();
    let t = v.ncols();
    let k = est.kept.len();
    let mut centered = DMatrix::zeros(k, t);
    for (r, &i) in est.kept.iter().enumerate() {
        for s in 0..t {
            centered[(r, s)] = v[(i, s)] - est.mean.values()[s];
        }
    }
    let denom = (k.max(2) - 1) as f64;
    let cov = CovEstimate::from_matrix(centered.transpose() * &centered / denom);
    bootstrap_band(&est.mean, &cov, k as f64, alpha, draws, mode, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcdata::Grid;

    fn pseudo(diff: DMatrix<f64>) -> PseudoOutcomes {
        let g = Grid::uniform(diff.ncols()).unwrap();
        let d = CurveSet::new(g.clone(), diff.clone()).unwrap();
        let z = CurveSet::new(g, DMatrix::zeros(diff.nrows(), diff.ncols())).unwrap();
        PseudoOutcomes {
            gamma1: d.clone(),
            gamma0: z,
            diff: d,
        }
    }

    #[test]
    fn identical_curves() {
        let p = pseudo(DMatrix::from_fn(30, 6, |_, t| (t as f64).cos()));
        for trim in [0.0, 0.01, 0.2, 0.49] {
            let f = fate(&p, trim).unwrap();
            for (s, v) in f.values().iter().enumerate() {
                assert!((v - (s as f64).cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn outlier_trimmed() {
        let p = pseudo(DMatrix::from_fn(
            100,
            5,
            |i, _| if i == 42 { 1000.0 } else { 0.0 },
        ));
        let f = fate(&p, 0.01).unwrap();
        assert!(f.values().iter().all(|&v| v == 0.0));
        let untrimmed = fate(&p, 0.0).unwrap();
        assert!(untrimmed.values().iter().all(|&v| (v - 10.0).abs() < 1e-12));
    }

    #[test]
    fn no_trim_is_column_mean() {
        let m = DMatrix::from_fn(17, 4, |i, t| ((i * 7 + t * 3) % 11) as f64 - 0.5);
        let p = pseudo(m.clone());
        let f = fate(&p, 0.0).unwrap();
        let col = p.diff.mean();
        assert_eq!(f.values(), col.values());
    }

    #[test]
    fn rejects_bad_trim() {
        let p = pseudo(DMatrix::zeros(4, 3));
        assert!(fate(&p, 0.5).is_err());
        assert!(fate(&p, -0.1).is_err());
    }
}
