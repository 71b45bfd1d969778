//! Curve CSV format.
//!
//! The header row is `id,t_0,...,t_{T-1}` where each `t_k` is a grid abscissa
//! in `[0, 1]`. Each following row holds one subject: its identifier and its
//! `T` values. An empty cell is a missing value.

use std::io::{Read, Write};

use nalgebra::DMatrix;

use super::{default_lambda_grid, smooth_gcv_partial, BSplineBasis, CurveSet, Grid};
use crate::{Error, Result};

/// Curves as read from disk, possibly with gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub grid: Grid,
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl CurveTable {
    pub fn has_missing(&self) -> bool {
        self.values.iter().flatten().any(Option::is_none)
    }

    /// Complete curves only; any gap is an error.
    pub fn to_curve_set(&self) -> Result<CurveSet> {
        let n = self.values.len();
        let t = self.grid.len();
        let mut m = DMatrix::zeros(n, t);
        for (i, row) in self.values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = v.ok_or_else(|| {
                    Error::Csv(format!(
                        "subject {} has a missing value at column {j}",
                        self.ids[i]
                    ))
                })?;
            }
        }
        CurveSet::new(self.grid.clone(), m)
    }

    /// Fill gaps by per-subject cubic smoothing with GCV, evaluated back on
    /// the table grid. Complete rows are kept verbatim.
    pub fn impute(&self) -> Result<CurveSet> {
        let pts = self.grid.points();
        let lambdas = default_lambda_grid();
        let n = self.values.len();
        let mut m = DMatrix::zeros(n, self.grid.len());
        for (i, row) in self.values.iter().enumerate() {
            if row.iter().all(Option::is_some) {
                for (j, v) in row.iter().enumerate() {
                    m[(i, j)] = v.unwrap();
                }
                continue;
            }
            let observed: Vec<f64> = pts
                .iter()
                .zip(row)
                .filter(|(_, v)| v.is_some())
                .map(|(t, _)| *t)
                .collect();
            let basis = basis_for(&observed, pts[0], pts[pts.len() - 1])
                .map_err(|e| Error::Csv(format!("subject {}: {e}", self.ids[i])))?;
            let fit = smooth_gcv_partial(&self.grid, row, &basis, &lambdas)
                .map_err(|e| Error::Csv(format!("subject {}: {e}", self.ids[i])))?;
            for (j, &t) in pts.iter().enumerate() {
                m[(i, j)] = fit.eval(t);
            }
        }
        CurveSet::new(self.grid.clone(), m)
    }
}

// Cubic basis with knots at the observed times, widened to the full span.
fn basis_for(observed: &[f64], lo: f64, hi: f64) -> Result<BSplineBasis> {
    if observed.len() < 2 {
        return Err(Error::invalid("fewer than two observed values"));
    }
    let interior: Vec<f64> = observed
        .iter()
        .copied()
        .filter(|&t| t > lo && t < hi)
        .collect();
    // Keep K ≤ #observed: drop interior knots until the basis is determined.
    let mut knots = interior;
    while knots.len() + 4 > observed.len() && !knots.is_empty() {
        let mid = knots.len() / 2;
        knots.remove(mid);
    }
    let degree = if observed.len() >= 4 {
        3
    } else {
        observed.len() - 1
    };
    BSplineBasis::new(degree, &knots, lo, hi)
}

pub fn read<R: Read>(reader: R) -> Result<CurveTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    if header.get(0) != Some("id") {
        return Err(Error::Csv("first header cell must be `id`".into()));
    }
    let points = header
        .iter()
        .skip(1)
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Csv(format!("header cell `{s}` is not a grid abscissa")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let grid = Grid::new(points).map_err(|e| Error::Csv(format!("header grid: {e}")))?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if rec.len() != grid.len() + 1 {
            return Err(Error::Csv(format!(
                "row {} has {} cells, expected {}",
                line + 2,
                rec.len(),
                grid.len() + 1
            )));
        }
        ids.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(Some)
                        .ok_or_else(|| Error::Csv(format!("row {}: bad value `{s}`", line + 2)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        values.push(row);
    }
    if ids.is_empty() {
        return Err(Error::Csv("no curves in file".into()));
    }
    Ok(CurveTable { grid, ids, values })
}

pub fn write<W: Write>(writer: W, ids: &[String], curves: &CurveSet) -> Result<()> {
    if ids.len() != curves.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ids for {} curves",
            ids.len(),
            curves.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(curves.grid().points().iter().map(|t| format!("{t}")));
    w.write_record(&header)
        .map_err(|e| Error::Csv(e.to_string()))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(curves.values().row(i).iter().map(|v| format!("{v}")));
        w.write_record(&row)
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
