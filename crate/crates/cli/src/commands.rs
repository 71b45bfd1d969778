use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use focal_core::funcdata::csv as curve_csv;
use focal_core::metalearner::{
    confidence_band, fate_band, fit_fcate, make_plan, surface_rows, ConfidenceBand, Dataset,
    FcateModel,
};
use focal_core::rng;
use focal_core::simulate::{run_scenario_resume, McReport, McRow, Scenario};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::{hash_hex, BandsConfig, FitConfig, RunConfig, SimulateConfig};
use crate::error::CliError;
use crate::output::{num, opt, Bundle, NdjsonSink};
use crate::svg;

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| {
        CliError::config(format!("config has no `{name}` section"), vec![name.into()])
    })
}

// ---------------------------------------------------------------- simulate

const ROWS: &str = "rows.ndjson";
const RESUME: &str = "resume.json";

#[derive(Serialize, Deserialize, PartialEq)]
struct ResumeKey {
    key: String,
}

/// Hash of everything that determines a row, i.e. the config minus the
/// scenario selection.
fn resume_key(sim: &SimulateConfig) -> String {
    let mut s = sim.clone();
    s.scenarios.clear();
    hash_hex(
        serde_json::to_string(&s)
            .expect("config serializes")
            .as_bytes(),
    )
}

fn read_rows(path: &Path) -> Result<Vec<McRow>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => rows.push(r),
            // A torn final line from an interrupted run is dropped.
            Err(e) if i + 1 == text.lines().count() => log::warn!("ignoring partial row: {e}"),
            Err(e) => return Err(CliError::data(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(rows)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sim = section(&cfg.simulate, "simulate")?;
    let mut bundle = Bundle::create(out)?;
    let key = ResumeKey {
        key: resume_key(sim),
    };
    let rows_path = bundle.path(ROWS);
    let resume_path = bundle.path(RESUME);
    let mut done = Vec::new();
    if rows_path.exists() {
        let previous: Option<ResumeKey> = fs::read_to_string(&resume_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        match previous {
            Some(p) if p == key => done = read_rows(&rows_path)?,
            Some(_) => {
                return Err(CliError::config(
                    format!(
                        "{} holds rows from a different configuration",
                        out.display()
                    ),
                    vec!["simulate".into()],
                ))
            }
            None => {}
        }
    }
    if done.is_empty() {
        fs::write(&rows_path, "")?;
    }
    fs::write(&resume_path, serde_json::to_string(&key)?)?;

    let sink = NdjsonSink::append(&rows_path)?;
    let mut reports = Vec::new();
    for &id in &sim.scenarios {
        let sc = sim.scenario(id);
        log::info!("scenario {id}: {} replications", sc.replications);
        reports.push(run_scenario_resume(&sc, &sim.dgp, &done, &|r| {
            sink.push(r)
        })?);
    }
    drop(sink);

    let all: Vec<&McRow> = reports.iter().flat_map(|r| &r.rows).collect();
    let mut text = String::new();
    for r in all {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    bundle.write(ROWS, &text)?;
    write_summaries(&mut bundle, &reports)?;

    let mut seeds = BTreeMap::new();
    seeds.insert("base_seed".into(), sim.base_seed);
    if let Some(f) = sim.dgp.freeze_coefficients {
        seeds.insert("freeze_coefficients".into(), f);
    }
    bundle.finish("simulate", cfg, seeds)
}

fn write_summaries(bundle: &mut Bundle, reports: &[McReport]) -> Result<(), CliError> {
    let header = [
        "scenario",
        "replications",
        "failures",
        "armse_mean",
        "armse_q1",
        "armse_median",
        "armse_q3",
        "fate_sup_error_median",
        "bias_norm_median",
        "band_coverage",
        "pointwise_coverage",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let s = &r.summary;
            vec![
                s.scenario.to_string(),
                s.replications.to_string(),
                s.failures.to_string(),
                opt(s.armse.map(|a| a.mean)),
                opt(s.armse.map(|a| a.q1)),
                opt(s.armse.map(|a| a.median)),
                opt(s.armse.map(|a| a.q3)),
                opt(s.fate_sup_error.map(|a| a.median)),
                opt(s.bias_norm.map(|a| a.median)),
                opt(s.band_coverage),
                opt(s.pointwise_coverage),
            ]
        })
        .collect();
    bundle.write_csv("summary.csv", &header, &rows)?;

    let box_rows: Vec<Vec<String>> = reports
        .iter()
        .flat_map(|r| r.rows.iter())
        .map(|r| {
            vec![
                r.scenario.to_string(),
                r.replication.to_string(),
                opt(r.armse),
            ]
        })
        .collect();
    bundle.write_csv(
        "armse_boxplot.csv",
        &["scenario", "replication", "armse"],
        &box_rows,
    )?;

    let groups: Vec<(String, [f64; 5])> = reports
        .iter()
        .filter_map(|r| {
            let v = r.armse_values();
            let s = r.summary.armse?;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((
                format!("scenario {}", r.scenario()),
                [lo, s.q1, s.median, s.q3, hi],
            ))
        })
        .collect();
    bundle.write(
        "armse_boxplot.svg",
        &svg::boxplot("ARMSE by scenario", &groups),
    )
}

// ------------------------------------------------------------------ report

pub fn report(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let rep = section(&cfg.report, "report")?;
    let rows = read_rows(&rep.rows)?;
    let mut by: BTreeMap<Scenario, Vec<McRow>> = BTreeMap::new();
    for r in rows {
        by.entry(r.scenario).or_default().push(r);
    }
    let reports: Vec<McReport> = by
        .into_iter()
        .map(|(s, mut rows)| {
            rows.sort_by_key(|r| r.replication);
            McReport::from_rows(s, rows)
        })
        .collect();
    if reports.is_empty() {
        return Err(CliError::data(format!(
            "{} contains no rows",
            rep.rows.display()
        )));
    }
    let mut bundle = Bundle::create(out)?;
    write_summaries(&mut bundle, &reports)?;
    bundle.finish("report", cfg, BTreeMap::new())
}

// --------------------------------------------------------------------- fit

/// What `fit` writes as `model.json` and `bands` reads back.
#[derive(Serialize, Deserialize)]
pub struct ModelDump {
    pub schema_version: u32,
    pub covariates: Vec<String>,
    pub model: FcateModel,
}

struct Covariates {
    names: Vec<String>,
    ids: Vec<String>,
    x: DMatrix<f64>,
    a: Vec<bool>,
}

fn read_covariates(path: &Path, id_col: &str, treat_col: &str) -> Result<Covariates, CliError> {
    let ctx = |m: String| CliError::data(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ctx(format!("missing column `{name}`")))
    };
    let id_idx = find(id_col)?;
    let a_idx = find(treat_col)?;
    let cov_idx: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_idx && i != a_idx)
        .collect();
    if cov_idx.is_empty() {
        return Err(ctx("no covariate columns".into()));
    }
    let names = cov_idx.iter().map(|&i| headers[i].to_string()).collect();
    let (mut ids, mut vals, mut a) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = line + 2;
        ids.push(rec[id_idx].to_string());
        a.push(match rec[a_idx].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(ctx(format!(
                    "row {row}: treatment must be 0 or 1, got `{other}`"
                )))
            }
        });
        for &i in &cov_idx {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| ctx(format!("row {row}: `{}` is not a number", &rec[i])))?;
            if !v.is_finite() {
                return Err(ctx(format!("row {row}: non-finite covariate")));
            }
            vals.push(v);
        }
    }
    let x = DMatrix::from_row_slice(ids.len(), cov_idx.len(), &vals);
    Ok(Covariates { names, ids, x, a })
}

fn load_dataset(f: &FitConfig) -> Result<(Covariates, Dataset), CliError> {
    let cov = read_covariates(&f.covariates, &f.id_column, &f.treatment_column)?;
    let table = curve_csv::read(fs::File::open(&f.curves)?)?;
    let curves = if table.has_missing() {
        log::info!("imputing missing curve values");
        table.impute()?
    } else {
        table.to_curve_set()?
    };
    let mut pos: HashMap<&str, usize> = HashMap::new();
    for (i, id) in table.ids.iter().enumerate() {
        if pos.insert(id.as_str(), i).is_some() {
            return Err(CliError::data(format!("duplicate id `{id}` in curve file")));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut order = Vec::with_capacity(cov.ids.len());
    for id in &cov.ids {
        if !seen.insert(id.as_str()) {
            return Err(CliError::data(format!(
                "duplicate id `{id}` in covariate file"
            )));
        }
        order.push(
            *pos.get(id.as_str())
                .ok_or_else(|| CliError::data(format!("id `{id}` has covariates but no curve")))?,
        );
    }
    if order.len() != table.ids.len() {
        let extra = table
            .ids
            .iter()
            .find(|id| !seen.contains(id.as_str()))
            .expect("some id unmatched");
        return Err(CliError::data(format!(
            "id `{extra}` has a curve but no covariates"
        )));
    }
    let y = curves.select(&order)?;
    let d = Dataset::new(cov.x.clone(), cov.a.clone(), y)?;
    Ok((cov, d))
}

fn band_rows(b: &ConfidenceBand) -> Vec<Vec<String>> {
    let t = b.center.grid().points();
    (0..t.len())
        .map(|s| {
            vec![
                num(t[s]),
                num(b.center.values()[s]),
                num(b.lower.values()[s]),
                num(b.upper.values()[s]),
            ]
        })
        .collect()
}

pub fn fit(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let f = section(&cfg.fit, "fit")?;
    let (cov, d) = load_dataset(f)?;
    let plan = make_plan(
        d.len(),
        f.folds,
        rng::derive_seed(f.seed, &[rng::tag::FOLDS]),
    )?;
    let fitted = fit_fcate(&d, &f.learners, &plan, f.seed)?;
    let mut bundle = Bundle::create(out)?;

    let band = fate_band(
        &fitted.pseudo,
        f.fate_trim,
        f.bands.alpha,
        f.bands.draws,
        f.bands.mode,
        rng::derive_seed(f.seed, &[rng::tag::BOOTSTRAP]),
    )?;
    let t = d.y().grid().points().to_vec();
    bundle.write_csv(
        "fate.csv",
        &["t", "estimate", "lower", "upper"],
        &band_rows(&band),
    )?;
    bundle.write(
        "fate.svg",
        &svg::band_plot(
            &format!("FATE with {:.0}% {:?} band", 100.0 * band.level, band.mode).to_lowercase(),
            &t,
            band.center.values(),
            band.lower.values(),
            band.upper.values(),
        ),
    )?;

    let column = match &f.surface.covariate {
        Some(name) => cov.names.iter().position(|n| n == name).ok_or_else(|| {
            CliError::config(
                format!("unknown surface covariate `{name}`"),
                vec!["fit.surface.covariate".into()],
            )
        })?,
        None => 0,
    };
    let surf = surface_rows(d.x(), column, f.surface.points)?;
    let pred = fitted.model.predict_many(&surf.rows)?;
    let mut rows = Vec::new();
    for (r, v) in surf.values.iter().enumerate() {
        for (s, tt) in t.iter().enumerate() {
            rows.push(vec![num(*v), num(*tt), num(pred.values()[(r, s)])]);
        }
    }
    let name = &cov.names[column];
    bundle.write_csv("surface.csv", &[name.as_str(), "t", "theta"], &rows)?;
    let z: Vec<Vec<f64>> = (0..pred.len()).map(|r| pred.row(r)).collect();
    bundle.write(
        "surface.svg",
        &svg::heatmap(
            &format!("estimated effect by {name}"),
            &t,
            &surf.values,
            &z,
            "t",
            name,
        ),
    )?;

    let dump = ModelDump {
        schema_version: crate::config::SCHEMA_VERSION,
        covariates: cov.names.clone(),
        model: fitted.model,
    };
    bundle.write("model.json", &serde_json::to_string(&dump)?)?;

    let treated = d.a().iter().filter(|&&a| a).count();
    let grid = d.y().grid();
    let half: Vec<f64> = band.half_widths();
    let summary = vec![vec![
        d.len().to_string(),
        treated.to_string(),
        f.folds.to_string(),
        num(grid.l2_norm(band.center.values())),
        num(band.center.sup_norm()),
        format!("{:?}", band.mode).to_lowercase(),
        num(half.iter().sum::<f64>() / half.len() as f64),
    ]];
    bundle.write_csv(
        "summary.csv",
        &[
            "n",
            "treated",
            "folds",
            "fate_l2_norm",
            "fate_sup_norm",
            "band_mode",
            "band_mean_half_width",
        ],
        &summary,
    )?;

    let mut seeds = BTreeMap::new();
    seeds.insert("seed".into(), f.seed);
    bundle.finish("fit", cfg, seeds)
}

// ------------------------------------------------------------------- bands

pub fn load_model(path: &Path) -> Result<ModelDump, CliError> {
    let text = fs::read_to_string(path)?;
    let dump: ModelDump = serde_json::from_str(&text)
        .map_err(|e| CliError::data(format!("{}: not a model dump: {e}", path.display())))?;
    Ok(dump)
}

pub fn bands(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let b: &BandsConfig = section(&cfg.bands, "bands")?;
    let dump = load_model(&b.model)?;
    if b.x.len() != dump.covariates.len() {
        return Err(CliError::data(format!(
            "x has {} values but the model expects {} ({})",
            b.x.len(),
            dump.covariates.len(),
            dump.covariates.join(", ")
        )));
    }
    let band = confidence_band(&dump.model, &b.x, &b.options(), b.seed)?;
    let mut bundle = Bundle::create(out)?;
    bundle.write_csv(
        "band.csv",
        &["t", "estimate", "lower", "upper"],
        &band_rows(&band),
    )?;
    bundle.write(
        "band.svg",
        &svg::band_plot(
            &format!(
                "effect at x with {:.0}% {:?} band",
                100.0 * band.level,
                band.mode
            )
            .to_lowercase(),
            band.center.grid().points(),
            band.center.values(),
            band.lower.values(),
            band.upper.values(),
        ),
    )?;
    let mut seeds = BTreeMap::new();
    seeds.insert("seed".into(), b.seed);
    bundle.finish("bands", cfg, seeds)
}
