use std::path::{Path, PathBuf};

use focal_core::metalearner::{BandMode, BandOptions, LearnerSpec};
use focal_core::simulate::{DgpConfig, Scenario, ScenarioConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<BandsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_eval_points")]
    pub eval_points: usize,
    #[serde(default)]
    pub learners: LearnerSpec,
    #[serde(default = "default_probes")]
    pub probes: Vec<[f64; 4]>,
    #[serde(default)]
    pub bands: BandOptions,
    #[serde(default = "default_trim")]
    pub fate_trim: f64,
    #[serde(default = "yes")]
    pub compute_bands: bool,
    #[serde(default = "yes")]
    pub compute_bias: bool,
}

fn all_scenarios() -> Vec<Scenario> {
    Scenario::ALL.to_vec()
}
fn default_replications() -> usize {
    50
}
fn default_folds() -> usize {
    5
}
fn default_eval_points() -> usize {
    100
}
fn default_probes() -> Vec<[f64; 4]> {
    ScenarioConfig::new(Scenario::BothCorrect).probes
}
fn default_trim() -> f64 {
    0.01
}
fn yes() -> bool {
    true
}

impl SimulateConfig {
    pub fn scenario(&self, id: Scenario) -> ScenarioConfig {
        ScenarioConfig {
            id,
            learners: self.learners.clone(),
            folds: self.folds,
            replications: self.replications,
            base_seed: self.base_seed,
            eval_points: self.eval_points,
            probes: self.probes.clone(),
            bands: self.bands,
            fate_trim: self.fate_trim,
            compute_bands: self.compute_bands,
            compute_bias: self.compute_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub covariates: PathBuf,
    pub curves: PathBuf,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default = "default_treatment_column")]
    pub treatment_column: String,
    #[serde(default)]
    pub learners: LearnerSpec,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trim")]
    pub fate_trim: f64,
    #[serde(default)]
    pub bands: BandOptions,
    #[serde(default)]
    pub surface: SurfaceConfig,
}

fn default_id_column() -> String {
    "id".into()
}
fn default_treatment_column() -> String {
    "treatment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    /// Covariate to vary; the first one if unset.
    #[serde(default)]
    pub covariate: Option<String>,
    #[serde(default = "default_surface_points")]
    pub points: usize,
}

fn default_surface_points() -> usize {
    50
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            covariate: None,
            points: default_surface_points(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    pub model: PathBuf,
    pub x: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub mode: BandMode,
    #[serde(default)]
    pub n_eff: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    BandOptions::default().alpha
}
fn default_draws() -> usize {
    BandOptions::default().draws
}

impl BandsConfig {
    pub fn options(&self) -> BandOptions {
        BandOptions {
            alpha: self.alpha,
            draws: self.draws,
            mode: self.mode,
            n_eff: self.n_eff,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub rows: PathBuf,
}

fn compiled_schema() -> jsonschema::Validator {
    let schema: serde_json::Value =
        serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    jsonschema::validator_for(&schema).expect("bundled schema compiles")
}

impl RunConfig {
    /// Parse and validate: the published schema first, then the typed model.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("malformed JSON: {e}"), vec![]))?;
        let errors: Vec<(String, String)> = compiled_schema()
            .iter_errors(&value)
            .map(|e| (location(&e.instance_path().to_string()), e.to_string()))
            .collect();
        if !errors.is_empty() {
            let message = errors
                .iter()
                .map(|(p, m)| format!("{p}: {m}"))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(CliError::config(
                message,
                errors.into_iter().map(|(p, _)| p).collect(),
            ));
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(&value).map_err(|e| {
            let path = location_from_serde(&e.path().to_string());
            CliError::config(format!("{path}: {}", e.inner()), vec![path])
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::config(
                format!("unsupported schema_version {}", cfg.schema_version),
                vec!["schema_version".into()],
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read {}: {e}", path.display()), vec![])
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(f) = &mut self.fit {
            fix(&mut f.covariates);
            fix(&mut f.curves);
        }
        if let Some(b) = &mut self.bands {
            fix(&mut b.model);
        }
        if let Some(r) = &mut self.report {
            fix(&mut r.rows);
        }
    }

    /// Sorted-key JSON of the fully defaulted config.
    pub fn canonical(&self) -> String {
        let value = sort_keys(serde_json::to_value(self).expect("config serializes"));
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hash_hex(self.canonical().as_bytes())
    }
}

fn sort_keys(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let sorted: std::collections::BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn hash_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn location(pointer: &str) -> String {
    if pointer.is_empty() {
        "(root)".into()
    } else {
        pointer.trim_start_matches('/').replace('/', ".")
    }
}

fn location_from_serde(path: &str) -> String {
    if path == "." || path.is_empty() {
        "(root)".into()
    } else {
        path.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_json(r#"{"schema_version": 1, "simulate": {}}"#).unwrap();
        let s = c.simulate.unwrap();
        assert_eq!(s.scenarios.len(), 4);
        assert_eq!(s.dgp.grid_size, 100);
        assert_eq!(s.folds, 5);
    }

    #[test]
    fn unknown_keys_reported_with_paths() {
        let e = RunConfig::from_json(
            r#"{"schema_version": 1, "simulate": {"dgp": {"nn": 3}, "folds": 1}}"#,
        )
        .unwrap_err();
        match e {
            CliError::Config { paths, .. } => {
                assert!(paths.iter().any(|p| p == "simulate.dgp"), "{paths:?}");
                assert!(paths.iter().any(|p| p == "simulate.folds"), "{paths:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_version_rejected() {
        assert!(RunConfig::from_json(r#"{"schema_version": 2}"#).is_err());
        assert!(RunConfig::from_json(r#"{}"#).is_err());
    }

    #[test]
    fn canonical_form_ignores_key_order_and_defaults() {
        let a = RunConfig::from_json(
            r#"{"schema_version": 1, "simulate": {"replications": 3, "base_seed": 9}}"#,
        )
        .unwrap();
        let b = RunConfig::from_json(
            r#"{"simulate": {"base_seed": 9, "replications": 3, "folds": 5}, "schema_version": 1}"#,
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let back = RunConfig::from_json(&a.canonical()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn learner_variants_parse() {
        let c = RunConfig::from_json(
            r#"{"schema_version": 1, "simulate": {"learners": {
                "outcome": {"kind": "mlp", "hidden": [8], "max_iter": 50},
                "final_stage": {"kind": "ridge", "lambda": 0.1},
                "propensity": {"ridge": 0.5}}}}"#,
        )
        .unwrap();
        assert!(matches!(
            c.simulate.unwrap().learners.outcome,
            focal_core::learners::FosLearner::Mlp(_)
        ));
    }
}
