use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{ReportSettings, DEFAULT_BIN_EDGES, DEFAULT_RESAMPLES, KEY_DISTANCES};
use crate::nes::NesConfig;
use crate::objective::ObjectiveConfig;
use crate::oracle::{DrivingOracle, HashEmbedder, HttpConfig, HttpEmbedder, HttpOracle, MockOracle, TextEmbedder};
use crate::scenario::{builtin, ScenarioConfig};
use crate::SCHEMA_VERSION;

pub const ENDPOINT_ENV: &str = "ROADPATCH_ENDPOINT";

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_scenario() -> String {
    "crosswalk".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    #[serde(default)]
    pub kind: OracleKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "OracleSettings::timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "OracleSettings::retries")]
    pub retries: u32,
}

impl OracleSettings {
    fn timeout_s() -> f64 {
        60.0
    }
    fn retries() -> u32 {
        3
    }
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { kind: OracleKind::Mock, endpoint: None, timeout_s: Self::timeout_s(), retries: Self::retries() }
    }
}

/// Objective knobs; the target text comes from the scenario unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSettings {
    #[serde(default)]
    pub target_response: Option<String>,
    #[serde(default = "crate::objective::defaults::lambda_tv")]
    pub lambda_tv: f64,
    #[serde(default = "crate::objective::defaults::k_eot")]
    pub k_eot: usize,
    #[serde(default = "crate::objective::defaults::embed_dim")]
    pub embed_dim: usize,
}

impl Default for ObjectiveSettings {
    fn default() -> Self {
        let d = ObjectiveConfig::new("");
        Self { target_response: None, lambda_tv: d.lambda_tv, k_eot: d.k_eot, embed_dim: d.embed_dim }
    }
}

/// Which frames the optimizer attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    /// The frame at the scenario's critical distance.
    #[default]
    Critical,
    /// Every schedule frame where the mount is on-frame.
    Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSettings {
    #[serde(default = "EvaluationSettings::trials")]
    pub trials: usize,
    #[serde(default = "EvaluationSettings::bin_edges")]
    pub bin_edges: Vec<f64>,
    #[serde(default = "EvaluationSettings::key_distances")]
    pub key_distances: Vec<f64>,
    #[serde(default = "EvaluationSettings::resamples")]
    pub resamples: usize,
}

impl EvaluationSettings {
    fn trials() -> usize {
        10
    }
    fn bin_edges() -> Vec<f64> {
        DEFAULT_BIN_EDGES.to_vec()
    }
    fn key_distances() -> Vec<f64> {
        KEY_DISTANCES.to_vec()
    }
    fn resamples() -> usize {
        DEFAULT_RESAMPLES
    }
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            trials: Self::trials(),
            bin_edges: Self::bin_edges(),
            key_distances: Self::key_distances(),
            resamples: Self::resamples(),
        }
    }
}

/// Complete description of a run. The snapshot written to `config.json`
/// has `scenario_config` filled in and relative paths resolved, so it
/// reproduces the run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Built-in scenario name, or a path to a scenario file.
    #[serde(default = "default_scenario")]
    pub scenario: String,
    /// Inline scenario; takes precedence over `scenario`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_config: Option<ScenarioConfig>,
    /// Overrides the camera raster size, `[width, height]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[u32; 2]>,
    /// Externally captured frames used instead of the renderer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_manifest: Option<PathBuf>,
    #[serde(default)]
    pub scene_mode: SceneMode,
    #[serde(default)]
    pub nes: NesConfig,
    #[serde(default)]
    pub objective: ObjectiveSettings,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub oracle: OracleSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario: default_scenario(),
            scenario_config: None,
            resolution: None,
            frames_manifest: None,
            scene_mode: SceneMode::default(),
            nes: NesConfig::default(),
            objective: ObjectiveSettings::default(),
            evaluation: EvaluationSettings::default(),
            oracle: OracleSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn builtin(name: &str) -> Self {
        Self { scenario: name.into(), ..Self::default() }
    }

    /// Loads a JSON or TOML run config and resolves it against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = super::load_structured(path)?;
        check_schema(&raw)?;
        let cfg: RunConfig = serde_json::from_value(raw).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))
    }

    /// Inlines the scenario, applies `resolution`, makes paths absolute and validates.
    pub fn resolve(mut self, base: &Path) -> Result<Self> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: self.schema_version });
        }
        let mut scenario = match self.scenario_config.take() {
            Some(s) => s,
            None => match builtin(&self.scenario) {
                Some(s) => s,
                None => {
                    let p = base.join(&self.scenario);
                    if !p.exists() {
                        return Err(Error::config(
                            "scenario",
                            format!("`{}` is neither a built-in scenario (crosswalk, highway) nor an existing file", self.scenario),
                        ));
                    }
                    ScenarioConfig::load(&p)?
                }
            },
        };
        if let Some([w, h]) = self.resolution.take() {
            scenario = scenario.with_resolution(w, h);
        }
        scenario.validate()?;
        self.scenario = scenario.name.clone();
        self.scenario_config = Some(scenario);
        if let Some(m) = self.frames_manifest.take() {
            let abs = if m.is_absolute() { m } else { base.join(m) };
            self.frames_manifest = Some(std::path::absolute(&abs).map_err(|e| Error::io(&abs, e))?);
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.nes.validate()?;
        self.objective_config()?.validate()?;
        if self.evaluation.trials == 0 {
            return Err(Error::config("evaluation.trials", "must be >= 1"));
        }
        if self.evaluation.resamples == 0 {
            return Err(Error::config("evaluation.resamples", "must be >= 1"));
        }
        if self.evaluation.bin_edges.is_empty() || self.evaluation.bin_edges.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("evaluation.bin_edges", "must be non-empty and strictly increasing"));
        }
        if !(self.oracle.timeout_s > 0.0) {
            return Err(Error::config("oracle.timeout_s", "must be > 0"));
        }
        if self.oracle.kind == OracleKind::Http && self.oracle.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
            return Err(Error::config("oracle.endpoint", format!("required for the http oracle (flag --endpoint or env {ENDPOINT_ENV})")));
        }
        Ok(())
    }

    /// The resolved scenario. Panics if called before [`RunConfig::resolve`].
    pub fn scenario(&self) -> &ScenarioConfig {
        self.scenario_config.as_ref().expect("run config is resolved")
    }

    pub fn objective_config(&self) -> Result<ObjectiveConfig> {
        let target = match (&self.objective.target_response, &self.scenario_config) {
            (Some(t), _) => t.clone(),
            (None, Some(s)) => s.target_response.clone(),
            (None, None) => return Err(Error::config("objective.target_response", "unset and no scenario resolved")),
        };
        Ok(ObjectiveConfig {
            target_response: target,
            lambda_tv: self.objective.lambda_tv,
            k_eot: self.objective.k_eot,
            embed_dim: self.objective.embed_dim,
        })
    }

    pub fn report_settings(&self) -> ReportSettings {
        ReportSettings {
            bin_edges: self.evaluation.bin_edges.clone(),
            key_distances: self.evaluation.key_distances.clone(),
            resamples: self.evaluation.resamples,
            seed: self.nes.seed,
        }
    }

    /// Driving oracle and text embedder for the configured backend.
    pub fn build_oracles(&self) -> Result<(Box<dyn DrivingOracle>, Box<dyn TextEmbedder>)> {
        match self.oracle.kind {
            OracleKind::Mock => Ok((Box::new(MockOracle), Box::new(HashEmbedder::new(self.objective.embed_dim)?))),
            OracleKind::Http => {
                let endpoint = self
                    .oracle
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::config("oracle.endpoint", "required for the http oracle"))?;
                let http = HttpConfig {
                    timeout: Duration::from_secs_f64(self.oracle.timeout_s),
                    retries: self.oracle.retries,
                    ..HttpConfig::new(endpoint)
                };
                Ok((Box::new(HttpOracle::new(http.clone())), Box::new(HttpEmbedder::new(http, self.objective.embed_dim))))
            }
        }
    }
}

/// Rejects artifacts written under another schema version.
pub fn check_schema(raw: &serde_json::Value) -> Result<()> {
    match raw.get("schema_version") {
        None => Ok(()),
        Some(v) => match v.as_u64() {
            Some(found) if found == SCHEMA_VERSION as u64 => Ok(()),
            Some(found) => Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: found as u32 }),
            None => Err(Error::config("schema_version", "must be an integer")),
        },
    }
}
