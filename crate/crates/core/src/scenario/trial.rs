//! Running one approach past the mount and recording the oracle's answers.

use serde::{Deserialize, Serialize};

use super::config::{build_distance_schedule, ScenarioConfig};
use super::manifest::ExternalFrame;
use super::render::render_frame;
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::objective::SceneFrame;
use crate::oracle::{DrivingOracle, OracleResponse, Query, SceneContext};
use crate::patch::Patch;
use crate::text::contains_keyword;
use crate::transforms::composite_into;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Benign,
    Adversarial,
}

impl Condition {
    pub fn as_str(&self) -> &'static str {
        match self {
            Condition::Benign => "benign",
            Condition::Adversarial => "adversarial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    pub distance: f64,
    pub condition: Condition,
    /// `None` when the query failed; see `error`.
    pub response: Option<OracleResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub success: bool,
    pub critical_detected: bool,
}

impl FrameRecord {
    /// Frames with a failed query are left out of every metric denominator.
    pub fn is_valid(&self) -> bool {
        self.response.is_some()
    }

    fn answered(index: usize, distance: f64, condition: Condition, resp: OracleResponse, cfg: &ScenarioConfig) -> Self {
        let success = resp.parsed_action == cfg.target_action;
        let critical_detected = contains_keyword(&resp.raw_text, &cfg.keywords);
        Self { index, distance, condition, response: Some(resp), error: None, success, critical_detected }
    }

    fn failed(index: usize, distance: f64, condition: Condition, error: String) -> Self {
        Self { index, distance, condition, response: None, error: Some(error), success: false, critical_detected: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub scenario_name: String,
    pub condition: Condition,
    pub frames: Vec<FrameRecord>,
}

impl TrialRecord {
    pub fn valid_frames(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.is_valid())
    }

    pub fn failed_queries(&self) -> usize {
        self.frames.iter().filter(|f| !f.is_valid()).count()
    }

    /// Recomputes `success` and `critical_detected` from the stored text.
    pub fn replay_flags(&self, cfg: &ScenarioConfig) -> Vec<(bool, bool)> {
        self.frames
            .iter()
            .map(|f| match &f.response {
                Some(r) => (
                    crate::oracle::parse_action(&r.raw_text) == cfg.target_action,
                    contains_keyword(&r.raw_text, &cfg.keywords),
                ),
                None => (false, false),
            })
            .collect()
    }
}

fn query_frame(
    cfg: &ScenarioConfig,
    oracle: &dyn DrivingOracle,
    image: &ImageBuffer,
    context: &SceneContext,
    trial_id: usize,
    index: usize,
    distance: f64,
    condition: Condition,
) -> FrameRecord {
    let query = Query { prompt: &cfg.prompt, context, request_id: format!("trial{trial_id}-f{index}") };
    match oracle.describe(image, &query) {
        Ok(resp) => FrameRecord::answered(index, distance, condition, resp, cfg),
        Err(e) => {
            tracing::warn!(trial_id, frame = index, error = %e, "oracle query failed");
            FrameRecord::failed(index, distance, condition, e.to_string())
        }
    }
}

/// One approach through the rendered schedule. Adversarial iff `patch` is given.
pub fn run_trial(
    cfg: &ScenarioConfig,
    patch: Option<&Patch>,
    oracle: &dyn DrivingOracle,
    trial_id: usize,
) -> Result<TrialRecord> {
    let condition = if patch.is_some() { Condition::Adversarial } else { Condition::Benign };
    let schedule = build_distance_schedule(cfg)?;
    let mut frames = Vec::with_capacity(schedule.len());
    for (index, &distance) in schedule.iter().enumerate() {
        let rendered = render_frame(cfg, distance, patch)?;
        frames.push(query_frame(cfg, oracle, &rendered.image, &rendered.context, trial_id, index, distance, condition));
    }
    Ok(TrialRecord { trial_id, scenario_name: cfg.name.clone(), condition, frames })
}

/// Same as [`run_trial`] over externally captured frames; the patch is
/// composited into each frame's ROI.
pub fn run_trial_on_frames(
    cfg: &ScenarioConfig,
    external: &[ExternalFrame],
    patch: Option<&Patch>,
    oracle: &dyn DrivingOracle,
    trial_id: usize,
) -> Result<TrialRecord> {
    if external.is_empty() {
        return Err(Error::InvalidArgument("no frames to evaluate".into()));
    }
    let condition = if patch.is_some() { Condition::Adversarial } else { Condition::Benign };
    let mut frames = Vec::with_capacity(external.len());
    for (index, ef) in external.iter().enumerate() {
        let mut image = ef.image.clone();
        if let Some(p) = patch {
            composite_into(&mut image, p, ef.roi);
        }
        let context = external_context(cfg, ef);
        frames.push(query_frame(cfg, oracle, &image, &context, trial_id, index, ef.distance, condition));
    }
    Ok(TrialRecord { trial_id, scenario_name: cfg.name.clone(), condition, frames })
}

fn external_context(cfg: &ScenarioConfig, ef: &ExternalFrame) -> SceneContext {
    SceneContext {
        scenario: cfg.name.clone(),
        patch_roi: ef.roi.clip_to(ef.image.width(), ef.image.height()),
        critical_visible: ef.critical_visible,
        critical_description: cfg.critical_description.clone(),
        target_response: cfg.target_response.clone(),
    }
}

/// The benign frame at `critical_distance`, which the optimizer attacks.
pub fn optimization_scene(cfg: &ScenarioConfig) -> Result<SceneFrame> {
    Ok(render_frame(cfg, cfg.critical_distance, None)?.into_scene(&cfg.prompt))
}

/// Optimization scene taken from an external frame list: the frame nearest
/// to `critical_distance`.
pub fn optimization_scene_from_frames(cfg: &ScenarioConfig, external: &[ExternalFrame]) -> Result<SceneFrame> {
    let ef = external
        .iter()
        .min_by(|a, b| {
            (a.distance - cfg.critical_distance).abs().total_cmp(&(b.distance - cfg.critical_distance).abs())
        })
        .ok_or_else(|| Error::InvalidArgument("no frames to optimize on".into()))?;
    Ok(SceneFrame {
        image: ef.image.clone(),
        patch_rect: ef.roi,
        context: external_context(cfg, ef),
        prompt: cfg.prompt.clone(),
    })
}
