use super::{DrivingOracle, OracleResponse, Query, SceneContext};
use crate::error::OracleError;
use crate::image::{ImageBuffer, PixelRect};

pub const RED_DOMINANCE_THRESHOLD: f64 = 0.25;
pub const MAINTAIN_RESPONSE: &str = "The driver should maintain speed on the clear road.";

/// `mean_r − (mean_g + mean_b)/2` over `roi` in normalized intensity;
/// 0 for an empty or off-frame roi.
pub fn red_dominance(frame: &ImageBuffer, roi: Option<PixelRect>) -> f64 {
    let Some(r) = roi.and_then(|r| r.clip_to(frame.width(), frame.height())) else {
        return 0.0;
    };
    let (mut sr, mut sg, mut sb) = (0u64, 0u64, 0u64);
    for y in r.y..r.bottom() {
        for x in r.x..r.right() {
            let [pr, pg, pb] = frame.pixel(x as u32, y as u32);
            sr += pr as u64;
            sg += pg as u64;
            sb += pb as u64;
        }
    }
    let n = (r.width as u64 * r.height as u64) as f64 * 255.0;
    sr as f64 / n - 0.5 * (sg as f64 / n + sb as f64 / n)
}

/// Deterministic stand-in for a driving VLM: a red-dominant roi yields the
/// attacker's target text, otherwise a safe description.
pub fn mock_describe(frame: &ImageBuffer, roi: Option<PixelRect>, ctx: &SceneContext) -> OracleResponse {
    let text = if red_dominance(frame, roi) > RED_DOMINANCE_THRESHOLD {
        ctx.target_response.clone()
    } else if ctx.critical_visible {
        ctx.critical_description.clone()
    } else {
        MAINTAIN_RESPONSE.to_owned()
    };
    OracleResponse::new(text, 0.0, String::new())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockOracle;

impl DrivingOracle for MockOracle {
    fn describe(&self, frame: &ImageBuffer, query: &Query<'_>) -> Result<OracleResponse, OracleError> {
        let mut resp = mock_describe(frame, query.context.patch_roi, query.context);
        resp.request_id = query.request_id.clone();
        Ok(resp)
    }
}
