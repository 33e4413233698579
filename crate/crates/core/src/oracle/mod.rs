//! The black-box query boundary.
//!
//! Two oracles sit behind traits: a driving model that turns a camera frame
//! into free text, and a text embedder used by the semantic loss. Both have a
//! deterministic desk-scale implementation ([`MockOracle`], [`HashEmbedder`])
//! and an HTTP client for real models ([`HttpOracle`], [`HttpEmbedder`]).

mod embed;
mod http;
mod mock;
pub mod protocol;

use serde::{Deserialize, Serialize};

pub use embed::{fnv1a64, hash_embed, HashEmbedder, DEFAULT_EMBED_DIM};
pub use http::{HttpConfig, HttpEmbedder, HttpOracle};
pub use mock::{mock_describe, red_dominance, MockOracle, MAINTAIN_RESPONSE, RED_DOMINANCE_THRESHOLD};

use crate::error::{Error, OracleError, Result};
use crate::image::{ImageBuffer, PixelRect};

/// Driving action extracted from a model's free-text reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accelerate,
    Maintain,
    BrakeStop,
    TurnLeft,
    TurnRight,
    Unknown,
}

/// Keyword table, first match wins.
const ACTION_RULES: &[(&[&str], Action)] = &[
    (&["turn right"], Action::TurnRight),
    (&["turn left"], Action::TurnLeft),
    (&["stop", "brake", "slow down"], Action::BrakeStop),
    (&["accelerate", "speed up", "continue forward"], Action::Accelerate),
    (&["maintain"], Action::Maintain),
];

pub fn parse_action(text: &str) -> Action {
    let lower = text.to_lowercase();
    ACTION_RULES
        .iter()
        .find(|(needles, _)| needles.iter().any(|n| lower.contains(n)))
        .map_or(Action::Unknown, |&(_, action)| action)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub raw_text: String,
    pub parsed_action: Action,
    /// Seconds; always 0 for the mock.
    pub query_latency: f64,
    /// Caller-supplied id echoed back so interleaved replies can be ordered.
    pub request_id: String,
}

impl OracleResponse {
    pub fn new(raw_text: String, query_latency: f64, request_id: String) -> Self {
        let parsed_action = parse_action(&raw_text);
        Self { raw_text, parsed_action, query_latency, request_id }
    }
}

/// What the renderer knows about a frame; consumed by the mock oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneContext {
    pub scenario: String,
    /// On-frame part of the patch (or ad panel) rectangle.
    pub patch_roi: Option<PixelRect>,
    pub critical_visible: bool,
    pub critical_description: String,
    pub target_response: String,
}

pub struct Query<'a> {
    pub prompt: &'a str,
    pub context: &'a SceneContext,
    pub request_id: String,
}

/// Image in, text out. Implementations must tolerate concurrent calls.
pub trait DrivingOracle: Send + Sync {
    fn describe(&self, frame: &ImageBuffer, query: &Query<'_>) -> Result<OracleResponse, OracleError>;
}

/// Unit-norm text embedding, or the zero vector for empty text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    components: Vec<f64>,
}

impl EmbeddingVector {
    pub fn zero(dim: usize) -> Self {
        Self { components: vec![0.0; dim] }
    }

    /// Scales to unit length; an all-zero input stays zero.
    pub fn normalized(mut components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("embedding must have positive dimension".into()));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite components".into()));
        }
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 0.0 {
            components.iter_mut().for_each(|c| *c /= norm);
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&c| c == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, OracleError>;
}
