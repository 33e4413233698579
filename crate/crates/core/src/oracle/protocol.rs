//! JSON wire format shared with the model bridge.
//!
//! `POST /v1/describe` and `POST /v1/embed`; field order below is the
//! serialized order. The JSON schema in `protocol/oracle_protocol.schema.json`
//! is the contract artifact.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::ImageBuffer;

pub const DESCRIBE_PATH: &str = "/v1/describe";
pub const EMBED_PATH: &str = "/v1/embed";

/// JSON schema for every request and response body.
pub const PROTOCOL_SCHEMA: &str = include_str!("../../protocol/oracle_protocol.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequest {
    pub image_png_b64: String,
    pub prompt: String,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResponse {
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

/// PNG-encodes and base64s (standard alphabet, padded, no line breaks).
pub fn encode_image_b64(img: &ImageBuffer) -> Result<String> {
    Ok(STANDARD.encode(img.encode_png()?))
}

pub fn decode_image_b64(b64: &str) -> Result<ImageBuffer> {
    let bytes = STANDARD
        .decode(b64)
        .map_err(|e| crate::error::Error::Image(format!("bad base64: {e}")))?;
    ImageBuffer::decode_png(&bytes)
}

impl DescribeRequest {
    pub fn new(frame: &ImageBuffer, prompt: &str, scenario: &str) -> Result<Self> {
        Ok(Self { image_png_b64: encode_image_b64(frame)?, prompt: prompt.to_owned(), scenario: scenario.to_owned() })
    }
}
