use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::warn;

use super::protocol::{DescribeRequest, DescribeResponse, EmbedRequest, EmbedResponse, DESCRIBE_PATH, EMBED_PATH};
use super::{DrivingOracle, EmbeddingVector, OracleResponse, Query, TextEmbedder};
use crate::error::OracleError;
use crate::image::ImageBuffer;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8700`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Extra attempts after the first for retryable failures.
    pub retries: u32,
    pub backoff: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

struct Client {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

impl Client {
    fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.cfg.endpoint.trim_end_matches('/'), path)
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
        request_id: &str,
    ) -> Result<Resp, OracleError> {
        let payload = serde_json::to_vec(body).map_err(|e| OracleError::Protocol(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.url(path))
            .header("content-type", "application/json")
            .header("x-request-id", request_id)
            .send(&payload[..])
            .map_err(transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(OracleError::Remote { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| OracleError::Protocol(format!("{path}: {e}")))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
        request_id: &str,
    ) -> Result<Resp, OracleError> {
        let mut attempt = 0;
        loop {
            match self.post_once(path, body, request_id) {
                Err(OracleError::Retryable(msg)) if attempt < self.cfg.retries => {
                    attempt += 1;
                    warn!(path, attempt, error = %msg, "retrying oracle request");
                    thread::sleep(self.cfg.backoff * attempt);
                }
                other => return other,
            }
        }
    }
}

fn transport_error(e: ureq::Error) -> OracleError {
    match e {
        ureq::Error::BadUri(u) => OracleError::Protocol(format!("bad endpoint uri: {u}")),
        other => OracleError::Retryable(other.to_string()),
    }
}

/// Driving-model client for `POST /v1/describe`.
pub struct HttpOracle {
    client: Client,
}

impl HttpOracle {
    pub fn new(cfg: HttpConfig) -> Self {
        Self { client: Client::new(cfg) }
    }

    pub fn http_describe(
        &self,
        frame: &ImageBuffer,
        prompt: &str,
        scenario: &str,
        request_id: &str,
    ) -> Result<OracleResponse, OracleError> {
        let req = DescribeRequest::new(frame, prompt, scenario).map_err(|e| OracleError::Protocol(e.to_string()))?;
        let start = Instant::now();
        let resp: DescribeResponse = self.client.post(DESCRIBE_PATH, &req, request_id)?;
        Ok(OracleResponse::new(resp.description, start.elapsed().as_secs_f64(), request_id.to_owned()))
    }
}

impl DrivingOracle for HttpOracle {
    fn describe(&self, frame: &ImageBuffer, query: &Query<'_>) -> Result<OracleResponse, OracleError> {
        self.http_describe(frame, query.prompt, &query.context.scenario, &query.request_id)
    }
}

/// Text-embedder client for `POST /v1/embed`; renormalizes locally.
pub struct HttpEmbedder {
    client: Client,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: HttpConfig, dim: usize) -> Self {
        Self { client: Client::new(cfg), dim }
    }

    pub fn http_embed(&self, text: &str) -> Result<EmbeddingVector, OracleError> {
        let resp: EmbedResponse = self.client.post(EMBED_PATH, &EmbedRequest { text: text.to_owned() }, "embed")?;
        if resp.vector.len() != resp.dim {
            return Err(OracleError::Protocol(format!(
                "embed reply declares dim {} but carries {} components",
                resp.dim,
                resp.vector.len()
            )));
        }
        if resp.dim != self.dim {
            return Err(OracleError::Protocol(format!("embed dim {} does not match configured {}", resp.dim, self.dim)));
        }
        EmbeddingVector::normalized(resp.vector).map_err(|e| OracleError::Protocol(e.to_string()))
    }
}

impl TextEmbedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, OracleError> {
        self.http_embed(text)
    }
}
