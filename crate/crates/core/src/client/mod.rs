//! Chat and multimodal endpoint abstractions.
//!
//! Backends implement [`ChatClient`] or [`VisionClient`] and are created by
//! name through a [`BackendRegistry`]. Requests carry the rendered prompt
//! plus the structured inputs it was rendered from; wire backends send only
//! the prompt, offline mocks read the structure.

mod http;
mod registry;

pub use http::{Backoff, OpenAiCompatible};
pub use registry::{BackendRegistry, BackendSettings, ChatFactory, VisionFactory};

use crate::domain::Hypothesis;
use crate::hypogen::GenerationRequest;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingAuth(String),
    #[error("network access is disabled (offline mode)")]
    Offline,
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("mock failure: {0}")]
    Injected(String),
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Set when the prompt asks for new hypotheses.
    pub generation: Option<GenerationRequest>,
}

#[derive(Debug, Clone, Copy)]
pub struct VisionRequest<'a> {
    pub model: &'a str,
    pub prompt: &'a str,
    pub image: &'a [u8],
    pub image_ref: &'a str,
    /// The questions the prompt enumerates, in prompt order.
    pub questions: &'a [Hypothesis],
    pub temperature: f64,
    pub max_tokens: u32,
}

/// Text-only completion endpoint.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;

    /// Whether this backend reaches the network.
    fn is_remote(&self) -> bool {
        false
    }
}

/// Completion endpoint that accepts one image attachment.
pub trait VisionClient: Send + Sync {
    fn complete(&self, request: &VisionRequest<'_>) -> Result<String, ClientError>;

    fn is_remote(&self) -> bool {
        false
    }
}
