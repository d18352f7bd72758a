use super::{Backoff, ChatClient, ClientError, OpenAiCompatible, VisionClient};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

/// Endpoint settings shared by every backend kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSettings {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
}

impl BackendSettings {
    /// Reads the token named by `auth_env`, failing when it is unset.
    pub fn resolve_token(&self) -> Result<Option<String>, ClientError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::MissingAuth(var.clone())),
        }
    }
}

pub type ChatFactory = Box<dyn Fn(&BackendSettings) -> Result<Arc<dyn ChatClient>, ClientError> + Send + Sync>;
pub type VisionFactory = Box<dyn Fn(&BackendSettings) -> Result<Arc<dyn VisionClient>, ClientError> + Send + Sync>;

/// Named constructors for chat and vision backends.
pub struct BackendRegistry {
    chat: BTreeMap<String, ChatFactory>,
    vision: BTreeMap<String, VisionFactory>,
}

fn http_client(settings: &BackendSettings) -> Result<OpenAiCompatible, ClientError> {
    OpenAiCompatible::new(
        &settings.base_url,
        settings.resolve_token()?,
        Duration::from_secs(settings.timeout_secs),
        Backoff::default(),
    )
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self {
            chat: BTreeMap::new(),
            vision: BTreeMap::new(),
        }
    }

    /// Registry with the `openai` wire backend for both kinds.
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        reg.register_chat(
            "openai",
            Box::new(|s| Ok(Arc::new(http_client(s)?) as Arc<dyn ChatClient>)),
        );
        reg.register_vision(
            "openai",
            Box::new(|s| Ok(Arc::new(http_client(s)?) as Arc<dyn VisionClient>)),
        );
        reg
    }

    pub fn register_chat(&mut self, name: &str, factory: ChatFactory) {
        self.chat.insert(name.to_string(), factory);
    }

    pub fn register_vision(&mut self, name: &str, factory: VisionFactory) {
        self.vision.insert(name.to_string(), factory);
    }

    pub fn chat(&self, name: &str, settings: &BackendSettings) -> Result<Arc<dyn ChatClient>, ClientError> {
        let factory = self
            .chat
            .get(name)
            .ok_or_else(|| ClientError::UnknownBackend(name.to_string()))?;
        factory(settings)
    }

    pub fn vision(&self, name: &str, settings: &BackendSettings) -> Result<Arc<dyn VisionClient>, ClientError> {
        let factory = self
            .vision
            .get(name)
            .ok_or_else(|| ClientError::UnknownBackend(name.to_string()))?;
        factory(settings)
    }

    pub fn chat_names(&self) -> Vec<&str> {
        self.chat.keys().map(String::as_str).collect()
    }

    pub fn vision_names(&self) -> Vec<&str> {
        self.vision.keys().map(String::as_str).collect()
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(auth_env: Option<&str>) -> BackendSettings {
        BackendSettings {
            base_url: "http://127.0.0.1:9".into(),
            model: "m".into(),
            auth_env: auth_env.map(str::to_string),
            timeout_secs: 1,
        }
    }

    #[test]
    fn unknown_backend_is_reported() {
        let reg = BackendRegistry::with_defaults();
        assert!(matches!(
            reg.chat("nope", &settings(None)),
            Err(ClientError::UnknownBackend(_))
        ));
        assert_eq!(reg.chat_names(), vec!["openai"]);
    }

    #[test]
    fn missing_token_fails_at_construction() {
        let reg = BackendRegistry::with_defaults();
        let err = reg
            .vision("openai", &settings(Some("HYPOSEARCH_TEST_SURELY_UNSET_VAR")))
            .err()
            .unwrap();
        assert_eq!(err, ClientError::MissingAuth("HYPOSEARCH_TEST_SURELY_UNSET_VAR".into()));
    }
}
