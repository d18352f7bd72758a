use super::{ChatClient, ChatRequest, ClientError, VisionClient, VisionRequest};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::time::Duration;

/// Exponential backoff between attempts on transport failure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2,
            max_attempts: 3,
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base * self.factor.saturating_pow(attempt)
    }
}

/// Client for endpoints speaking the chat-completions wire protocol:
/// `POST {base_url}/chat/completions` with `model`, `messages`,
/// `temperature` and `max_tokens`; the reply text is
/// `choices[0].message.content`.
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    base_url: String,
    api_key: Option<String>,
    backoff: Backoff,
    http: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    messages: serde_json::Value,
    temperature: f64,
    max_tokens: u32,
}

fn image_mime(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

impl OpenAiCompatible {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        timeout: Duration,
        backoff: Backoff,
    ) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            backoff,
            http,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    fn send(&self, body: &CompletionBody<'_>) -> Result<String, ClientError> {
        let mut last = ClientError::Transport("no attempt made".into());
        for attempt in 0..self.backoff.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt - 1));
            }
            let mut req = self.http.post(self.endpoint()).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Err(e) => {
                    log::warn!("chat endpoint attempt {} failed: {e}", attempt + 1);
                    last = ClientError::Transport(e.to_string());
                }
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp
                        .text()
                        .map_err(|e| ClientError::Transport(e.to_string()))?;
                    if status.is_server_error() || status.as_u16() == 429 {
                        log::warn!("chat endpoint attempt {} got HTTP {status}", attempt + 1);
                        last = ClientError::Status {
                            status: status.as_u16(),
                            body: text,
                        };
                        continue;
                    }
                    if !status.is_success() {
                        return Err(ClientError::Status {
                            status: status.as_u16(),
                            body: text,
                        });
                    }
                    let parsed: CompletionResponse = serde_json::from_str(&text)
                        .map_err(|e| ClientError::Malformed(e.to_string()))?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .and_then(|c| c.message.content)
                        .ok_or_else(|| ClientError::Malformed("no completion text".into()));
                }
            }
        }
        Err(last)
    }
}

impl ChatClient for OpenAiCompatible {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        self.send(&CompletionBody {
            model: &request.model,
            messages: json!([{ "role": "user", "content": request.prompt }]),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
    }

    fn is_remote(&self) -> bool {
        true
    }
}

impl VisionClient for OpenAiCompatible {
    fn complete(&self, request: &VisionRequest<'_>) -> Result<String, ClientError> {
        let data = base64::engine::general_purpose::STANDARD.encode(request.image);
        let url = format!("data:{};base64,{data}", image_mime(request.image));
        self.send(&CompletionBody {
            model: request.model,
            messages: json!([{
                "role": "user",
                "content": [
                    { "type": "image_url", "image_url": { "url": url } },
                    { "type": "text", "text": request.prompt },
                ],
            }]),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let b = Backoff::default();
        assert_eq!(b.delay(0), Duration::from_secs(1));
        assert_eq!(b.delay(1), Duration::from_secs(2));
        assert_eq!(b.delay(2), Duration::from_secs(4));
    }

    #[test]
    fn sniffs_common_image_types() {
        assert_eq!(image_mime(&[0x89, b'P', b'N', b'G', 0, 0]), "image/png");
        assert_eq!(image_mime(&[0xFF, 0xD8, 0xFF, 0xE0]), "image/jpeg");
        assert_eq!(image_mime(b"synthetic://scene/1"), "application/octet-stream");
    }
}
