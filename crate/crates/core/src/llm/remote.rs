use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    ChatProvider, ChatRequest, ChatResponse, LlmConfig, LlmError, RetryConfig, TokenUsage,
};

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

/// Chat-completions request body; field order is the serialization order.
#[derive(Debug, Serialize)]
pub(crate) struct WireChatBody<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

impl<'a> WireChatBody<'a> {
    pub(crate) fn new(req: &'a ChatRequest) -> Self {
        Self {
            model: &req.model_name,
            messages: [
                WireMessage {
                    role: "system",
                    content: &req.system_text,
                },
                WireMessage {
                    role: "user",
                    content: &req.user_text,
                },
            ],
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Debug, Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Debug, Serialize)]
struct WireEmbedBody<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Debug, Deserialize)]
struct WireEmbedResponse {
    data: Vec<WireEmbedding>,
}

#[derive(Debug, Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

/// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`.
pub fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(1u32 << (attempt.saturating_sub(1)).min(16))
}

/// Serializes the chat-completions body for `req`.
pub fn chat_body_json(req: &ChatRequest) -> String {
    serde_json::to_string(&WireChatBody::new(req)).expect("body serializes")
}

#[derive(Clone)]
pub(crate) struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
    retry: RetryConfig,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub(crate) fn from_config(config: &LlmConfig, endpoint: &str) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = if config.api_key_env.is_empty() {
            None
        } else {
            Some(
                std::env::var(&config.api_key_env)
                    .map_err(|_| LlmError::MissingApiKey(config.api_key_env.clone()))?,
            )
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            base_url: endpoint.trim_end_matches('/').to_string(),
            api_key,
            retry: config.retry.clone(),
        })
    }

    /// POSTs `body` to `path`, retrying 429 and 5xx with exponential backoff.
    /// Returns the body text and the number of attempts made.
    pub(crate) fn post(&self, path: &str, body: &str) -> Result<(String, u32), LlmError> {
        let url = format!("{}/{}", self.base_url, path.trim_start_matches('/'));
        let base = Duration::from_millis(self.retry.base_backoff_ms);
        let mut last_status = 0u16;
        for attempt in 1..=self.retry.max_attempts {
            if attempt > 1 {
                std::thread::sleep(backoff_delay(base, attempt - 1));
            }
            let mut req = self
                .agent
                .post(&url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = match req.send(body) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("attempt {attempt} to {url} failed: {e}");
                    last_status = 0;
                    if attempt == self.retry.max_attempts {
                        return Err(LlmError::TransportFailure(e.to_string()));
                    }
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status == 429 || (500..600).contains(&status) {
                log::warn!("attempt {attempt} to {url} got HTTP {status}");
                last_status = status;
                continue;
            }
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| LlmError::TransportFailure(e.to_string()))?;
            if !(200..300).contains(&status) {
                return Err(LlmError::TransportFailure(format!("HTTP {status}: {text}")));
            }
            return Ok((text, attempt));
        }
        if last_status == 429 {
            Err(LlmError::RateLimited {
                attempts: self.retry.max_attempts,
            })
        } else {
            Err(LlmError::TransportFailure(format!(
                "HTTP {last_status} after {} attempts",
                self.retry.max_attempts
            )))
        }
    }

    pub(crate) fn embed(&self, model: &str, text: &str) -> Result<Vec<f64>, LlmError> {
        let body =
            serde_json::to_string(&WireEmbedBody { model, input: text }).expect("body serializes");
        let (text, _) = self.post("embeddings", &body)?;
        let parsed: WireEmbedResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::MalformedProviderResponse(e.to_string()))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| LlmError::MalformedProviderResponse("no embedding in response".into()))
    }
}

/// OpenAI-compatible chat-completions provider.
#[derive(Debug, Clone)]
pub struct OpenAiCompatible {
    transport: HttpTransport,
}

impl OpenAiCompatible {
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        Ok(Self {
            transport: HttpTransport::from_config(config, &config.endpoint)?,
        })
    }
}

impl ChatProvider for OpenAiCompatible {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let started = Instant::now();
        let (text, attempts) = self
            .transport
            .post("chat/completions", &chat_body_json(request))?;
        let parsed: WireChatResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::MalformedProviderResponse(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedProviderResponse("no message content".into()))?;
        let usage = parsed
            .usage
            .map_or_else(TokenUsage::default, |u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            });
        Ok(ChatResponse {
            content,
            token_usage: usage,
            provider_latency: started.elapsed(),
            attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_monotone() {
        let base = Duration::from_millis(100);
        let delays: Vec<Duration> = (1..=6).map(|a| backoff_delay(base, a)).collect();
        assert_eq!(delays[0], base);
        assert_eq!(delays[2], Duration::from_millis(400));
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
    }
}
