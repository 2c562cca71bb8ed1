use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, ChatResponse, LlmError, TokenUsage};

/// Guard list: one substring or several that must all appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Guard {
    One(String),
    All(Vec<String>),
}

impl Guard {
    fn patterns(&self) -> Vec<&str> {
        match self {
            Guard::One(s) => vec![s.as_str()],
            Guard::All(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

impl Default for Guard {
    fn default() -> Self {
        Guard::All(Vec::new())
    }
}

/// One scripted reply. Entries are consumed in order unless `repeat` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Substrings required in the system + user text.
    #[serde(default, rename = "match")]
    pub matches: Guard,
    /// Substrings that must not appear.
    #[serde(default)]
    pub unless: Guard,
    /// Substring required in the request id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    pub response: String,
    #[serde(default)]
    pub repeat: bool,
}

impl ScriptEntry {
    pub fn once(matches: &str, response: &str) -> Self {
        Self {
            matches: Guard::One(matches.into()),
            unless: Guard::default(),
            request_id: None,
            response: response.into(),
            repeat: false,
        }
    }

    pub fn always(matches: &str, response: &str) -> Self {
        Self {
            repeat: true,
            ..Self::once(matches, response)
        }
    }

    pub fn all_of(matches: &[&str], response: &str, repeat: bool) -> Self {
        Self {
            matches: Guard::All(matches.iter().map(|s| s.to_string()).collect()),
            unless: Guard::default(),
            request_id: None,
            response: response.into(),
            repeat,
        }
    }

    pub fn unless(mut self, forbidden: &[&str]) -> Self {
        self.unless = Guard::All(forbidden.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn for_request(mut self, id: &str) -> Self {
        self.request_id = Some(id.into());
        self
    }

    fn accepts(&self, req: &ChatRequest) -> bool {
        let hay = format!("{}\n{}", req.system_text, req.user_text);
        self.matches.patterns().iter().all(|p| hay.contains(p))
            && !self
                .unless
                .patterns()
                .iter()
                .any(|p| !p.is_empty() && hay.contains(p))
            && self
                .request_id
                .as_ref()
                .is_none_or(|id| req.request_id.contains(id.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapturedCall {
    pub request_id: String,
    pub system_text: String,
    pub user_text: String,
    pub response: String,
}

/// Transcript-driven provider. The first unconsumed entry (in transcript order)
/// whose guards accept the request answers it. Every call is captured.
#[derive(Debug)]
pub struct ScriptedStub {
    entries: Vec<ScriptEntry>,
    state: Mutex<StubState>,
}

#[derive(Debug, Default)]
struct StubState {
    consumed: Vec<bool>,
    log: Vec<CapturedCall>,
}

impl ScriptedStub {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        let n = entries.len();
        Self {
            entries,
            state: Mutex::new(StubState {
                consumed: vec![false; n],
                log: Vec::new(),
            }),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self, LlmError> {
        let entries: Vec<ScriptEntry> = serde_json::from_str(s)
            .map_err(|e| LlmError::InvalidConfig(format!("stub transcript: {e}")))?;
        Ok(Self::new(entries))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let s = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            LlmError::InvalidConfig(format!("stub transcript {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json_str(&s)
    }

    pub fn calls(&self) -> Vec<CapturedCall> {
        self.state.lock().unwrap().log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap().log.len()
    }

    pub fn clear_log(&self) {
        self.state.lock().unwrap().log.clear();
    }
}

impl ChatProvider for ScriptedStub {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let mut st = self.state.lock().unwrap();
        let hit = self
            .entries
            .iter()
            .enumerate()
            .find(|(i, e)| !st.consumed[*i] && e.accepts(request));
        let Some((i, entry)) = hit else {
            return Err(LlmError::StubExhausted {
                request_id: request.request_id.clone(),
            });
        };
        if !entry.repeat {
            st.consumed[i] = true;
        }
        st.log.push(CapturedCall {
            request_id: request.request_id.clone(),
            system_text: request.system_text.clone(),
            user_text: request.user_text.clone(),
            response: entry.response.clone(),
        });
        Ok(ChatResponse {
            content: entry.response.clone(),
            token_usage: TokenUsage::default(),
            provider_latency: Duration::ZERO,
            attempts: 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::LlmClient;
    use std::sync::Arc;

    #[test]
    fn ordered_consumption_with_guards() {
        let stub = Arc::new(ScriptedStub::new(vec![
            ScriptEntry::once("alpha", "first"),
            ScriptEntry::once("", "YES"),
            ScriptEntry::always("beta", "beta-forever"),
        ]));
        let c = LlmClient::from_stub(stub.clone());
        assert_eq!(c.chat("1", "s", "beta").unwrap().content, "YES");
        assert_eq!(c.chat("2", "s", "alpha").unwrap().content, "first");
        assert_eq!(c.chat("3", "s", "beta").unwrap().content, "beta-forever");
        assert_eq!(c.chat("4", "s", "beta").unwrap().content, "beta-forever");
        assert!(matches!(
            c.chat("5", "s", "gamma"),
            Err(LlmError::StubExhausted { .. })
        ));
        assert_eq!(stub.call_count(), 4);
    }

    #[test]
    fn unless_and_request_id_guards() {
        let stub = Arc::new(ScriptedStub::new(vec![
            ScriptEntry::always("q", "blocked").unless(&["secret"]),
            ScriptEntry::always("q", "by-id").for_request("rec-7"),
            ScriptEntry::always("", "fallback"),
        ]));
        let c = LlmClient::from_stub(stub);
        assert_eq!(c.chat("a", "s", "q").unwrap().content, "blocked");
        assert_eq!(c.chat("rec-7:x", "s", "q secret").unwrap().content, "by-id");
        assert_eq!(c.chat("b", "s", "q secret").unwrap().content, "fallback");
    }

    #[test]
    fn transcript_json_shape() {
        let stub = ScriptedStub::from_json_str(
            r#"[{"match": "hello", "response": "→ YES"},
                {"match": ["a", "b"], "unless": "c", "response": "ab", "repeat": true}]"#,
        )
        .unwrap();
        let c = LlmClient::from_stub(Arc::new(stub));
        assert_eq!(c.chat("1", "s", "hello").unwrap().content, "→ YES");
        assert_eq!(c.chat("1", "a", "b").unwrap().content, "ab");
    }
}
