//! Chat-completions client and the chat annotation backend's prompt and
//! response grammar.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Action, Observation};

pub const ENV_BASE_URL: &str = "COTNAV_CHAT_BASE_URL";
pub const ENV_MODEL: &str = "COTNAV_CHAT_MODEL";
pub const ENV_API_KEY: &str = "COTNAV_CHAT_API_KEY";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

/// Anything that can answer a chat request.
pub trait ChatComplete: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

/// Endpoint settings. The API key is only ever read from the environment.
#[derive(Clone, Debug)]
pub struct ChatConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub temperature: f64,
}

impl ChatConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(250),
            temperature: 0.0,
        }
    }

    pub fn from_env() -> Result<Self> {
        let base = std::env::var(ENV_BASE_URL).map_err(|_| Error::Config(format!("{ENV_BASE_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| Error::Config(format!("{ENV_MODEL} is not set")))?;
        let mut c = Self::new(base, model);
        c.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(c)
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Blocking chat-completions client with bounded retries and exponential
/// backoff on transport failures, 429 and 5xx responses.
pub struct HttpChatClient {
    config: ChatConfig,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig) -> Result<Self> {
        if config.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    fn attempt(&self, request: &ChatRequest) -> std::result::Result<String, (Error, bool)> {
        let mut req = self.http.post(self.config.endpoint()).json(request);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (Error::Transport(e.to_string()), true))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| (Error::Transport(e.to_string()), true))?;
        if !status.is_success() {
            let retry = status.as_u16() == 429 || status.is_server_error();
            return Err((
                Error::Service {
                    status: status.as_u16(),
                    body,
                },
                retry,
            ));
        }
        let wire: WireResponse = serde_json::from_str(&body).map_err(|e| (Error::parse(e.line(), e.column(), format!("chat response: {e}")), false))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (Error::parse(1, 1, "chat response has no message content"), false))?;
        Ok(content)
    }
}

impl ChatComplete for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err((err, retry)) => {
                    if !retry || attempt >= self.config.max_attempts {
                        return Err(err);
                    }
                    log::warn!("chat attempt {attempt} failed: {err}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

const SYSTEM_PROMPT: &str = "You are a navigation assistant helping an agent find an object in an indoor scene. \
Reason in two phases. Perception: list the salient objects you are told are in view. \
Planning: decide how the agent should move. Reply with exactly these lines:\n\
OBJECTS: <comma-separated object categories, or none>\n\
SUGGESTION: <short navigation suggestion>\n\
ACTION: <one of move_forward, turn_left, turn_right, look_up, look_down, stop>\n\
The ACTION line must be the last line.";

/// Builds the per-step request. The view is described symbolically since
/// observations carry no pixels.
pub fn build_messages(observation: &Observation) -> Vec<ChatMessage> {
    let mut view = String::new();
    if observation.visible_objects.is_empty() {
        view.push_str("Nothing notable is in view.");
    } else {
        for o in &observation.visible_objects {
            view.push_str(&format!(
                "- {} at bearing {:+.0} degrees, {:.1} cells away\n",
                o.category, o.bearing_deg, o.distance_cells
            ));
        }
    }
    let pitch = match observation.pose.pitch {
        -1 => "down",
        1 => "up",
        _ => "level",
    };
    let user = format!(
        "Target object: {}.\nStep {}. Camera pitch: {}.\nIn view:\n{}",
        observation.target_category, observation.step_index, pitch, view
    );
    vec![ChatMessage::new("system", SYSTEM_PROMPT), ChatMessage::new("user", user)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChatAnswer {
    pub objects: Vec<String>,
    pub suggestion: Option<String>,
    pub action: Action,
}

/// Parses a reply under the strict grammar: an `OBJECTS:` line and a final
/// `ACTION: <name>` line are required.
pub fn parse_answer(raw: &str, step: usize) -> Result<ChatAnswer> {
    let fail = |message: &str| Error::Annotation {
        step,
        message: message.into(),
        raw: raw.into(),
    };
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with("```")).collect();
    let last = lines.last().ok_or_else(|| fail("empty response"))?;
    let name = last.strip_prefix("ACTION:").ok_or_else(|| fail("last line is not `ACTION: <name>`"))?.trim();
    let action: Action = name.parse().map_err(|_| fail("unknown action name"))?;
    let objects_line = lines
        .iter()
        .find_map(|l| l.strip_prefix("OBJECTS:"))
        .ok_or_else(|| fail("missing `OBJECTS:` line"))?
        .trim();
    let objects = if objects_line.eq_ignore_ascii_case("none") || objects_line.is_empty() {
        Vec::new()
    } else {
        objects_line.split(',').map(|s| s.trim().to_lowercase().replace(' ', "_")).filter(|s| !s.is_empty()).collect()
    };
    let suggestion = lines.iter().find_map(|l| l.strip_prefix("SUGGESTION:")).map(|s| s.trim().to_string());
    Ok(ChatAnswer {
        objects,
        suggestion,
        action,
    })
}
