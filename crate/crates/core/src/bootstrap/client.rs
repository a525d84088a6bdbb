//! Prompt construction and transports for talking to a real model.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::geometry::CoordText;
use crate::model::{ImageRecord, Task};
use crate::templates::{instantiate_template, BankKey, TemplateBank};

use super::{ClientError, ModelClient};

/// Sends one prompt about one image and returns the raw answer text.
pub trait Transport: Send + Sync {
    fn complete(&self, image: &ImageRecord, prompt: &str) -> Result<String, ClientError>;
}

/// A [`ModelClient`] that renders the describe and ground prompts from the
/// first `ground_caption` and `grounding` templates and forwards them to a
/// [`Transport`].
#[derive(Debug, Clone)]
pub struct PromptedClient<T> {
    transport: T,
    describe_template: String,
    ground_template: String,
}

impl<T: Transport> PromptedClient<T> {
    pub fn new(transport: T, bank: &TemplateBank) -> Self {
        let first = |task| {
            bank.templates(BankKey::new(task, 1))
                .first()
                .cloned()
                .unwrap_or_default()
        };
        Self {
            transport,
            describe_template: first(Task::GroundCaption),
            ground_template: first(Task::Grounding),
        }
    }

    pub fn describe_prompt(&self, coords: &CoordText) -> Result<String, ClientError> {
        let b = BTreeMap::from([("object", coords.to_string())]);
        instantiate_template(&self.describe_template, &b).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn ground_prompt(&self, description: &str) -> Result<String, ClientError> {
        let b = BTreeMap::from([("expr", description.to_string())]);
        instantiate_template(&self.ground_template, &b).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }
}

impl<T: Transport> ModelClient for PromptedClient<T> {
    fn describe(&self, image: &ImageRecord, coords: &CoordText) -> Result<String, ClientError> {
        self.transport.complete(image, &self.describe_prompt(coords)?)
    }

    fn ground(&self, image: &ImageRecord, description: &str) -> Result<String, ClientError> {
        self.transport.complete(image, &self.ground_prompt(description)?)
    }
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    image_uri: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_base64: Option<String>,
    prompt: &'a str,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    text: String,
}

/// JSON-over-HTTP transport.
///
/// Each call is a `POST` of `{"image_uri": .., "prompt": ..}` (or
/// `{"image_base64": .., "prompt": ..}` when inlining images) expecting
/// `{"text": ..}` back.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    inline_images: bool,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: endpoint.into(),
            token,
            inline_images: false,
        }
    }

    /// Read the image file named by the URI and send its bytes instead.
    pub fn inline_images(mut self, yes: bool) -> Self {
        self.inline_images = yes;
        self
    }

    fn request<'a>(
        &self,
        image: &'a ImageRecord,
        prompt: &'a str,
    ) -> Result<CompletionRequest<'a>, ClientError> {
        if !self.inline_images {
            return Ok(CompletionRequest {
                image_uri: Some(&image.uri),
                image_base64: None,
                prompt,
            });
        }
        let path = image.uri.strip_prefix("file://").unwrap_or(&image.uri);
        let bytes = std::fs::read(path)
            .map_err(|e| ClientError::Transport(format!("reading {path}: {e}")))?;
        Ok(CompletionRequest {
            image_uri: None,
            image_base64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
            prompt,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, image: &ImageRecord, prompt: &str) -> Result<String, ClientError> {
        let body = self.request(image, prompt)?;
        let mut req = self.agent.post(&self.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(map_ureq)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Transport(format!("HTTP {status}")));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Protocol(e.to_string()))?;
        Ok(parsed.text)
    }
}

fn map_ureq(e: ureq::Error) -> ClientError {
    match e {
        ureq::Error::Timeout(_) => ClientError::Timeout,
        other => ClientError::Transport(other.to_string()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub image_id: String,
    pub prompt: String,
    pub response: String,
}

/// Replays recorded answers keyed by `(image_id, prompt)`.
#[derive(Debug, Clone, Default)]
pub struct TranscriptTransport {
    entries: HashMap<(String, String), String>,
}

impl TranscriptTransport {
    pub fn new(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|e| ((e.image_id, e.prompt), e.response))
                .collect(),
        }
    }

    /// Load a JSON-lines file of [`TranscriptEntry`] records.
    pub fn from_path(path: &Path) -> Result<Self, ClientError> {
        let file = std::fs::File::open(path)
            .map_err(|e| ClientError::Transport(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| ClientError::Transport(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                ClientError::Protocol(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            entries.push(entry);
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for TranscriptTransport {
    fn complete(&self, image: &ImageRecord, prompt: &str) -> Result<String, ClientError> {
        self.entries
            .get(&(image.image_id.clone(), prompt.to_string()))
            .cloned()
            .ok_or_else(|| {
                ClientError::Protocol(format!("no transcript entry for image {}", image.image_id))
            })
    }
}
