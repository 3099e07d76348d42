//! OpenAI-compatible HTTP backend.
//!
//! Speaks `POST {base}/chat/completions` and `POST {base}/embeddings` with
//! a bearer token. Endpoint and key come from configuration (usually the
//! `TK_LLM_BASE_URL` / `TK_LLM_API_KEY` environment variables). All
//! provider and decoding problems surface as transport errors; the gateway
//! owns retries.

use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gateway::{Backend, ChatRequest, EmbeddingVector, Role, SchemaTag};

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    model: String,
    embed_model: String,
}

impl HttpBackend {
    pub fn new(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
        embed_model: impl Into<String>,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(timeout)
            .build();
        HttpBackend {
            agent,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            model: model.into(),
            embed_model: embed_model.into(),
        }
    }

    fn post(&self, path: &str, body: Value) -> Result<Value> {
        let url = format!("{}{path}", self.base_url);
        let response = self
            .agent
            .post(&url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .set("Content-Type", "application/json")
            .send_string(&body.to_string());
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let snippet: String = detail.chars().take(300).collect();
                return Err(Error::Transport(format!("{url}: HTTP {code}: {snippet}")));
            }
            Err(e) => return Err(Error::Transport(format!("{url}: {e}"))),
        };
        response
            .into_json::<Value>()
            .map_err(|e| Error::Transport(format!("{url}: invalid JSON response: {e}")))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    "content": m.text,
                })
            })
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        // Ask for a JSON object when the call expects a structured shape.
        if matches!(
            request.schema,
            Some(
                SchemaTag::TkRow
                    | SchemaTag::Correction
                    | SchemaTag::RequiredCorrections
                    | SchemaTag::FilterKnowledge
                    | SchemaTag::NaiveKnowledge
            )
        ) {
            body["response_format"] = json!({"type": "json_object"});
        }
        let reply = self.post("/chat/completions", body)?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.to_string())
            .ok_or_else(|| {
                Error::Transport("chat response lacks choices[0].message.content".into())
            })
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let reply = self.post(
            "/embeddings",
            json!({"model": self.embed_model, "input": text}),
        )?;
        let values: Vec<f64> = reply["data"][0]["embedding"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
            .unwrap_or_default();
        if values.is_empty() {
            return Err(Error::Transport(
                "embedding response lacks data[0].embedding".into(),
            ));
        }
        let model_tag = reply["model"]
            .as_str()
            .unwrap_or(&self.embed_model)
            .to_string();
        Ok(EmbeddingVector { values, model_tag })
    }

    fn name(&self) -> &'static str {
        "http"
    }
}
