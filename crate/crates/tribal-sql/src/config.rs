//! Run configuration: defaults, TOML file overlay, environment overlay,
//! and constructors for the limit structs the rest of the crate consumes.
//!
//! Precedence, lowest to highest: built-in defaults, then the TOML file,
//! then environment variables (`TK_LLM_BASE_URL`, `TK_LLM_API_KEY`), then
//! explicit CLI flags (applied by the caller after loading).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentLimits, AugmentOptions, InjectionPoint, KnowledgeScope, RetrievalSource};
use crate::discovery::DiscoveryLimits;
use crate::error::{Error, Result};
use crate::gateway::http::HttpBackend;
use crate::gateway::scripted::ScriptedBackend;
use crate::gateway::{Backend, Gateway, GatewayLimits, SchemaTag};

/// Environment variable carrying the LLM endpoint.
pub const ENV_BASE_URL: &str = "TK_LLM_BASE_URL";
/// Environment variable carrying the LLM API key.
pub const ENV_API_KEY: &str = "TK_LLM_API_KEY";

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    // LLM endpoint.
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub embed_model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_cap: usize,
    // Retrieval.
    pub top_k: usize,
    // Agent loop.
    pub max_turns: usize,
    pub feedback_per_cte: usize,
    pub feedback_base: usize,
    pub strict_feedback_loop: bool,
    pub preview_rows: usize,
    // Discovery.
    pub max_iterations: usize,
    pub explore_cap: usize,
    pub enforce_atomicity: bool,
    pub generalize: bool,
    // Execution.
    pub timeout_ms: u64,
    // Evaluation.
    pub runs: usize,
    pub train_fraction: f64,
    pub seed: u64,
    // Scripted backend: schema-tag name (or "default") to script file.
    pub scripted: BTreeMap<String, PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            base_url: None,
            api_key: None,
            model: "gpt-4o".to_string(),
            embed_model: "text-embedding-3-small".to_string(),
            temperature: crate::gateway::DEFAULT_TEMPERATURE,
            max_tokens: crate::gateway::DEFAULT_TOKEN_CAP,
            retry_cap: 3,
            top_k: 5,
            max_turns: 20,
            feedback_per_cte: 2,
            feedback_base: 2,
            strict_feedback_loop: false,
            preview_rows: 10,
            max_iterations: 8,
            explore_cap: 5,
            enforce_atomicity: true,
            generalize: true,
            timeout_ms: 30_000,
            runs: 2,
            train_fraction: 0.25,
            seed: 0,
            scripted: BTreeMap::new(),
        }
    }
}

/// The TOML file shape: everything optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    base_url: Option<String>,
    api_key: Option<String>,
    model: Option<String>,
    embed_model: Option<String>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    retry_cap: Option<usize>,
    top_k: Option<usize>,
    max_turns: Option<usize>,
    feedback_per_cte: Option<usize>,
    feedback_base: Option<usize>,
    strict_feedback_loop: Option<bool>,
    preview_rows: Option<usize>,
    max_iterations: Option<usize>,
    explore_cap: Option<usize>,
    enforce_atomicity: Option<bool>,
    generalize: Option<bool>,
    timeout_ms: Option<u64>,
    runs: Option<usize>,
    train_fraction: Option<f64>,
    seed: Option<u64>,
    scripted: Option<BTreeMap<String, String>>,
}

macro_rules! overlay {
    ($self:ident, $partial:ident, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $partial.$field {
            $self.$field = v;
        })+
    };
}

impl RunConfig {
    /// Overlay values from a TOML file. Relative script paths resolve
    /// against the file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let partial: PartialConfig = toml::from_str(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(v) = partial.base_url.clone() {
            self.base_url = Some(v);
        }
        if let Some(v) = partial.api_key.clone() {
            self.api_key = Some(v);
        }
        overlay!(
            self, partial, model, embed_model, temperature, max_tokens, retry_cap, top_k,
            max_turns, feedback_per_cte, feedback_base, strict_feedback_loop, preview_rows,
            max_iterations, explore_cap, enforce_atomicity, generalize, timeout_ms, runs,
            train_fraction, seed,
        );
        if let Some(scripted) = partial.scripted {
            let dir = path.parent().unwrap_or_else(|| Path::new("."));
            for (tag, file) in scripted {
                let file = PathBuf::from(&file);
                let resolved = if file.is_absolute() {
                    file
                } else {
                    dir.join(file)
                };
                self.scripted.insert(tag, resolved);
            }
        }
        Ok(())
    }

    /// Overlay endpoint settings from the environment.
    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(ENV_BASE_URL) {
            if !v.is_empty() {
                self.base_url = Some(v);
            }
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            if !v.is_empty() {
                self.api_key = Some(v);
            }
        }
    }

    /// Check ranges and the scripted-tag names; errors name the key.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| Error::Config {
            key: key.to_string(),
            message,
        };
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(bad(
                "temperature",
                format!("must be within 0..=2, got {}", self.temperature),
            ));
        }
        if self.max_tokens == 0 {
            return Err(bad("max_tokens", "must be positive".to_string()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(bad(
                "train_fraction",
                format!("must be in (0, 1), got {}", self.train_fraction),
            ));
        }
        for (key, value) in [
            ("top_k", self.top_k),
            ("max_turns", self.max_turns),
            ("max_iterations", self.max_iterations),
            ("runs", self.runs),
            ("preview_rows", self.preview_rows),
        ] {
            if value == 0 {
                return Err(bad(key, "must be at least 1".to_string()));
            }
        }
        if self.timeout_ms == 0 {
            return Err(bad("timeout_ms", "must be positive".to_string()));
        }
        for tag in self.scripted.keys() {
            if tag != "default" && SchemaTag::parse(tag).is_none() {
                return Err(bad(
                    "scripted",
                    format!("unknown schema tag {tag:?}"),
                ));
            }
        }
        Ok(())
    }

    /// A copy safe to print or embed in reports: the API key is redacted.
    pub fn redacted(&self) -> RunConfig {
        let mut copy = self.clone();
        if copy.api_key.is_some() {
            copy.api_key = Some("***".to_string());
        }
        copy
    }

    pub fn gateway_limits(&self) -> GatewayLimits {
        GatewayLimits {
            retry_cap: self.retry_cap,
            max_token_cap: self.max_tokens,
            ..GatewayLimits::default()
        }
    }

    pub fn agent_limits(&self) -> AgentLimits {
        AgentLimits {
            max_turns: self.max_turns,
            feedback_per_cte: self.feedback_per_cte,
            feedback_base: self.feedback_base,
            format_retries: self.retry_cap.saturating_sub(1),
            preview_rows: self.preview_rows,
            strict_feedback_loop: self.strict_feedback_loop,
        }
    }

    pub fn discovery_limits(&self) -> DiscoveryLimits {
        DiscoveryLimits {
            max_iterations: self.max_iterations,
            explore_cap: self.explore_cap,
            enforce_atomicity: self.enforce_atomicity,
            generalize: self.generalize,
            preview_rows: self.preview_rows,
        }
    }

    pub fn augment_options(
        &self,
        scope: KnowledgeScope,
        source: RetrievalSource,
        injection: InjectionPoint,
    ) -> AugmentOptions {
        AugmentOptions {
            scope,
            source,
            injection,
            top_k: self.top_k,
        }
    }

    pub fn exec_timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    /// Build the backend this configuration describes: scripted when any
    /// script files are declared, HTTP otherwise.
    pub fn build_backend(&self) -> Result<Arc<dyn Backend>> {
        if !self.scripted.is_empty() {
            let mut backend = ScriptedBackend::new();
            for (tag, file) in &self.scripted {
                backend.add_file(tag, file)?;
            }
            return Ok(Arc::new(backend));
        }
        let base_url = self.base_url.as_deref().ok_or_else(|| Error::Config {
            key: "base_url".to_string(),
            message: format!(
                "no LLM endpoint: set base_url (or {ENV_BASE_URL}) or a [scripted] section"
            ),
        })?;
        Ok(Arc::new(HttpBackend::new(
            base_url,
            self.api_key.clone().unwrap_or_default(),
            self.model.clone(),
            self.embed_model.clone(),
            self.exec_timeout().max(Duration::from_secs(60)),
        )))
    }

    /// Build the gateway for this configuration.
    pub fn build_gateway(&self) -> Result<Gateway> {
        Ok(Gateway::new(self.build_backend()?, self.gateway_limits()))
    }
}

/// Load a configuration: defaults, then the optional file, then the
/// environment. The result is validated.
pub fn load(path: Option<&Path>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = path {
        config.apply_file(path)?;
    }
    config.apply_env();
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.temperature, 0.5);
        assert_eq!(c.max_tokens, 128_000);
        assert_eq!(c.top_k, 5);
        assert_eq!(c.max_turns, 20);
        assert_eq!(c.max_iterations, 8);
        assert_eq!(c.explore_cap, 5);
        assert_eq!(c.retry_cap, 3);
        assert_eq!(c.feedback_per_cte, 2);
        assert_eq!(c.feedback_base, 2);
        assert_eq!(c.timeout_ms, 30_000);
        assert_eq!(c.runs, 2);
        assert_eq!(c.train_fraction, 0.25);
        assert!(c.enforce_atomicity);
        assert!(c.generalize);
        c.validate().unwrap();
    }

    #[test]
    fn file_overlays_and_resolves_script_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "temperature = 0.1\nmax_turns = 5\n\n[scripted]\ntk_row = \"scripts/rows.jsonl\"\ndefault = \"/abs/default.jsonl\"\n",
        )
        .unwrap();
        let mut c = RunConfig::default();
        c.apply_file(&path).unwrap();
        assert_eq!(c.temperature, 0.1);
        assert_eq!(c.max_turns, 5);
        assert_eq!(c.runs, 2, "untouched fields keep defaults");
        assert_eq!(
            c.scripted["tk_row"],
            dir.path().join("scripts/rows.jsonl"),
            "relative script paths resolve against the config file"
        );
        assert_eq!(c.scripted["default"], PathBuf::from("/abs/default.jsonl"));
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_offender() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "temprature = 0.1\n").unwrap();
        let err = RunConfig::default().apply_file(&path).unwrap_err();
        assert!(err.to_string().contains("temprature"), "{err}");

        let mut c = RunConfig::default();
        c.temperature = 3.0;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("temperature"), "{err}");

        let mut c = RunConfig::default();
        c.scripted.insert("nonsense".into(), "x.jsonl".into());
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");

        let mut c = RunConfig::default();
        c.runs = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn env_overrides_file() {
        // Environment mutation: run single-threaded logic inline, restoring
        // afterwards so other tests are unaffected.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "base_url = \"http://file.example\"\n").unwrap();
        let old = std::env::var(ENV_BASE_URL).ok();
        std::env::set_var(ENV_BASE_URL, "http://env.example");
        let c = load(Some(&path)).unwrap();
        match old {
            Some(v) => std::env::set_var(ENV_BASE_URL, v),
            None => std::env::remove_var(ENV_BASE_URL),
        }
        assert_eq!(c.base_url.as_deref(), Some("http://env.example"));
    }

    #[test]
    fn redaction_hides_the_api_key() {
        let mut c = RunConfig::default();
        c.api_key = Some("secret-key".into());
        let shown = serde_json::to_string(&c.redacted()).unwrap();
        assert!(!shown.contains("secret-key"));
        assert!(shown.contains("***"));
        assert_eq!(c.api_key.as_deref(), Some("secret-key"), "original intact");
    }

    #[test]
    fn backend_selection_prefers_scripts_and_errors_without_endpoint() {
        let c = RunConfig::default();
        let err = c.build_backend().err().unwrap();
        assert!(err.to_string().contains("base_url"), "{err}");

        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("s.jsonl");
        std::fs::write(&script, "").unwrap();
        let mut c = RunConfig::default();
        c.scripted.insert("default".into(), script);
        let backend = c.build_backend().unwrap();
        assert_eq!(backend.name(), "scripted");

        let mut c = RunConfig::default();
        c.base_url = Some("http://llm.example".into());
        let backend = c.build_backend().unwrap();
        assert_eq!(backend.name(), "http");
    }

    #[test]
    fn limit_constructors_carry_the_values() {
        let mut c = RunConfig::default();
        c.max_turns = 7;
        c.max_iterations = 3;
        c.strict_feedback_loop = true;
        assert_eq!(c.agent_limits().max_turns, 7);
        assert!(c.agent_limits().strict_feedback_loop);
        assert_eq!(c.discovery_limits().max_iterations, 3);
        assert_eq!(c.gateway_limits().retry_cap, 3);
        assert_eq!(c.exec_timeout(), Duration::from_millis(30_000));
    }
}
