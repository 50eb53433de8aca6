use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{build_eval_prompt, sample_token, GenConfig, GenerationBackend, PromptTemplate};
use crate::corpus::Dataset;
use crate::encoder::EncoderClassifier;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Always answers with the same text.
#[derive(Debug, Clone)]
pub struct EchoBackend(pub String);

impl GenerationBackend for EchoBackend {
    fn generate(&self, _prompt: &str, _config: &GenConfig) -> Result<String> {
        Ok(self.0.clone())
    }
}

/// Answers text that contains no label word.
#[derive(Debug, Clone, Default)]
pub struct UnparseableBackend;

impl GenerationBackend for UnparseableBackend {
    fn generate(&self, _prompt: &str, _config: &GenConfig) -> Result<String> {
        Ok("I cannot say.".into())
    }
}

/// Answers each evaluation prompt with the gold label of its record.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    answers: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(dataset: &Dataset, template: &PromptTemplate) -> Result<Self> {
        let answers = dataset
            .records
            .iter()
            .map(|r| Ok((build_eval_prompt(&r.text, template)?, template.word(r.label).to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { answers })
    }
}

impl GenerationBackend for OracleBackend {
    fn generate(&self, prompt: &str, _config: &GenConfig) -> Result<String> {
        self.answers
            .get(prompt)
            .map(|w| format!(" {w}"))
            .ok_or_else(|| Error::Backend("prompt not in the oracle's dataset".into()))
    }
}

fn prompt_hash(prompt: &str) -> u64 {
    let mut h = DefaultHasher::new();
    prompt.hash(&mut h);
    h.finish()
}

/// Wraps another backend and sleeps a pseudo-random time before each call.
/// The delay depends only on the seed and the prompt.
pub struct RandomDelayBackend<B> {
    pub inner: B,
    pub max_delay: Duration,
    pub seed: u64,
}

impl<B: GenerationBackend> GenerationBackend for RandomDelayBackend<B> {
    fn generate(&self, prompt: &str, config: &GenConfig) -> Result<String> {
        use rand::Rng;
        let mut rng = substream(self.seed, "delay", prompt_hash(prompt));
        thread::sleep(self.max_delay.mul_f64(rng.gen::<f64>()));
        self.inner.generate(prompt, config)
    }
}

/// Samples a label word from fixed logits at the configured temperature.
/// The draw for a prompt depends only on the seed and the prompt text.
#[derive(Debug, Clone)]
pub struct SamplingBackend {
    pub logits: [f64; 3],
    pub words: [String; 3],
    pub seed: u64,
}

impl GenerationBackend for SamplingBackend {
    fn generate(&self, prompt: &str, config: &GenConfig) -> Result<String> {
        let mut rng = substream(self.seed, "sample", prompt_hash(prompt));
        Ok(self.words[sample_token(&self.logits, config.temperature, &mut rng)].clone())
    }
}

/// Runs the trained encoder on the headline inside the prompt and answers
/// with the predicted label word.
pub struct EncoderBackend {
    pub classifier: EncoderClassifier,
    pub template: PromptTemplate,
}

impl GenerationBackend for EncoderBackend {
    fn generate(&self, prompt: &str, _config: &GenConfig) -> Result<String> {
        let headline = self.template.headline_of(prompt).unwrap_or(prompt);
        Ok(self.template.word(self.classifier.predict(headline)?).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub url: String,
    /// Dot-separated path to the generated text in the response JSON;
    /// numeric segments index arrays, e.g. `choices.0.text`.
    pub text_path: String,
    pub timeout_secs: f64,
    /// Environment variable holding the auth token, if any.
    pub auth_env: Option<String>,
    pub auth_header: String,
    /// Prepended to the token, e.g. `"Bearer "`.
    pub auth_prefix: String,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080/generate".into(),
            text_path: "text".into(),
            timeout_secs: 30.0,
            auth_env: Some("FINSENT_BACKEND_TOKEN".into()),
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
        }
    }
}

/// POSTs `{"prompt", "max_tokens", "temperature"}` as JSON and reads the text
/// at `text_path` from the JSON reply.
pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0) || !config.timeout_secs.is_finite() {
            return Err(Error::InvalidArgument("timeout_secs must be positive".into()));
        }
        if config.url.is_empty() {
            return Err(Error::InvalidArgument("backend url is empty".into()));
        }
        let token = config.auth_env.as_ref().and_then(|v| std::env::var(v).ok());
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(config.timeout_secs)).build();
        Ok(Self { config, agent, token })
    }

    fn text_at<'a>(&self, mut value: &'a serde_json::Value) -> Option<&'a str> {
        for seg in self.config.text_path.split('.').filter(|s| !s.is_empty()) {
            value = match seg.parse::<usize>() {
                Ok(i) if value.is_array() => value.get(i)?,
                _ => value.get(seg)?,
            };
        }
        value.as_str()
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, prompt: &str, config: &GenConfig) -> Result<String> {
        let mut req = self.agent.post(&self.config.url);
        if let Some(token) = &self.token {
            req = req.set(&self.config.auth_header, &format!("{}{token}", self.config.auth_prefix));
        }
        let body = serde_json::json!({
            "prompt": prompt,
            "max_tokens": config.max_new_tokens,
            "temperature": config.temperature,
        });
        let reply: serde_json::Value = req
            .send_json(body)
            .map_err(|e| Error::Backend(e.to_string()))?
            .into_json()
            .map_err(|e| Error::Backend(format!("reply is not JSON: {e}")))?;
        self.text_at(&reply)
            .map(str::to_owned)
            .ok_or_else(|| Error::Backend(format!("no text at {:?} in reply", self.config.text_path)))
    }
}
