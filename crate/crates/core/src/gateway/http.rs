//! OpenAI-compatible chat and embedding providers over HTTP.

use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingProvider};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub key_env: String,
}

fn api_key(cfg: &HttpConfig) -> Result<String, String> {
    std::env::var(&cfg.key_env).map_err(|_| format!("environment variable {} is not set", cfg.key_env))
}

fn post(cfg: &HttpConfig, path: &str, body: Value) -> Result<Value, String> {
    let key = api_key(cfg)?;
    let url = format!("{}/{}", cfg.endpoint.trim_end_matches('/'), path);
    ureq::post(&url)
        .header("Authorization", &format!("Bearer {key}"))
        .send_json(body)
        .map_err(|e| e.to_string())?
        .body_mut()
        .read_json::<Value>()
        .map_err(|e| e.to_string())
}

pub struct HttpChat {
    pub config: HttpConfig,
}

impl ChatProvider for HttpChat {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn chat(&self, request: &ChatRequest<'_>) -> Result<String, String> {
        let body = json!({
            "model": self.config.model,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let v = post(&self.config, "chat/completions", body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "reply has no message content".to_string())
    }
}

pub struct HttpEmbedding {
    pub config: HttpConfig,
    pub dimension: usize,
}

impl EmbeddingProvider for HttpEmbedding {
    fn id(&self) -> String {
        format!("http:{}:{}", self.config.model, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, String> {
        let v = post(
            &self.config,
            "embeddings",
            json!({ "model": self.config.model, "input": texts, "dimensions": self.dimension }),
        )?;
        let data = v["data"].as_array().ok_or("reply has no data array")?;
        data.iter()
            .map(|d| {
                d["embedding"]
                    .as_array()
                    .ok_or_else(|| "entry has no embedding".to_string())?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| "non-numeric embedding value".to_string()))
                    .collect()
            })
            .collect()
    }
}
