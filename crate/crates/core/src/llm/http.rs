use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, Completion, LlmBackend, LlmError, ModelSpec, Usage};

/// OpenAI-compatible `/chat/completions` and `/embeddings` client.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Backend(e.to_string()))?;
        Ok(HttpBackend { client })
    }

    fn post(&self, spec: &ModelSpec, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{path}", spec.endpoint.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(body);
        if let Some(var) = &spec.auth_env {
            let key = std::env::var(var)
                .map_err(|_| LlmError::Backend(format!("environment variable {var} is not set")))?;
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Temporary(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(LlmError::Temporary(format!("{url}: HTTP {status}")));
        }
        let text = resp.text().map_err(|e| LlmError::Temporary(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Backend(format!("{url}: HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| LlmError::Backend(format!("{url}: bad JSON: {e}")))
    }
}

fn served_name(spec: &ModelSpec) -> &str {
    spec.served_name.as_deref().unwrap_or(&spec.model_id)
}

impl LlmBackend for HttpBackend {
    fn chat(&self, spec: &ModelSpec, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut body = json!({
            "model": served_name(spec),
            "messages": request.messages,
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_tokens,
        });
        if let (Some(schema), true) = (&request.output_schema, spec.structured_output) {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": "output", "schema": schema, "strict": true},
            });
        }
        let v = self.post(spec, "chat/completions", &body)?;
        let choice = &v["choices"][0];
        let content = choice["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::Backend(format!("no message content in response: {v}")))?
            .to_string();
        Ok(Completion {
            content,
            finish_reason: choice["finish_reason"].as_str().unwrap_or("unknown").to_string(),
            usage: Usage {
                prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
                completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
            },
            fingerprint: v["system_fingerprint"]
                .as_str()
                .map(str::to_string)
                .or_else(|| v["model"].as_str().map(str::to_string)),
        })
    }

    fn embed(&self, spec: &ModelSpec, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let v = self.post(spec, "embeddings", &json!({"model": served_name(spec), "input": texts}))?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| LlmError::Backend("embedding response has no data array".into()))?;
        let mut rows: Vec<(u64, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, row) in data.iter().enumerate() {
            let vec: Vec<f64> = row["embedding"]
                .as_array()
                .ok_or_else(|| LlmError::Backend("embedding row without vector".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(f64::NAN))
                .collect();
            rows.push((row["index"].as_u64().unwrap_or(pos as u64), vec));
        }
        rows.sort_by_key(|r| r.0);
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}
