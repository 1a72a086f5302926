//! Adapter for OpenAI-compatible chat-completion endpoints.

use std::collections::{BTreeMap, HashMap};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendCapabilities, BackendError, ChatRequest, ChatResponse, TokenLogprob};

/// Chat-completions client. Logit bias needs token ids, so it is only
/// advertised when a vocabulary mapping is supplied.
pub struct OpenAiBackend {
    caps: BackendCapabilities,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    vocab: Option<HashMap<String, u32>>,
    agent: ureq::Agent,
}

impl OpenAiBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(60))
            .build();
        Self {
            caps: BackendCapabilities {
                name: model.to_string(),
                exposes_logprobs: true,
                supports_logit_bias: false,
                supports_seed: true,
            },
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            vocab: None,
            agent,
        }
    }

    pub fn with_vocab(mut self, vocab: HashMap<String, u32>) -> Self {
        self.caps.supports_logit_bias = true;
        self.vocab = Some(vocab);
        self
    }

    /// For endpoints that return text only.
    pub fn without_logprobs(mut self) -> Self {
        self.caps.exposes_logprobs = false;
        self
    }

    pub fn body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        if let Some(k) = request.top_logprobs {
            body["logprobs"] = json!(true);
            body["top_logprobs"] = json!(k);
        }
        if let Some(vocab) = &self.vocab {
            let ids: BTreeMap<String, i32> = request
                .logit_bias
                .iter()
                .flat_map(|(tok, &b)| {
                    [tok.clone(), format!(" {tok}")]
                        .into_iter()
                        .filter_map(move |t| vocab.get(&t).map(|id| (id.to_string(), b)))
                })
                .collect();
            if !ids.is_empty() {
                body["logit_bias"] = json!(ids);
            }
        }
        body
    }
}

pub fn parse_response(v: &Value) -> Result<ChatResponse, BackendError> {
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(BackendError::Refused("content filter".into()));
    }
    let message = &choice["message"];
    if let Some(refusal) = message.get("refusal").and_then(Value::as_str) {
        return Err(BackendError::Refused(refusal.to_string()));
    }
    let text = message
        .get("content")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let tokens = choice
        .get("logprobs")
        .and_then(|l| l.get("content"))
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .map(|t| {
                    Ok(TokenLogprob {
                        token: t["token"].as_str().unwrap_or_default().to_string(),
                        logprob: t["logprob"].as_f64().ok_or_else(|| {
                            BackendError::Protocol("token without logprob".into())
                        })?,
                    })
                })
                .collect::<Result<Vec<_>, BackendError>>()
        })
        .transpose()?;
    Ok(ChatResponse { text, tokens })
}

impl Backend for OpenAiBackend {
    fn capabilities(&self) -> &BackendCapabilities {
        &self.caps
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(self.body(request)) {
            Ok(resp) => {
                let v: Value = resp
                    .into_json()
                    .map_err(|e| BackendError::Transport(format!("reading body: {e}")))?;
                parse_response(&v)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    Err(BackendError::Transport(format!("HTTP {code}: {detail}")))
                } else {
                    Err(BackendError::Protocol(format!("HTTP {code}: {detail}")))
                }
            }
            Err(e) => Err(BackendError::Transport(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ChatRequest {
        ChatRequest {
            system: "sys".into(),
            user: "Harry Potter lives in Ho".into(),
            temperature: 0.0,
            max_tokens: 10,
            seed: Some(7),
            top_logprobs: Some(20),
            logit_bias: [("the".to_string(), -100), ("school".to_string(), -50)].into(),
            meta: None,
        }
    }

    #[test]
    fn body_maps_bias_through_vocab() {
        let vocab: HashMap<String, u32> =
            [("the".into(), 5), (" the".into(), 6), ("school".into(), 9)].into();
        let backend = OpenAiBackend::new("http://localhost:1/v1/", "m", None).with_vocab(vocab);
        assert_eq!(backend.endpoint, "http://localhost:1/v1/chat/completions");
        let body = backend.body(&request());
        assert_eq!(body["logit_bias"]["5"], -100);
        assert_eq!(body["logit_bias"]["6"], -100);
        assert_eq!(body["logit_bias"]["9"], -50);
        assert_eq!(body["seed"], 7);
        assert_eq!(body["top_logprobs"], 20);
        assert_eq!(body["messages"][1]["content"], "Harry Potter lives in Ho");
    }

    #[test]
    fn body_without_vocab_has_no_bias() {
        let backend = OpenAiBackend::new("http://localhost:1/v1", "m", None);
        assert!(!backend.capabilities().supports_logit_bias);
        assert!(backend.body(&request()).get("logit_bias").is_none());
    }

    #[test]
    fn parses_tokens_and_refusals() {
        let v = json!({"choices": [{"message": {"content": "Hogwarts"}, "finish_reason": "stop",
            "logprobs": {"content": [{"token": "Hog", "logprob": -0.1}, {"token": "warts", "logprob": -0.2}]}}]});
        let r = parse_response(&v).unwrap();
        assert_eq!(r.text, "Hogwarts");
        assert_eq!(r.tokens.unwrap().len(), 2);

        let refused = json!({"choices": [{"message": {"content": null, "refusal": "no"}}]});
        assert!(matches!(
            parse_response(&refused),
            Err(BackendError::Refused(_))
        ));
        assert!(matches!(
            parse_response(&json!({})),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn unreachable_host_is_transport_error() {
        let backend = OpenAiBackend::new("http://127.0.0.1:9/v1", "m", None);
        assert!(matches!(
            backend.complete(&request()),
            Err(BackendError::Transport(_))
        ));
    }
}
