//! Scriptable in-process backend for tests and benchmarks.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use super::{
    Backend, BackendCapabilities, BackendError, ChatRequest, ChatResponse, ProbeMeta, TokenLogprob,
};

#[derive(Debug, Clone, PartialEq)]
pub struct MockReply {
    pub completion: String,
    pub probability: f64,
}

impl MockReply {
    pub fn new(completion: &str, probability: f64) -> Self {
        Self {
            completion: completion.to_string(),
            probability,
        }
    }
}

type Responder = Box<dyn Fn(&ProbeMeta) -> Option<MockReply> + Send + Sync>;

/// Answers from a planted table keyed by (subject, property, prefix),
/// optionally narrowed to one template, then from a responder closure,
/// then from a filler reply.
pub struct MockBackend {
    caps: BackendCapabilities,
    planted: HashMap<(String, String, String), MockReply>,
    planted_template: HashMap<(String, String, usize, String), MockReply>,
    responder: Option<Responder>,
    filler: MockReply,
    refused: HashSet<String>,
    failures_left: AtomicUsize,
    latency: Duration,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(caps: BackendCapabilities) -> Self {
        Self {
            caps,
            planted: HashMap::new(),
            planted_template: HashMap::new(),
            responder: None,
            filler: MockReply::new("", 0.0),
            refused: HashSet::new(),
            failures_left: AtomicUsize::new(0),
            latency: Duration::ZERO,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn logprob(name: &str) -> Self {
        Self::new(BackendCapabilities {
            name: name.to_string(),
            exposes_logprobs: true,
            supports_logit_bias: true,
            supports_seed: true,
        })
    }

    pub fn vote(name: &str) -> Self {
        Self::new(BackendCapabilities {
            name: name.to_string(),
            exposes_logprobs: false,
            supports_logit_bias: false,
            supports_seed: false,
        })
    }

    pub fn plant(
        mut self,
        subject: &str,
        property: &str,
        prefix: &str,
        completion: &str,
        p: f64,
    ) -> Self {
        self.planted.insert(
            (subject.into(), property.into(), prefix.into()),
            MockReply::new(completion, p),
        );
        self
    }

    pub fn plant_template(
        mut self,
        subject: &str,
        property: &str,
        template: usize,
        prefix: &str,
        completion: &str,
        p: f64,
    ) -> Self {
        self.planted_template.insert(
            (subject.into(), property.into(), template, prefix.into()),
            MockReply::new(completion, p),
        );
        self
    }

    pub fn with_responder(
        mut self,
        f: impl Fn(&ProbeMeta) -> Option<MockReply> + Send + Sync + 'static,
    ) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_filler(mut self, filler: MockReply) -> Self {
        self.filler = filler;
        self
    }

    pub fn refuse_subject(mut self, subject: &str) -> Self {
        self.refused.insert(subject.to_string());
        self
    }

    /// The next `n` calls fail with a transport error.
    pub fn fail_first(self, n: usize) -> Self {
        self.failures_left.store(n, Ordering::SeqCst);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn reply_for(&self, meta: &ProbeMeta) -> MockReply {
        let templ_key = (
            meta.subject.clone(),
            meta.property_id.clone(),
            meta.template_index,
            meta.prefix.clone(),
        );
        if let Some(r) = self.planted_template.get(&templ_key) {
            return r.clone();
        }
        let key = (
            meta.subject.clone(),
            meta.property_id.clone(),
            meta.prefix.clone(),
        );
        if let Some(r) = self.planted.get(&key) {
            return r.clone();
        }
        self.responder
            .as_ref()
            .and_then(|f| f(meta))
            .unwrap_or_else(|| self.filler.clone())
    }
}

impl Backend for MockBackend {
    fn capabilities(&self) -> &BackendCapabilities {
        &self.caps
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let failing = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(BackendError::Transport("injected failure".into()));
        }
        let meta = request
            .meta
            .as_ref()
            .ok_or_else(|| BackendError::Protocol("mock backend needs probe metadata".into()))?;
        if self.refused.contains(&meta.subject) {
            return Err(BackendError::Refused("declined".into()));
        }
        let reply = self.reply_for(meta);
        let tokens = self.caps.exposes_logprobs.then(|| {
            vec![TokenLogprob {
                token: reply.completion.clone(),
                logprob: reply.probability.ln(),
            }]
        });
        Ok(ChatResponse {
            text: reply.completion,
            tokens,
        })
    }
}
