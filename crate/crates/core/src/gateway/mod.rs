//! Uniform access to probed models.
//!
//! Every probe becomes one chat-style request carrying the fixed
//! fragment-correction instruction (plus the property's format constraint),
//! deterministic decoding parameters and, where supported, a logit bias that
//! suppresses function words and generic hypernyms. Responses are reduced to
//! the completed value span and, for log-prob backends, the product of the
//! span's token probabilities.

mod baseline;
mod extract;
pub mod mock;
pub mod openai;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::PropertySpec;
use crate::probe::Probe;

pub use baseline::{BaselineEntry, BaselineKey, BaselineStore, EnsureReport, BASELINE_SUBJECT};
pub use extract::{extract_span, span_probability};

pub const SYSTEM_INSTRUCTION: &str =
    "You are given phrases with a fragmented last word. Output only the corrected last word(s).";

pub const FUNCTION_WORD_BIAS: i32 = -100;
pub const HYPERNYM_BIAS: i32 = -50;

static FUNCTION_WORDS: &str = include_str!("../../data/function_words.txt");

/// The shipped function-word and punctuation list.
pub fn function_words() -> impl Iterator<Item = &'static str> {
    FUNCTION_WORDS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("probe {0} has no recorded response")]
    NotRecorded(String),
    #[error("baseline store io: {0}")]
    Io(#[from] std::io::Error),
    #[error("baseline store record: {0}")]
    Record(#[from] serde_json::Error),
}

/// Errors a backend adapter may report for a single request.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    /// Network or server trouble; the request may be retried.
    #[error("transport: {0}")]
    Transport(String),
    /// The model declined to answer. Treated as an empty completion.
    #[error("refused: {0}")]
    Refused(String),
    /// Malformed response or unusable request; not retried.
    #[error("protocol: {0}")]
    Protocol(String),
    /// Replay fixture has no entry for this request.
    #[error("not recorded: {0}")]
    NotRecorded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Logprob,
    Vote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCapabilities {
    pub name: String,
    pub exposes_logprobs: bool,
    pub supports_logit_bias: bool,
    pub supports_seed: bool,
}

impl BackendCapabilities {
    pub fn modality(&self) -> Modality {
        if self.exposes_logprobs {
            Modality::Logprob
        } else {
            Modality::Vote
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub top_logprobs: u8,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 10,
            seed: 0,
            top_logprobs: 20,
        }
    }
}

/// Identifies which probe a request belongs to. Not sent over the wire;
/// used by mock and replay backends to look up responses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeMeta {
    pub subject: String,
    pub property_id: String,
    pub template_index: usize,
    pub prefix: String,
}

impl ProbeMeta {
    pub fn of(probe: &Probe) -> Self {
        Self {
            subject: probe.subject.clone(),
            property_id: probe.property_id.clone(),
            template_index: probe.template_index,
            prefix: probe.prefix.as_str().to_string(),
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.subject == BASELINE_SUBJECT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub top_logprobs: Option<u8>,
    pub logit_bias: BTreeMap<String, i32>,
    #[serde(skip)]
    pub meta: Option<ProbeMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub tokens: Option<Vec<TokenLogprob>>,
}

/// A probed model. Implementations must tolerate concurrent calls.
pub trait Backend: Send + Sync {
    fn capabilities(&self) -> &BackendCapabilities;
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

/// Logit-bias entries keyed by token string, plus a note when the backend
/// cannot apply them (scoring then relies on post-hoc filtering alone).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LogitBias {
    pub entries: BTreeMap<String, i32>,
    pub note: Option<String>,
}

/// Strong suppression of function words and punctuation, milder
/// suppression of the property's generic hypernyms.
pub fn apply_logit_bias(capabilities: &BackendCapabilities, property: &PropertySpec) -> LogitBias {
    if !capabilities.supports_logit_bias {
        return LogitBias {
            entries: BTreeMap::new(),
            note: Some(format!(
                "{} does not support logit bias; falling back to post-hoc filtering",
                capabilities.name
            )),
        };
    }
    let mut entries: BTreeMap<String, i32> = function_words()
        .map(|w| (w.to_string(), FUNCTION_WORD_BIAS))
        .collect();
    for h in &property.hypernyms {
        entries.entry(h.to_lowercase()).or_insert(HYPERNYM_BIAS);
    }
    LogitBias {
        entries,
        note: None,
    }
}

/// The user-prompt request for one probe.
pub fn build_request(
    probe: &Probe,
    property: &PropertySpec,
    capabilities: &BackendCapabilities,
    decoding: &DecodingConfig,
    bias: &LogitBias,
) -> ChatRequest {
    let system = match &property.format_constraint {
        Some(fc) => format!("{SYSTEM_INSTRUCTION} {fc}"),
        None => SYSTEM_INSTRUCTION.to_string(),
    };
    ChatRequest {
        system,
        user: probe.prompt.clone(),
        temperature: decoding.temperature,
        max_tokens: decoding.max_tokens,
        seed: capabilities.supports_seed.then_some(decoding.seed),
        top_logprobs: capabilities
            .exposes_logprobs
            .then_some(decoding.top_logprobs),
        logit_bias: bias.entries.clone(),
        meta: Some(ProbeMeta::of(probe)),
    }
}

/// The model's answer to one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe: Probe,
    pub completion: String,
    /// Product of the extracted span's token probabilities; present iff
    /// the backend exposes log-probabilities.
    pub sequence_probability: Option<f64>,
    pub modality: Modality,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: usize) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
        }
    }
}

/// Converts a raw response into an outcome.
pub fn interpret_response(
    probe: &Probe,
    capabilities: &BackendCapabilities,
    response: &ChatResponse,
    latency: Duration,
) -> Result<ProbeOutcome, GatewayError> {
    let span = extract_span(&probe.stem, &response.text);
    let completion = response.text[span.clone()].to_string();
    let sequence_probability = if capabilities.exposes_logprobs {
        let tokens = response.tokens.as_deref().ok_or_else(|| {
            GatewayError::Protocol(format!(
                "{} returned no token log-probabilities",
                capabilities.name
            ))
        })?;
        Some(span_probability(&response.text, tokens, span))
    } else {
        None
    };
    Ok(ProbeOutcome {
        probe: probe.clone(),
        completion,
        sequence_probability,
        modality: capabilities.modality(),
        latency,
    })
}

/// A backend bound to decoding parameters, a retry policy and an in-flight limit.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    pub decoding: DecodingConfig,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            decoding: DecodingConfig::default(),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_decoding(mut self, decoding: DecodingConfig) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn capabilities(&self) -> &BackendCapabilities {
        self.backend.capabilities()
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    /// Issues one probe. Transport errors are retried with exponential
    /// backoff; refusals come back as empty completions.
    pub fn query(
        &self,
        probe: &Probe,
        property: &PropertySpec,
    ) -> Result<ProbeOutcome, GatewayError> {
        let caps = self.backend.capabilities();
        let bias = apply_logit_bias(caps, property);
        let request = build_request(probe, property, caps, &self.decoding, &bias);
        self.send(probe, &request)
    }

    fn send(&self, probe: &Probe, request: &ChatRequest) -> Result<ProbeOutcome, GatewayError> {
        let caps = self.backend.capabilities();
        let mut attempt = 0;
        loop {
            let started = Instant::now();
            match self.backend.complete(request) {
                Ok(response) => {
                    return interpret_response(probe, caps, &response, started.elapsed())
                }
                Err(BackendError::Refused(_)) => {
                    return Ok(ProbeOutcome {
                        probe: probe.clone(),
                        completion: String::new(),
                        sequence_probability: caps.exposes_logprobs.then_some(0.0),
                        modality: caps.modality(),
                        latency: started.elapsed(),
                    })
                }
                Err(BackendError::Transport(message)) => {
                    attempt += 1;
                    if attempt > self.retry.max_retries {
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    let delay = self.retry.base_delay * 2u32.saturating_pow(attempt as u32 - 1);
                    log::debug!(
                        "retrying probe after transport error ({message}); sleeping {delay:?}"
                    );
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(BackendError::Protocol(m)) => return Err(GatewayError::Protocol(m)),
                Err(BackendError::NotRecorded(m)) => return Err(GatewayError::NotRecorded(m)),
            }
        }
    }

    /// Issues every probe, at most `max_in_flight` at a time. Results are
    /// returned in probe order.
    pub fn query_all(
        &self,
        probes: &[Probe],
        property: &PropertySpec,
    ) -> Vec<Result<ProbeOutcome, GatewayError>> {
        let caps = self.backend.capabilities();
        let bias = apply_logit_bias(caps, property);
        let workers = self.max_in_flight.min(probes.len()).max(1);
        if workers == 1 {
            return probes
                .iter()
                .map(|p| self.send(p, &build_request(p, property, caps, &self.decoding, &bias)))
                .collect();
        }
        let next = AtomicUsize::new(0);
        let mut slots: Vec<Option<Result<ProbeOutcome, GatewayError>>> =
            (0..probes.len()).map(|_| None).collect();
        let results = parking_lot::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(probe) = probes.get(i) else { break };
                    let request = build_request(probe, property, caps, &self.decoding, &bias);
                    let outcome = self.send(probe, &request);
                    results.lock()[i] = Some(outcome);
                });
            }
        });
        slots
            .into_iter()
            .map(|r| r.expect("every probe answered"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockBackend, MockReply};
    use super::*;
    use crate::catalog::Catalog;
    use crate::probe::{build_plan, ground_truth_prefix};

    fn probe_for(subject: &str, pid: &str, template: usize, value: &str) -> (Probe, PropertySpec) {
        let cat = Catalog::shipped();
        let p = cat.get(pid).unwrap().clone();
        let probe = Probe::new(&p, template, subject, ground_truth_prefix(value).unwrap()).unwrap();
        (probe, p)
    }

    #[test]
    fn planted_mock_answer() {
        let mock =
            MockBackend::logprob("mock").plant("Harry Potter", "P551", "ho", "Hogwarts", 0.9);
        let gw = Gateway::new(Arc::new(mock));
        let (probe, p) = probe_for("Harry Potter", "P551", 1, "Hogwarts");
        let out = gw.query(&probe, &p).unwrap();
        assert_eq!(out.completion, "Hogwarts");
        assert!((out.sequence_probability.unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(out.modality, Modality::Logprob);
    }

    #[test]
    fn vote_backend_has_no_probability() {
        let mock = MockBackend::vote("votes").plant("Harry Potter", "P551", "ho", "Hogwarts", 0.9);
        let gw = Gateway::new(Arc::new(mock));
        let (probe, p) = probe_for("Harry Potter", "P551", 1, "Hogwarts");
        let out = gw.query(&probe, &p).unwrap();
        assert_eq!(out.completion, "Hogwarts");
        assert_eq!(out.sequence_probability, None);
        assert_eq!(out.modality, Modality::Vote);
    }

    #[test]
    fn echo_is_stripped_from_completion() {
        let mock = MockBackend::logprob("mock").plant(
            "Harry Potter",
            "P551",
            "ho",
            "lives in Hogwarts",
            0.5,
        );
        let gw = Gateway::new(Arc::new(mock));
        let (probe, p) = probe_for("Harry Potter", "P551", 1, "Hogwarts");
        assert_eq!(probe.prompt, "Harry Potter lives in ho");
        assert_eq!(gw.query(&probe, &p).unwrap().completion, "Hogwarts");
    }

    #[test]
    fn request_carries_fixed_parameters() {
        let cat = Catalog::shipped();
        let p = cat.get("P569").unwrap();
        let caps = BackendCapabilities {
            name: "api".into(),
            exposes_logprobs: true,
            supports_logit_bias: true,
            supports_seed: true,
        };
        let plan = build_plan("Harry Potter", p, &["31/07/1980".into()], 0, Some(1)).unwrap();
        let bias = apply_logit_bias(&caps, p);
        let req = build_request(&plan.probes[0], p, &caps, &DecodingConfig::default(), &bias);
        assert!(req.system.starts_with(SYSTEM_INSTRUCTION));
        assert!(req
            .system
            .ends_with(p.format_constraint.as_deref().unwrap()));
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.max_tokens, 10);
        assert_eq!(req.seed, Some(0));
        assert_eq!(req.top_logprobs, Some(20));
        assert_eq!(req.user, "Harry Potter was born on 31");

        let plain = BackendCapabilities {
            name: "plain".into(),
            exposes_logprobs: false,
            supports_logit_bias: false,
            supports_seed: false,
        };
        let bias = apply_logit_bias(&plain, p);
        let req = build_request(
            &plan.probes[0],
            p,
            &plain,
            &DecodingConfig::default(),
            &bias,
        );
        assert_eq!(req.seed, None);
        assert_eq!(req.top_logprobs, None);
        assert!(req.logit_bias.is_empty());
    }

    #[test]
    fn logit_bias_entries() {
        let cat = Catalog::shipped();
        let caps = BackendCapabilities {
            name: "api".into(),
            exposes_logprobs: true,
            supports_logit_bias: true,
            supports_seed: true,
        };
        let p69 = cat.get("P69").unwrap();
        let bias = apply_logit_bias(&caps, p69);
        assert_eq!(bias.entries.get("institution"), Some(&HYPERNYM_BIAS));
        assert_eq!(bias.entries.get("the"), Some(&FUNCTION_WORD_BIAS));
        assert_eq!(bias.entries.get("."), Some(&FUNCTION_WORD_BIAS));
        assert!(bias.note.is_none());

        let mut bare = p69.clone();
        bare.hypernyms.clear();
        let only_fw = apply_logit_bias(&caps, &bare);
        assert!(only_fw.entries.values().all(|&b| b == FUNCTION_WORD_BIAS));
        assert_eq!(
            only_fw.entries.len(),
            function_words()
                .collect::<std::collections::BTreeSet<_>>()
                .len()
        );

        let no_bias = BackendCapabilities {
            supports_logit_bias: false,
            ..caps
        };
        let empty = apply_logit_bias(&no_bias, p69);
        assert!(empty.entries.is_empty());
        assert!(empty.note.is_some());
    }

    #[test]
    fn shipped_function_word_list_size() {
        let n = function_words().count();
        assert!((200..=260).contains(&n), "{n}");
    }

    #[test]
    fn transport_errors_retry_then_fail() {
        let mock = MockBackend::logprob("flaky")
            .plant("Harry Potter", "P551", "ho", "Hogwarts", 0.9)
            .fail_first(2);
        let mock = Arc::new(mock);
        let gw = Gateway::new(mock.clone()).with_retry(RetryPolicy::immediate(3));
        let (probe, p) = probe_for("Harry Potter", "P551", 1, "Hogwarts");
        assert_eq!(gw.query(&probe, &p).unwrap().completion, "Hogwarts");
        assert_eq!(mock.calls(), 3);

        let always = Arc::new(MockBackend::logprob("down").fail_first(usize::MAX));
        let gw = Gateway::new(always.clone()).with_retry(RetryPolicy::immediate(3));
        match gw.query(&probe, &p) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(always.calls(), 4);
    }

    #[test]
    fn refusal_is_empty_completion() {
        let mock = MockBackend::logprob("shy").refuse_subject("Harry Potter");
        let gw = Gateway::new(Arc::new(mock));
        let (probe, p) = probe_for("Harry Potter", "P551", 1, "Hogwarts");
        let out = gw.query(&probe, &p).unwrap();
        assert_eq!(out.completion, "");
        assert_eq!(out.sequence_probability, Some(0.0));
    }

    #[test]
    fn identical_queries_are_identical() {
        let mock = MockBackend::logprob("mock").with_filler(MockReply::new("Spain", 0.2));
        let gw = Gateway::new(Arc::new(mock));
        let (probe, p) = probe_for("Harry Potter", "P551", 0, "Hogwarts");
        let mut a = gw.query(&probe, &p).unwrap();
        let mut b = gw.query(&probe, &p).unwrap();
        a.latency = Duration::ZERO;
        b.latency = Duration::ZERO;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn query_all_preserves_order() {
        let cat = Catalog::shipped();
        let p = cat.get("P551").unwrap();
        let plan = build_plan("Harry Potter", p, &["Hogwarts".into()], 20, Some(4)).unwrap();
        let mock = MockBackend::logprob("mock").with_responder(|meta| {
            Some(MockReply::new(
                &format!("{}{}", meta.prefix, meta.template_index),
                0.5,
            ))
        });
        let gw = Gateway::new(Arc::new(mock)).with_max_in_flight(4);
        let outs = gw.query_all(&plan.probes, p);
        assert_eq!(outs.len(), plan.probes.len());
        for (probe, out) in plan.probes.iter().zip(outs) {
            let out = out.unwrap();
            assert_eq!(out.probe, *probe);
            assert_eq!(
                out.completion,
                format!("{}{}", probe.prefix.as_str(), probe.template_index)
            );
        }
    }
}
