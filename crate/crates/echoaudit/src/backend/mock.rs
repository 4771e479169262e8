//! Deterministic mock backends.
//!
//! [`ScriptedBackend`] replays canned completions in FIFO order and is the
//! substrate for protocol-level test fixtures. [`StanceMockBackend`] is an
//! analytic oracle: acting as a social agent it emits messages tagged with
//! a machine-readable stance marker (flipping to a target level with a
//! seeded per-message probability), and acting as a classifier it reads
//! the marker back deterministically. Campaigns run against it have
//! closed-form change statistics.

use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Backend, BackendError, ChatRequest, CompletionResult};
use crate::corpus::Topic;
use crate::level::OpinionLevel;

/// Replays a fixed list of completions regardless of request content.
///
/// FIFO across callers; feed it from a single consumer when reply order
/// matters. With `cycle`, the script repeats forever.
pub struct ScriptedBackend {
    id: String,
    script: Vec<String>,
    cycle: bool,
    next: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<String>) -> Self {
        ScriptedBackend {
            id: "scripted".to_string(),
            script,
            cycle: false,
            next: Mutex::new(0),
        }
    }

    pub fn cycling(script: Vec<String>) -> Self {
        ScriptedBackend {
            cycle: true,
            ..Self::new(script)
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Completions served so far.
    pub fn calls(&self) -> usize {
        *self.next.lock().unwrap()
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, _request: &ChatRequest) -> Result<CompletionResult, BackendError> {
        let mut next = self.next.lock().unwrap();
        let index = if self.cycle && !self.script.is_empty() {
            *next % self.script.len()
        } else {
            *next
        };
        match self.script.get(index) {
            Some(text) => {
                *next += 1;
                Ok(CompletionResult {
                    text: text.clone(),
                    latency: Duration::ZERO,
                    attempt_count: 1,
                    backend_id: self.id.clone(),
                })
            }
            None => Err(BackendError::EmptyCompletion {
                backend_id: self.id.clone(),
            }),
        }
    }
}

/// Renders the machine-readable stance marker embedded in mock messages.
pub fn stance_marker(level: OpinionLevel) -> String {
    format!("[stance:{}]", level.slug())
}

/// Extracts the first stance marker from a text, if any.
pub fn read_stance_marker(text: &str) -> Option<OpinionLevel> {
    let start = text.find("[stance:")?;
    let rest = &text[start + "[stance:".len()..];
    let end = rest.find(']')?;
    OpinionLevel::from_slug(&rest[..end])
}

struct StanceMockState {
    rng: ChaCha8Rng,
    social_calls: u64,
}

/// Analytic mock backend for one topic.
///
/// Social requests are recognized by the persona opinion clause in the
/// leading system message; the mock echoes the persona's current level as
/// a stance marker, except that each of the first `public_budget` social
/// completions flips to `flip_target` with probability `flip_probability`
/// (independent seeded draws). Classifier requests are answered by reading
/// the marker out of the embedded message, so classification is exact.
pub struct StanceMockBackend {
    id: String,
    topic: Topic,
    flip_probability: f64,
    flip_target: OpinionLevel,
    public_budget: u64,
    state: Mutex<StanceMockState>,
}

impl StanceMockBackend {
    pub fn new(topic: &Topic, flip_probability: f64, flip_target: OpinionLevel, seed: u64) -> Self {
        assert!(
            (0.0..=1.0).contains(&flip_probability),
            "flip probability must be in [0, 1]"
        );
        StanceMockBackend {
            id: "stance-mock".to_string(),
            topic: topic.clone(),
            flip_probability,
            flip_target,
            public_budget: u64::MAX,
            state: Mutex::new(StanceMockState {
                rng: ChaCha8Rng::seed_from_u64(seed),
                social_calls: 0,
            }),
        }
    }

    /// Limits flip draws to the first `budget` social completions. In a
    /// chatroom run this is set to M so post-conversation internal probes
    /// echo the current level without a flip draw, keeping the campaign's
    /// change statistics at the closed form 1-(1-p)^M.
    pub fn with_public_budget(mut self, budget: u64) -> Self {
        self.public_budget = budget;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The persona level whose opinion clause appears in the prompt, if
    /// any. Longest clause wins so more specific personas shadow shorter
    /// ones in custom corpora.
    fn persona_level(&self, system_prompt: &str) -> Option<OpinionLevel> {
        OpinionLevel::ALL
            .iter()
            .copied()
            .filter(|level| {
                system_prompt.contains(&self.topic.fragments_for(*level).opinion_clause)
            })
            .max_by_key(|level| self.topic.fragments_for(*level).opinion_clause.len())
    }

    fn social_reply(&self, level: OpinionLevel) -> String {
        let mut state = self.state.lock().unwrap();
        state.social_calls += 1;
        let emitted = if state.social_calls <= self.public_budget
            && state.rng.random::<f64>() < self.flip_probability
        {
            self.flip_target
        } else {
            level
        };
        // The ordinal keeps every generated text distinct within one run.
        format!(
            "Here is where I stand on {} (take {}). {}",
            self.topic.display_name.to_lowercase(),
            state.social_calls,
            stance_marker(emitted)
        )
    }

    /// Classifier answer: parses as "yes" for the presence agent and as
    /// the level's canonical name for the signal agent.
    fn classifier_reply(&self, request_text: &str) -> String {
        match read_stance_marker(request_text) {
            Some(level) => format!("yes: {}", level.canonical_name()),
            None => "no".to_string(),
        }
    }
}

impl Backend for StanceMockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<CompletionResult, BackendError> {
        let text = match request
            .messages
            .first()
            .and_then(|m| self.persona_level(&m.content))
        {
            Some(level) => self.social_reply(level),
            None => {
                let joined: String = request
                    .messages
                    .iter()
                    .map(|m| m.content.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                self.classifier_reply(&joined)
            }
        };
        Ok(CompletionResult {
            text,
            latency: Duration::ZERO,
            attempt_count: 1,
            backend_id: self.id.clone(),
        })
    }
}
