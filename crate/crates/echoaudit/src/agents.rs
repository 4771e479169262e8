//! Social agents: persona state, windowed conversation memory, and
//! message generation.

use serde::{Deserialize, Serialize};

use crate::backend::{
    Backend, BackendError, ChatMessage, ChatRequest, CompletionResult, Role, Sampling,
};
use crate::classify::Classification;
use crate::corpus::Corpus;
use crate::level::OpinionLevel;
use crate::prompt::render_system_prompt;

/// One remembered conversation entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub author: String,
    pub text: String,
}

impl MemoryEntry {
    pub fn new(author: impl Into<String>, text: impl Into<String>) -> Self {
        MemoryEntry {
            author: author.into(),
            text: text.into(),
        }
    }

    fn attributed(&self) -> String {
        format!("{}: {}", self.author, self.text)
    }
}

/// Estimated token cost of one memory entry: ceil(chars / 4) over the
/// attributed "author: text" line. A crude but documented heuristic; the
/// window budget is expressed in these units.
pub fn estimate_tokens(entry: &MemoryEntry) -> usize {
    entry.attributed().chars().count().div_ceil(4)
}

/// The longest suffix of `memory` whose estimated token total fits in
/// `budget`. The most recent entry is always kept, even when it alone
/// exceeds the budget.
pub fn memory_window(memory: &[MemoryEntry], budget: usize) -> &[MemoryEntry] {
    assert!(budget > 0, "window budget must be positive");
    if memory.is_empty() {
        return memory;
    }
    let mut total = 0;
    let mut start = memory.len();
    for (index, entry) in memory.iter().enumerate().rev() {
        total += estimate_tokens(entry);
        if total > budget && index < memory.len() - 1 {
            break;
        }
        start = index;
        if total > budget {
            break;
        }
    }
    &memory[start..]
}

/// Prompt-assembly options for social agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub model_id: String,
    pub sampling: Sampling,
    /// Re-inject the system prompt before each of the last
    /// `reinject_last_k` history messages.
    pub reinject: bool,
    pub reinject_last_k: usize,
    /// Memory window budget in estimated tokens.
    pub window_budget: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            model_id: "social".to_string(),
            sampling: Sampling::default(),
            reinject: true,
            reinject_last_k: 1,
            window_budget: 2048,
        }
    }
}

/// Mutable state of one social agent inside a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialAgentState {
    pub name: String,
    pub topic_id: String,
    pub initial_opinion: OpinionLevel,
    pub current_opinion: OpinionLevel,
    pub memory: Vec<MemoryEntry>,
}

impl SocialAgentState {
    pub fn new(
        name: impl Into<String>,
        topic_id: impl Into<String>,
        initial: OpinionLevel,
    ) -> Self {
        SocialAgentState {
            name: name.into(),
            topic_id: topic_id.into(),
            initial_opinion: initial,
            current_opinion: initial,
            memory: Vec::new(),
        }
    }

    pub fn remember(&mut self, author: &str, text: &str) {
        self.memory.push(MemoryEntry::new(author, text));
    }
}

/// Builds the request a social agent sends for its next message: the
/// persona rendered at the current opinion, followed by the windowed
/// history, each entry attributed "author: text".
pub fn build_social_request(
    state: &SocialAgentState,
    corpus: &Corpus,
    config: &PromptConfig,
) -> ChatRequest {
    let topic = corpus
        .topic(&state.topic_id)
        .unwrap_or_else(|| panic!("corpus has no topic `{}`", state.topic_id));
    let system_prompt = render_system_prompt(topic, state.current_opinion, &state.name);
    let window = memory_window(&state.memory, config.window_budget);

    let mut messages = Vec::with_capacity(window.len() + 2);
    messages.push(ChatMessage::new(Role::System, system_prompt.clone()));
    let reinject_from = if config.reinject {
        window.len().saturating_sub(config.reinject_last_k)
    } else {
        window.len()
    };
    for (index, entry) in window.iter().enumerate() {
        if index >= reinject_from {
            messages.push(ChatMessage::new(Role::System, system_prompt.clone()));
        }
        messages.push(ChatMessage::new(Role::User, entry.attributed()));
    }
    ChatRequest::new(config.model_id.clone(), messages, config.sampling)
}

/// Generates the agent's next message via the backend.
pub fn social_next_message(
    state: &SocialAgentState,
    corpus: &Corpus,
    backend: &dyn Backend,
    config: &PromptConfig,
) -> Result<CompletionResult, BackendError> {
    backend.complete(&build_social_request(state, corpus, config))
}

/// Applies a classification verdict to the speaker's persona: a present
/// label becomes the new current opinion (the persona renders at the new
/// level from the next turn on); an absent label leaves state unchanged.
pub fn apply_opinion_update(state: &mut SocialAgentState, classification: &Classification) {
    if let Some(label) = classification.final_label {
        state.current_opinion = label;
    }
}
