//! Opinion presence and opinion signal classification.
//!
//! Every message is first shown to a binary presence classifier: a fixed
//! number of independent yes/no queries (default 10) decided by strict
//! majority, with one extra deciding query on an exact tie. If an opinion
//! is present, the signal classifier votes the same number of times over
//! the five levels; the most frequent label wins. When the top labels tie,
//! a full voting round is re-run restricted to the tied candidates. After
//! three tied rounds the label falls back deterministically to the tied
//! candidate closest to neutral, breaking a residual tie toward the
//! liberal pole; fallback-decided labels are flagged in the record so
//! analysts can exclude them.
//!
//! Classifier queries are stateless: each query carries only the rendered
//! template, never conversation history.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, BackendError, ChatMessage, ChatRequest, Role, Sampling};
use crate::corpus::Topic;
use crate::level::OpinionLevel;
use crate::prompt::PromptTemplates;

/// How many times an unparseable classifier reply is re-asked before the
/// vote is abandoned.
pub const REASK_LIMIT: u32 = 3;

/// One restricted re-vote over tied candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TieBreakRound {
    pub candidate_set: Vec<OpinionLevel>,
    pub votes: Vec<OpinionLevel>,
}

/// Full provenance of one message classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    /// Presence votes, length = configured vote count.
    pub presence_votes: Vec<bool>,
    /// The extra deciding vote issued on an exact presence tie.
    pub presence_tie_break: Option<bool>,
    /// First full signal round; empty when no opinion was present.
    pub opinion_votes: Vec<OpinionLevel>,
    /// Restricted rounds run after ties, in order.
    pub tie_break_rounds: Vec<TieBreakRound>,
    /// True when the label was decided by the deterministic fallback
    /// instead of a vote majority.
    pub fallback_used: bool,
    /// Winning label; absent iff the presence verdict was "no opinion".
    #[serde(rename = "final")]
    pub final_label: Option<OpinionLevel>,
    /// Raw classifier replies in query order, re-asks included.
    pub raw_responses: Vec<String>,
    /// True when a vote could not be parsed after re-asks; the message
    /// then counts as unclassified and the transcript as degraded.
    pub failed: bool,
}

impl Classification {
    /// Record for a classification abandoned after unparseable votes.
    pub fn failed(raw_responses: Vec<String>) -> Self {
        Classification {
            presence_votes: Vec::new(),
            presence_tie_break: None,
            opinion_votes: Vec::new(),
            tie_break_rounds: Vec::new(),
            fallback_used: false,
            final_label: None,
            raw_responses,
            failed: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("unparseable classifier vote after {attempts} attempts: last reply {last:?}")]
    UnparseableVote { attempts: u32, last: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Case-insensitive whole-phrase label matching.
///
/// A candidate matches when its name appears in the response delimited by
/// non-alphanumeric characters. Occurrences inside a longer candidate's
/// match are masked first, so "Strongly disagree" does not also count as
/// "Disagree". Returns the candidate index only when exactly one matches.
pub fn parse_label(response: &str, candidates: &[&str]) -> Option<usize> {
    let haystack = response.to_lowercase();
    let mut masked: Vec<bool> = vec![false; haystack.len()];

    // Longest candidates first so subsuming phrases claim their span.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(candidates[i].len()));

    let mut matches: Vec<usize> = Vec::new();
    for index in order {
        let needle = candidates[index].to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut found = false;
        let mut from = 0;
        while let Some(offset) = haystack[from..].find(&needle) {
            let start = from + offset;
            let end = start + needle.len();
            let bounded = boundary_before(&haystack, start) && boundary_after(&haystack, end);
            let free = !masked[start..end].iter().any(|&m| m);
            if bounded && free {
                found = true;
                masked[start..end].iter_mut().for_each(|m| *m = true);
            }
            // Advance one full character; needles may start non-ASCII.
            from = start + haystack[start..].chars().next().map_or(1, |c| c.len_utf8());
        }
        if found {
            matches.push(index);
        }
    }

    match matches.as_slice() {
        [single] => Some(*single),
        _ => None,
    }
}

fn boundary_before(text: &str, index: usize) -> bool {
    index == 0
        || !text[..index]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric())
}

fn boundary_after(text: &str, index: usize) -> bool {
    index >= text.len()
        || !text[index..]
            .chars()
            .next()
            .is_some_and(|c| c.is_alphanumeric())
}

/// Counts votes per candidate and returns the unique most-frequent label,
/// or the full set of tied leaders.
pub fn plurality(votes: &[OpinionLevel], candidates: &[OpinionLevel]) -> VoteOutcome {
    let counts: Vec<usize> = candidates
        .iter()
        .map(|c| votes.iter().filter(|v| *v == c).count())
        .collect();
    let top = counts.iter().copied().max().unwrap_or(0);
    let leaders: Vec<OpinionLevel> = candidates
        .iter()
        .zip(&counts)
        .filter(|(_, &n)| n == top && n > 0)
        .map(|(c, _)| *c)
        .collect();
    match leaders.as_slice() {
        [winner] => VoteOutcome::Winner(*winner),
        _ => VoteOutcome::Tie(leaders),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteOutcome {
    Winner(OpinionLevel),
    /// Two or more leaders, or no votes at all (empty set).
    Tie(Vec<OpinionLevel>),
}

/// Deterministic fallback after three tied rounds: the tied candidate
/// closest to neutral, breaking a residual tie toward the liberal pole.
pub fn fallback_label(tied: &[OpinionLevel]) -> OpinionLevel {
    *tied
        .iter()
        .min_by_key(|l| (l.numeric_code().abs(), l.numeric_code()))
        .expect("fallback requires a non-empty tie set")
}

/// Options shared by both classifier agents.
#[derive(Debug, Clone)]
pub struct ClassifierOptions {
    pub model_id: String,
    pub vote_count: u32,
    pub sampling: Sampling,
    pub max_tie_rounds: u32,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        ClassifierOptions {
            model_id: "classifier".to_string(),
            vote_count: 10,
            sampling: Sampling::default(),
            max_tie_rounds: 3,
        }
    }
}

/// Issues one stateless classifier query, re-asking up to [`REASK_LIMIT`]
/// times until the reply parses against `candidates`.
fn ask_vote(
    prompt: &str,
    candidates: &[&str],
    backend: &dyn Backend,
    options: &ClassifierOptions,
    raw: &mut Vec<String>,
) -> Result<usize, ClassifyError> {
    let request = ChatRequest::new(
        options.model_id.clone(),
        vec![ChatMessage::new(Role::System, prompt)],
        options.sampling,
    );
    let mut attempts = 0;
    let mut last = String::new();
    while attempts < 1 + REASK_LIMIT {
        attempts += 1;
        let reply = backend.complete(&request)?;
        raw.push(reply.text.clone());
        if let Some(index) = parse_label(&reply.text, candidates) {
            return Ok(index);
        }
        last = reply.text;
    }
    Err(ClassifyError::UnparseableVote { attempts, last })
}

/// Result of the presence stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceVerdict {
    pub present: bool,
    pub votes: Vec<bool>,
    pub tie_break: Option<bool>,
}

/// Queries the opinion presence agent `vote_count` times and applies the
/// strict-majority rule; an exact tie is decided by one extra query.
pub fn classify_presence(
    message: &str,
    topic: &Topic,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    options: &ClassifierOptions,
    raw: &mut Vec<String>,
) -> Result<PresenceVerdict, ClassifyError> {
    assert!(options.vote_count >= 1, "vote count must be at least 1");
    let prompt = templates.render_presence(topic, message);
    let candidates = ["yes", "no"];
    let mut votes = Vec::with_capacity(options.vote_count as usize);
    for _ in 0..options.vote_count {
        let index = ask_vote(&prompt, &candidates, backend, options, raw)?;
        votes.push(index == 0);
    }
    let yes = votes.iter().filter(|&&v| v).count();
    let no = votes.len() - yes;
    let (present, tie_break) = if yes == no {
        let index = ask_vote(&prompt, &candidates, backend, options, raw)?;
        (index == 0, Some(index == 0))
    } else {
        (yes > no, None)
    };
    Ok(PresenceVerdict {
        present,
        votes,
        tie_break,
    })
}

/// Result of the signal stage.
#[derive(Debug, Clone, PartialEq)]
pub struct OpinionVerdict {
    pub label: OpinionLevel,
    pub first_round: Vec<OpinionLevel>,
    pub tie_break_rounds: Vec<TieBreakRound>,
    pub fallback_used: bool,
}

/// Queries the opinion signal agent over the five levels, re-voting over
/// tied candidates and falling back deterministically after
/// `max_tie_rounds` tied rounds.
pub fn classify_opinion(
    message: &str,
    topic: &Topic,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    options: &ClassifierOptions,
    raw: &mut Vec<String>,
) -> Result<OpinionVerdict, ClassifyError> {
    assert!(options.vote_count >= 1, "vote count must be at least 1");
    let mut candidates: Vec<OpinionLevel> = OpinionLevel::ALL.to_vec();
    let mut first_round: Vec<OpinionLevel> = Vec::new();
    let mut tie_break_rounds: Vec<TieBreakRound> = Vec::new();

    for round in 0..options.max_tie_rounds {
        let prompt = templates.render_signal(topic, message, &candidates);
        let names: Vec<&str> = candidates.iter().map(|l| l.canonical_name()).collect();
        let mut votes = Vec::with_capacity(options.vote_count as usize);
        for _ in 0..options.vote_count {
            let index = ask_vote(&prompt, &names, backend, options, raw)?;
            votes.push(candidates[index]);
        }
        let outcome = plurality(&votes, &candidates);
        if round == 0 {
            first_round = votes;
        } else {
            tie_break_rounds.push(TieBreakRound {
                candidate_set: candidates.clone(),
                votes,
            });
        }
        match outcome {
            VoteOutcome::Winner(label) => {
                return Ok(OpinionVerdict {
                    label,
                    first_round,
                    tie_break_rounds,
                    fallback_used: false,
                })
            }
            VoteOutcome::Tie(tied) => candidates = tied,
        }
    }

    Ok(OpinionVerdict {
        label: fallback_label(&candidates),
        first_round,
        tie_break_rounds,
        fallback_used: true,
    })
}

/// Runs the full presence-then-signal pipeline for one message and
/// assembles the provenance record. An unparseable vote yields a failed
/// record rather than an error; backend errors propagate.
pub fn classify_message(
    message: &str,
    topic: &Topic,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    options: &ClassifierOptions,
) -> Result<Classification, ClassifyError> {
    let mut raw = Vec::new();
    let presence = match classify_presence(message, topic, backend, templates, options, &mut raw) {
        Ok(verdict) => verdict,
        Err(ClassifyError::UnparseableVote { .. }) => return Ok(Classification::failed(raw)),
        Err(err) => return Err(err),
    };
    if !presence.present {
        return Ok(Classification {
            presence_votes: presence.votes,
            presence_tie_break: presence.tie_break,
            opinion_votes: Vec::new(),
            tie_break_rounds: Vec::new(),
            fallback_used: false,
            final_label: None,
            raw_responses: raw,
            failed: false,
        });
    }
    let opinion = match classify_opinion(message, topic, backend, templates, options, &mut raw) {
        Ok(verdict) => verdict,
        Err(ClassifyError::UnparseableVote { .. }) => return Ok(Classification::failed(raw)),
        Err(err) => return Err(err),
    };
    Ok(Classification {
        presence_votes: presence.votes,
        presence_tie_break: presence.tie_break,
        opinion_votes: opinion.first_round,
        tie_break_rounds: opinion.tie_break_rounds,
        fallback_used: opinion.fallback_used,
        final_label: Some(opinion.label),
        raw_responses: raw,
        failed: false,
    })
}
