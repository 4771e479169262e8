//! Echo-chamber chatroom simulation: turn scheduling, message generation,
//! classification, persona updating, and transcript assembly.
//!
//! One simulation runs N agents initialized at the strong level of one
//! pole. For M turns a speaker (never the previous one) generates a public
//! message; the message is classified and the speaker's persona updated to
//! the classified level. Afterwards every agent except the final speaker
//! generates one internal message, classified and recorded but never shown
//! to other agents and never fed back into personas.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{apply_opinion_update, social_next_message, PromptConfig, SocialAgentState};
use crate::backend::{Backend, Sampling};
use crate::classify::{classify_message, Classification, ClassifierOptions, ClassifyError};
use crate::corpus::Corpus;
use crate::level::{OpinionLevel, Pole};
use crate::prompt::{agent_name, PromptTemplates};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

/// Everything that parameterizes one simulation; snapshotted verbatim into
/// the transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub topic_id: String,
    pub n_agents: u32,
    pub n_messages: u32,
    pub initial_pole: Pole,
    pub seed: u64,
    pub model_id: String,
    pub classifier_model_id: String,
    pub vote_count: u32,
    pub reinject: bool,
    pub reinject_last_k: usize,
    pub window_budget: usize,
    pub social_temperature: f64,
    pub classifier_temperature: f64,
    pub max_tokens: u32,
    /// Campaign cell this simulation belongs to ("topic|pole|mN").
    pub cell: String,
    pub replicate: u32,
}

impl SimulationConfig {
    pub fn new(
        topic_id: impl Into<String>,
        initial_pole: Pole,
        n_agents: u32,
        n_messages: u32,
        seed: u64,
    ) -> Self {
        let topic_id = topic_id.into();
        let cell = format!("{topic_id}|{initial_pole}|m{n_messages}");
        SimulationConfig {
            topic_id,
            n_agents,
            n_messages,
            initial_pole,
            seed,
            model_id: "social".to_string(),
            classifier_model_id: "classifier".to_string(),
            vote_count: 10,
            reinject: true,
            reinject_last_k: 1,
            window_budget: 2048,
            social_temperature: 0.7,
            classifier_temperature: 0.7,
            max_tokens: 120,
            cell,
            replicate: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.n_agents < 2 {
            return Err(SimulationError::InvalidConfig(format!(
                "n_agents must be at least 2, got {}",
                self.n_agents
            )));
        }
        if self.n_messages < 1 {
            return Err(SimulationError::InvalidConfig(
                "n_messages must be at least 1".to_string(),
            ));
        }
        if self.vote_count < 1 {
            return Err(SimulationError::InvalidConfig(
                "vote_count must be at least 1".to_string(),
            ));
        }
        Ok(())
    }

    fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            model_id: self.model_id.clone(),
            sampling: Sampling {
                temperature: self.social_temperature,
                max_tokens: self.max_tokens,
            },
            reinject: self.reinject,
            reinject_last_k: self.reinject_last_k,
            window_budget: self.window_budget,
        }
    }

    fn classifier_options(&self) -> ClassifierOptions {
        ClassifierOptions {
            model_id: self.classifier_model_id.clone(),
            vote_count: self.vote_count,
            sampling: Sampling {
                temperature: self.classifier_temperature,
                max_tokens: self.max_tokens,
            },
            max_tie_rounds: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Public,
    Internal,
}

/// One generated utterance with its full classification provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub index: u32,
    pub author: String,
    pub text: String,
    pub kind: MessageKind,
    pub classification: Classification,
    pub author_opinion_before: OpinionLevel,
    pub author_opinion_after: OpinionLevel,
}

/// Complete record of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema: u32,
    pub config: SimulationConfig,
    pub corpus_hash: String,
    pub prompt_template_hashes: BTreeMap<String, String>,
    pub messages: Vec<Message>,
    /// Per agent: (message index, opinion after that message), preceded by
    /// an index -1 entry for the initial assignment.
    pub trajectories: BTreeMap<String, Vec<(i64, OpinionLevel)>>,
    pub degraded: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SimulationError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("simulation aborted at message {index}: {source}")]
    Aborted {
        index: u32,
        /// Partial transcript covering the messages completed before the
        /// abort.
        partial: Box<Transcript>,
        source: ClassifyError,
    },
}

/// Uniform draw over all agents except the previous speaker.
pub fn pick_speaker(n_agents: usize, previous: Option<usize>, rng: &mut impl Rng) -> usize {
    debug_assert!(n_agents >= 2);
    let candidates: Vec<usize> = (0..n_agents).filter(|i| Some(*i) != previous).collect();
    candidates[rng.random_range(0..candidates.len())]
}

/// Runs one full simulation to a transcript.
pub fn run_simulation(
    config: &SimulationConfig,
    corpus: &Corpus,
    social_backend: &dyn Backend,
    classifier_backend: &dyn Backend,
) -> Result<Transcript, SimulationError> {
    run_simulation_with_templates(
        config,
        corpus,
        social_backend,
        classifier_backend,
        &PromptTemplates::default(),
    )
}

pub fn run_simulation_with_templates(
    config: &SimulationConfig,
    corpus: &Corpus,
    social_backend: &dyn Backend,
    classifier_backend: &dyn Backend,
    templates: &PromptTemplates,
) -> Result<Transcript, SimulationError> {
    config.validate()?;
    let topic = corpus
        .topic(&config.topic_id)
        .ok_or_else(|| SimulationError::UnknownTopic(config.topic_id.clone()))?;

    let initial_level = OpinionLevel::strong(config.initial_pole);
    let mut agents: Vec<SocialAgentState> = (0..config.n_agents as usize)
        .map(|i| SocialAgentState::new(agent_name(i), config.topic_id.clone(), initial_level))
        .collect();
    let mut trajectories: BTreeMap<String, Vec<(i64, OpinionLevel)>> = agents
        .iter()
        .map(|a| (a.name.clone(), vec![(-1, initial_level)]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let prompt_config = config.prompt_config();
    let classifier_options = config.classifier_options();

    let mut messages: Vec<Message> = Vec::new();
    let mut degraded = false;
    let mut previous_speaker: Option<usize> = None;

    let assemble = |messages: Vec<Message>,
                    trajectories: BTreeMap<String, Vec<(i64, OpinionLevel)>>,
                    degraded: bool| Transcript {
        schema: TRANSCRIPT_SCHEMA_VERSION,
        config: config.clone(),
        corpus_hash: corpus.source_hash().to_string(),
        prompt_template_hashes: templates.hashes(),
        messages,
        trajectories,
        degraded,
    };

    // Public phase: M messages, no agent speaking twice in a row.
    for index in 0..config.n_messages {
        let speaker = pick_speaker(agents.len(), previous_speaker, &mut rng);
        let text =
            match social_next_message(&agents[speaker], corpus, social_backend, &prompt_config) {
                Ok(result) => result.text,
                Err(err) => {
                    return Err(SimulationError::Aborted {
                        index,
                        partial: Box::new(assemble(messages, trajectories, degraded)),
                        source: ClassifyError::Backend(err),
                    })
                }
            };
        let classification = match classify_message(
            &text,
            topic,
            classifier_backend,
            templates,
            &classifier_options,
        ) {
            Ok(record) => record,
            Err(err) => {
                return Err(SimulationError::Aborted {
                    index,
                    partial: Box::new(assemble(messages, trajectories, degraded)),
                    source: err,
                })
            }
        };
        degraded |= classification.failed;

        let before = agents[speaker].current_opinion;
        apply_opinion_update(&mut agents[speaker], &classification);
        let after = agents[speaker].current_opinion;
        let author = agents[speaker].name.clone();
        trajectories
            .get_mut(&author)
            .expect("trajectory exists for every agent")
            .push((i64::from(index), after));
        messages.push(Message {
            index,
            author: author.clone(),
            text: text.clone(),
            kind: MessageKind::Public,
            classification,
            author_opinion_before: before,
            author_opinion_after: after,
        });

        for agent in &mut agents {
            agent.remember(&author, &text);
        }
        previous_speaker = Some(speaker);
    }

    // Internal phase: everyone but the final speaker probes once, in agent
    // order. Internal messages are classified and recorded but never enter
    // any memory and never update a persona.
    let last_speaker = previous_speaker.expect("at least one public message");
    let mut index = config.n_messages;
    for (agent_index, agent) in agents.iter().enumerate() {
        if agent_index == last_speaker {
            continue;
        }
        let text = match social_next_message(agent, corpus, social_backend, &prompt_config) {
            Ok(result) => result.text,
            Err(err) => {
                return Err(SimulationError::Aborted {
                    index,
                    partial: Box::new(assemble(messages, trajectories, degraded)),
                    source: ClassifyError::Backend(err),
                })
            }
        };
        let classification = match classify_message(
            &text,
            topic,
            classifier_backend,
            templates,
            &classifier_options,
        ) {
            Ok(record) => record,
            Err(err) => {
                return Err(SimulationError::Aborted {
                    index,
                    partial: Box::new(assemble(messages, trajectories, degraded)),
                    source: err,
                })
            }
        };
        degraded |= classification.failed;

        let current = agent.current_opinion;
        let author = agent.name.clone();
        trajectories
            .get_mut(&author)
            .expect("trajectory exists for every agent")
            .push((i64::from(index), current));
        messages.push(Message {
            index,
            author,
            text,
            kind: MessageKind::Internal,
            classification,
            author_opinion_before: current,
            author_opinion_after: current,
        });
        index += 1;
    }

    Ok(assemble(messages, trajectories, degraded))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::StanceMockBackend;
    use crate::corpus::Corpus;

    fn mock_pair(
        corpus: &Corpus,
        config: &SimulationConfig,
        p: f64,
        target: OpinionLevel,
    ) -> (StanceMockBackend, StanceMockBackend) {
        let topic = corpus.topic(&config.topic_id).unwrap();
        let social = StanceMockBackend::new(topic, p, target, config.seed ^ 0xA5A5)
            .with_public_budget(u64::from(config.n_messages));
        let classifier = StanceMockBackend::new(topic, 0.0, target, config.seed ^ 0x5A5A);
        (social, classifier)
    }

    #[test]
    fn dyadic_run_yields_20_public_and_1_internal_message() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("healthcare", Pole::Conservative, 2, 20, 42);
        let (social, classifier) = mock_pair(&corpus, &config, 0.0, OpinionLevel::StronglyLiberal);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        let public = transcript
            .messages
            .iter()
            .filter(|m| m.kind == MessageKind::Public)
            .count();
        let internal = transcript
            .messages
            .iter()
            .filter(|m| m.kind == MessageKind::Internal)
            .count();
        assert_eq!(public, 20);
        assert_eq!(internal, 1);
        assert_eq!(transcript.messages.len(), 21);
        // Indices: 0..19 public then 20 internal.
        for (i, message) in transcript.messages.iter().enumerate() {
            assert_eq!(message.index as usize, i);
        }
    }

    #[test]
    fn public_authors_strictly_alternate_in_a_dyad() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("abortion", Pole::Liberal, 2, 20, 7);
        let (social, classifier) =
            mock_pair(&corpus, &config, 0.3, OpinionLevel::StronglyConservative);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        let public: Vec<&Message> = transcript
            .messages
            .iter()
            .filter(|m| m.kind == MessageKind::Public)
            .collect();
        for pair in public.windows(2) {
            assert_ne!(pair[0].author, pair[1].author);
        }
    }

    #[test]
    fn zero_flip_probability_keeps_all_trajectories_constant() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("climate_change", Pole::Conservative, 3, 12, 99);
        let (social, classifier) = mock_pair(&corpus, &config, 0.0, OpinionLevel::StronglyLiberal);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        assert!(!transcript.degraded);
        for (agent, trajectory) in &transcript.trajectories {
            for (_, level) in trajectory {
                assert_eq!(*level, OpinionLevel::StronglyConservative, "agent {agent}");
            }
        }
        // N=3, M=12: 12 public + 2 internal.
        assert_eq!(transcript.messages.len(), 14);
    }

    #[test]
    fn certain_flip_updates_the_persona_after_the_first_message() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("gun_control", Pole::Conservative, 2, 4, 3);
        let (social, classifier) = mock_pair(&corpus, &config, 1.0, OpinionLevel::StronglyLiberal);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        let first = &transcript.messages[0];
        assert_eq!(
            first.author_opinion_before,
            OpinionLevel::StronglyConservative
        );
        assert_eq!(first.author_opinion_after, OpinionLevel::StronglyLiberal);
        assert_eq!(
            first.classification.final_label,
            Some(OpinionLevel::StronglyLiberal)
        );
    }

    #[test]
    fn internal_messages_do_not_update_personas() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("immigration", Pole::Conservative, 2, 1, 5);
        // Budget 1: the public message cannot flip (p=0 within budget is
        // trivial); use p=1 with budget=M so only the internal message
        // WOULD flip if the budget were ignored.
        let topic = corpus.topic("immigration").unwrap();
        let social = StanceMockBackend::new(topic, 1.0, OpinionLevel::StronglyLiberal, 1)
            .with_public_budget(1);
        let classifier = StanceMockBackend::new(topic, 0.0, OpinionLevel::StronglyLiberal, 2);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        assert_eq!(transcript.messages.len(), 2);
        let internal = &transcript.messages[1];
        assert_eq!(internal.kind, MessageKind::Internal);
        // The internal probe echoes the persona's current (initial) level:
        // the flip budget was spent on the public message.
        assert_eq!(
            internal.author_opinion_before,
            internal.author_opinion_after
        );
        assert_eq!(
            internal.classification.final_label,
            Some(OpinionLevel::StronglyConservative)
        );
    }

    #[test]
    fn trajectories_start_at_the_strong_initial_level_and_mirror_updates() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("marijuana_legalization", Pole::Liberal, 2, 6, 21);
        let (social, classifier) =
            mock_pair(&corpus, &config, 0.4, OpinionLevel::StronglyConservative);
        let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
        for (agent, trajectory) in &transcript.trajectories {
            assert_eq!(
                trajectory[0],
                (-1, OpinionLevel::StronglyLiberal),
                "agent {agent}"
            );
        }
        for message in &transcript.messages {
            let trajectory = &transcript.trajectories[&message.author];
            let entry = trajectory
                .iter()
                .find(|(idx, _)| *idx == i64::from(message.index))
                .unwrap();
            assert_eq!(entry.1, message.author_opinion_after);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_transcript_bit_for_bit() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("racial_attitude", Pole::Conservative, 2, 10, 1234);
        let run = || {
            let (social, classifier) =
                mock_pair(&corpus, &config, 0.25, OpinionLevel::StronglyLiberal);
            let transcript = run_simulation(&config, &corpus, &social, &classifier).unwrap();
            serde_json::to_string(&transcript).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exhausted_backend_aborts_with_a_partial_transcript() {
        let corpus = Corpus::bundled();
        let config = SimulationConfig::new("healthcare", Pole::Liberal, 2, 5, 9);
        let social = crate::backend::ScriptedBackend::new(vec![]);
        let topic = corpus.topic("healthcare").unwrap();
        let classifier = StanceMockBackend::new(topic, 0.0, OpinionLevel::Neutral, 1);
        match run_simulation(&config, &corpus, &social, &classifier) {
            Err(SimulationError::Aborted { index, partial, .. }) => {
                assert_eq!(index, 0);
                assert!(partial.messages.is_empty());
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn speaker_picks_are_uniform_over_the_allowed_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // N=2 with a previous speaker: forced alternation.
        for previous in [0usize, 1] {
            for _ in 0..20 {
                assert_eq!(pick_speaker(2, Some(previous), &mut rng), 1 - previous);
            }
        }
        // N=3 excluding agent 0: agents 1 and 2 each 0.5 +/- 0.02.
        let mut counts = [0u32; 3];
        for _ in 0..10_000 {
            counts[pick_speaker(3, Some(0), &mut rng)] += 1;
        }
        assert_eq!(counts[0], 0);
        for agent in [1, 2] {
            let share = f64::from(counts[agent]) / 10_000.0;
            assert!((share - 0.5).abs() <= 0.02, "agent {agent} share {share}");
        }
        // First turn, N=2: each agent 0.5 +/- 0.02.
        let mut first = [0u32; 2];
        for _ in 0..10_000 {
            first[pick_speaker(2, None, &mut rng)] += 1;
        }
        for agent in [0, 1] {
            let share = f64::from(first[agent]) / 10_000.0;
            assert!((share - 0.5).abs() <= 0.02, "agent {agent} share {share}");
        }
    }
}
