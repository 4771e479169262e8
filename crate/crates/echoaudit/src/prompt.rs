//! Persona prompt rendering and the classifier/probe prompt templates.
//!
//! Templates are plain text files shipped under `data/templates/` with
//! `{{placeholder}}` substitution. Supported placeholders: `{{topic}}`,
//! `{{message}}`, `{{candidates}}` (classifier templates) and
//! `{{statement}}` (one-shot probe). The SHA-256 of every template is
//! recorded in each transcript so results stay attributable to the exact
//! prompt wording.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::corpus::Topic;
use crate::level::OpinionLevel;

pub const PRESENCE_TEMPLATE_V1: &str = include_str!("../data/templates/presence_v1.txt");
pub const SIGNAL_TEMPLATE_V1: &str = include_str!("../data/templates/signal_v1.txt");
pub const ONESHOT_TEMPLATE_V1: &str = include_str!("../data/templates/oneshot_v1.txt");

/// Deterministic given names assigned to agents by index. Past the end of
/// the list, names repeat with a numeric suffix ("Anna2", ...).
const AGENT_NAMES: [&str; 12] = [
    "Anna", "Ben", "Carla", "David", "Erin", "Felix", "Grace", "Hassan", "Isla", "Jonas", "Kira",
    "Liam",
];

pub fn agent_name(index: usize) -> String {
    let base = AGENT_NAMES[index % AGENT_NAMES.len()];
    let round = index / AGENT_NAMES.len();
    if round == 0 {
        base.to_string()
    } else {
        format!("{base}{}", round + 1)
    }
}

/// Renders the persona system prompt for an agent at a given opinion level.
///
/// Layout follows the four-part structure: name and setting intro with a
/// brevity instruction, the opinion clause, its elaboration, and a quoted
/// example utterance. Output is deterministic for fixed inputs.
pub fn render_system_prompt(topic: &Topic, level: OpinionLevel, agent_name: &str) -> String {
    let fragments = topic.fragments_for(level);
    format!(
        "Your name is {name}. You are participating in a chat about {chat_topic}. Please keep \
         your responses short. Your responses should only be one or two lines.\n\
         {clause} {elaboration}\n\
         Example: \"{example}\"",
        name = agent_name,
        chat_topic = topic.display_name.to_lowercase(),
        clause = fragments.opinion_clause,
        elaboration = fragments.elaboration,
        example = fragments.example_utterance,
    )
}

/// A set of prompt templates with their hashes.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub presence: String,
    pub signal: String,
    pub oneshot: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            presence: PRESENCE_TEMPLATE_V1.to_string(),
            signal: SIGNAL_TEMPLATE_V1.to_string(),
            oneshot: ONESHOT_TEMPLATE_V1.to_string(),
        }
    }
}

impl PromptTemplates {
    /// SHA-256 per template, keyed by template name, for transcript
    /// provenance.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        [
            ("presence", &self.presence),
            ("signal", &self.signal),
            ("oneshot", &self.oneshot),
        ]
        .into_iter()
        .map(|(name, text)| {
            (
                name.to_string(),
                hex::encode(Sha256::digest(text.as_bytes())),
            )
        })
        .collect()
    }

    pub fn render_presence(&self, topic: &Topic, message: &str) -> String {
        substitute(
            &self.presence,
            &[
                ("topic", &topic.display_name.to_lowercase()),
                ("message", message),
            ],
        )
    }

    pub fn render_signal(
        &self,
        topic: &Topic,
        message: &str,
        candidates: &[OpinionLevel],
    ) -> String {
        let candidate_block = candidates
            .iter()
            .map(|level| {
                format!(
                    "- {} (example: \"{}\")",
                    level.canonical_name(),
                    topic.fragments_for(*level).example_utterance
                )
            })
            .collect::<Vec<_>>()
            .join("\n");
        substitute(
            &self.signal,
            &[
                ("topic", &topic.display_name.to_lowercase()),
                ("message", message),
                ("candidates", &candidate_block),
            ],
        )
    }

    pub fn render_oneshot(&self, statement: &str) -> String {
        substitute(&self.oneshot, &[("statement", statement)])
    }
}

fn substitute(template: &str, pairs: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in pairs {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::level::OpinionLevel;

    #[test]
    fn healthcare_strongly_liberal_renders_the_canonical_persona() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("healthcare").unwrap();
        let prompt = render_system_prompt(topic, OpinionLevel::StronglyLiberal, "Anna");
        assert!(prompt
            .starts_with("Your name is Anna. You are participating in a chat about healthcare."));
        assert!(prompt.contains("Please keep your responses short."));
        assert!(prompt.contains(
            "You strongly agree with the statement \"The government should ensure that everyone has healthcare\"."
        ));
        assert!(prompt.contains(
            "Example: \"Healthcare should be available to everyone, no matter how much money they earn. Make it free, I say!\""
        ));
    }

    #[test]
    fn neutral_render_has_no_agreement_clause() {
        let corpus = Corpus::bundled();
        for topic in corpus.topics() {
            let prompt = render_system_prompt(topic, OpinionLevel::Neutral, "Bo");
            assert!(
                prompt.contains("You are neutral towards"),
                "topic {}",
                topic.id
            );
            assert!(
                !prompt.contains("agree with the statement"),
                "topic {}",
                topic.id
            );
        }
    }

    #[test]
    fn render_is_deterministic() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("abortion").unwrap();
        let a = render_system_prompt(topic, OpinionLevel::SlightlyConservative, "Erin");
        let b = render_system_prompt(topic, OpinionLevel::SlightlyConservative, "Erin");
        assert_eq!(a, b);
    }

    #[test]
    fn every_topic_and_level_renders_with_the_name_exactly_once() {
        let corpus = Corpus::bundled();
        for topic in corpus.topics() {
            for level in OpinionLevel::ALL {
                let name = "Zanthor"; // never occurs in authored fragments
                let prompt = render_system_prompt(topic, level, name);
                assert_eq!(
                    prompt.matches(name).count(),
                    1,
                    "topic {} level {}",
                    topic.id,
                    level.slug()
                );
            }
        }
    }

    #[test]
    fn opposite_statement_never_leaks_into_a_pole_prompt() {
        let corpus = Corpus::bundled();
        for topic in corpus.topics() {
            for level in OpinionLevel::ALL {
                let prompt = render_system_prompt(topic, level, "Anna").to_lowercase();
                match level.pole() {
                    Some(crate::level::Pole::Liberal) => {
                        assert!(
                            !prompt.contains(&topic.complement_statement.to_lowercase()),
                            "complement leaked into {} {}",
                            topic.id,
                            level.slug()
                        );
                    }
                    Some(crate::level::Pole::Conservative) => {
                        assert!(
                            !prompt.contains(&topic.liberal_statement.to_lowercase()),
                            "liberal statement leaked into {} {}",
                            topic.id,
                            level.slug()
                        );
                    }
                    None => {}
                }
            }
        }
    }

    #[test]
    fn agent_names_are_deterministic_and_distinct() {
        let names: Vec<String> = (0..30).map(agent_name).collect();
        assert_eq!(names[0], "Anna");
        assert_eq!(names[1], "Ben");
        assert_eq!(names[12], "Anna2");
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
    }

    #[test]
    fn signal_template_lists_candidates_with_examples() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("gun_control").unwrap();
        let templates = PromptTemplates::default();
        let all = templates.render_signal(topic, "some message", &OpinionLevel::ALL);
        for level in OpinionLevel::ALL {
            assert!(all.contains(level.canonical_name()));
        }
        let restricted = templates.render_signal(
            topic,
            "some message",
            &[OpinionLevel::SlightlyLiberal, OpinionLevel::Neutral],
        );
        assert!(!restricted.contains("Strongly conservative"));
        assert!(restricted.contains("Slightly liberal"));
    }

    #[test]
    fn oneshot_template_keeps_the_likert_options_verbatim() {
        let templates = PromptTemplates::default();
        let prompt = templates.render_oneshot("Cats are better than dogs.");
        assert!(prompt
            .contains("Cats are better than dogs. Please choose one of the following options:"));
        for option in [
            "Strongly disagree",
            "Disagree",
            "Neutral",
            "Agree",
            "Strongly agree",
        ] {
            assert!(prompt.contains(option));
        }
        assert!(prompt.contains("Make sure you answer with one of the options above."));
    }

    #[test]
    fn template_hashes_change_with_the_text() {
        let a = PromptTemplates::default();
        let mut b = PromptTemplates::default();
        b.presence.push('!');
        assert_eq!(a.hashes()["signal"], b.hashes()["signal"]);
        assert_ne!(a.hashes()["presence"], b.hashes()["presence"]);
    }
}
