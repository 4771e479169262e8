//! Topic corpus: polarizing statements, their complements, poll metadata,
//! and the per-level prompt fragments personas are rendered from.
//!
//! A corpus is a TOML document with a top-level `topics` array. Each topic
//! carries:
//!
//! ```toml
//! [[topics]]
//! id = "healthcare"                    # short slug
//! display_name = "Healthcare"
//! liberal_statement = "..."            # agreement = liberal opinion
//! complement_statement = "..."         # agreement = conservative opinion
//! liberals_agreeing_pct = 85           # share of liberals agreeing with
//! conservatives_agreeing_pct = 30      #   the liberal statement, 0..100
//!
//! [topics.fragments.strongly_liberal]  # one table per opinion level:
//! opinion_clause = "..."               #   strongly_liberal, slightly_liberal,
//! elaboration = "..."                  #   neutral, slightly_conservative,
//! example_utterance = "..."            #   strongly_conservative
//!
//! [topics.oneshot]
//! liberal = "..."                      # representative probe statements
//! conservative = "..."
//! ```
//!
//! The corpus is immutable after load and safe to share across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::level::{OpinionLevel, Pole};

/// Source text of the corpus bundled with the binary.
pub const BUNDLED_CORPUS_TOML: &str = include_str!("../data/corpus.toml");

/// The three authored pieces a persona prompt is assembled from at one
/// opinion level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFragments {
    /// The stance sentence ("You strongly agree with the statement ..."),
    /// quoting the pole-appropriate statement; neutral phrasing for the
    /// neutral level.
    pub opinion_clause: String,
    /// One sentence expanding on the stance.
    pub elaboration: String,
    /// One utterance a person holding this stance might post.
    pub example_utterance: String,
}

/// Representative probe statements for the one-shot baseline, one per pole.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneShotStatements {
    pub liberal: String,
    pub conservative: String,
}

impl OneShotStatements {
    pub fn for_pole(&self, pole: Pole) -> &str {
        match pole {
            Pole::Liberal => &self.liberal,
            Pole::Conservative => &self.conservative,
        }
    }
}

/// One polarizing topic with everything needed to initialize and probe
/// agents discussing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topic {
    pub id: String,
    pub display_name: String,
    pub liberal_statement: String,
    pub complement_statement: String,
    pub liberals_agreeing_pct: f64,
    pub conservatives_agreeing_pct: f64,
    pub fragments: BTreeMap<OpinionLevel, PromptFragments>,
    pub oneshot: OneShotStatements,
}

impl Topic {
    /// Fragments for a level. Panics only on a corpus that bypassed
    /// validation; `Corpus` guarantees all five levels are present.
    pub fn fragments_for(&self, level: OpinionLevel) -> &PromptFragments {
        self.fragments
            .get(&level)
            .unwrap_or_else(|| panic!("topic `{}` has no fragments for {}", self.id, level.slug()))
    }

    /// The statement a given pole agrees with.
    pub fn statement_for(&self, pole: Pole) -> &str {
        match pole {
            Pole::Liberal => &self.liberal_statement,
            Pole::Conservative => &self.complement_statement,
        }
    }
}

/// A validated, immutable set of topics.
#[derive(Debug, Clone)]
pub struct Corpus {
    topics: Vec<Topic>,
    source_hash: String,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.topics == other.topics
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusFile {
    topics: Vec<Topic>,
}

/// One violated corpus invariant, attributed to a topic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub topic_id: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "topic `{}`: {}", self.topic_id, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read corpus file `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("corpus parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("corpus validation failed: {0}")]
    Validation(Violation),
}

impl Corpus {
    /// Loads and validates a corpus file. Fails with the first violated
    /// invariant if the file parses but is not a valid corpus.
    pub fn load(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Corpus::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Corpus, CorpusError> {
        let file: CorpusFile = toml::from_str(text)?;
        if let Some(first) = validate_topics(&file.topics).into_iter().next() {
            return Err(CorpusError::Validation(first));
        }
        Ok(Corpus {
            topics: file.topics,
            source_hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    /// Parses topics without validating, so callers can report every
    /// violation instead of only the first.
    pub fn parse_topics(text: &str) -> Result<Vec<Topic>, CorpusError> {
        let file: CorpusFile = toml::from_str(text)?;
        Ok(file.topics)
    }

    /// The corpus shipped with the binary.
    pub fn bundled() -> Corpus {
        Corpus::from_toml_str(BUNDLED_CORPUS_TOML).expect("bundled corpus must be valid")
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn topic(&self, id: &str) -> Option<&Topic> {
        self.topics.iter().find(|t| t.id == id)
    }

    /// SHA-256 of the source text this corpus was parsed from, recorded in
    /// transcripts for reproducibility.
    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn to_toml_string(&self) -> String {
        let file = CorpusFile {
            topics: self.topics.clone(),
        };
        toml::to_string_pretty(&file).expect("corpus serialization cannot fail")
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Checks every topic against the corpus invariants and returns all
/// violations, in file order.
pub fn validate_topics(topics: &[Topic]) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut push = |topic: &Topic, message: String| {
        violations.push(Violation {
            topic_id: topic.id.clone(),
            message,
        });
    };

    for topic in topics {
        if topic.id.is_empty() {
            push(topic, "empty topic id".into());
        }
        if topic.liberal_statement.is_empty() {
            push(topic, "liberal_statement is empty".into());
        }
        if topic.complement_statement.is_empty() {
            push(topic, "complement_statement is empty".into());
        }
        if topic.liberal_statement == topic.complement_statement {
            push(
                topic,
                "liberal_statement equals complement_statement".into(),
            );
        }
        for (name, pct) in [
            ("liberals_agreeing_pct", topic.liberals_agreeing_pct),
            (
                "conservatives_agreeing_pct",
                topic.conservatives_agreeing_pct,
            ),
        ] {
            if !(0.0..=100.0).contains(&pct) {
                push(topic, format!("{name} {pct} outside [0, 100]"));
            }
        }
        if topic.oneshot.liberal.is_empty() || topic.oneshot.conservative.is_empty() {
            push(topic, "oneshot statement is empty".into());
        }

        for level in OpinionLevel::ALL {
            let Some(fragments) = topic.fragments.get(&level) else {
                push(
                    topic,
                    format!("missing fragments for level `{}`", level.slug()),
                );
                continue;
            };
            for (field, text) in [
                ("opinion_clause", &fragments.opinion_clause),
                ("elaboration", &fragments.elaboration),
                ("example_utterance", &fragments.example_utterance),
            ] {
                if text.is_empty() {
                    push(topic, format!("{field} for `{}` is empty", level.slug()));
                }
            }

            // Pole-appropriate statement in the clause, and no bleed-through
            // of the opposite statement anywhere in the level's fragments.
            let all_text = format!(
                "{} {} {}",
                fragments.opinion_clause, fragments.elaboration, fragments.example_utterance
            );
            match level.pole() {
                Some(Pole::Liberal) => {
                    if !contains_ci(&fragments.opinion_clause, &topic.liberal_statement) {
                        push(
                            topic,
                            format!(
                                "opinion_clause for `{}` does not reference the liberal statement",
                                level.slug()
                            ),
                        );
                    }
                    if contains_ci(&all_text, &topic.complement_statement) {
                        push(
                            topic,
                            format!(
                                "fragments for `{}` contain the complement statement",
                                level.slug()
                            ),
                        );
                    }
                }
                Some(Pole::Conservative) => {
                    if !contains_ci(&fragments.opinion_clause, &topic.complement_statement) {
                        push(
                            topic,
                            format!(
                                "opinion_clause for `{}` does not reference the complement statement",
                                level.slug()
                            ),
                        );
                    }
                    if contains_ci(&all_text, &topic.liberal_statement) {
                        push(
                            topic,
                            format!(
                                "fragments for `{}` contain the liberal statement",
                                level.slug()
                            ),
                        );
                    }
                }
                None => {
                    if contains_ci(&all_text, &topic.liberal_statement)
                        || contains_ci(&all_text, &topic.complement_statement)
                    {
                        push(topic, "neutral fragments reference a statement".into());
                    }
                    if contains_ci(&fragments.opinion_clause, "agree with the statement") {
                        push(
                            topic,
                            "neutral opinion_clause uses agreement phrasing".into(),
                        );
                    }
                }
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_has_the_eight_topics() {
        let corpus = Corpus::bundled();
        let ids: Vec<&str> = corpus.topics().iter().map(|t| t.id.as_str()).collect();
        assert_eq!(
            ids,
            [
                "abortion",
                "climate_change",
                "gender_identity",
                "gun_control",
                "healthcare",
                "immigration",
                "marijuana_legalization",
                "racial_attitude",
            ]
        );
    }

    #[test]
    fn bundled_healthcare_matches_poll_data() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("healthcare").unwrap();
        assert_eq!(
            topic.liberal_statement,
            "Government should ensure that everyone has healthcare"
        );
        assert_eq!(topic.liberals_agreeing_pct, 85.0);
        assert_eq!(topic.conservatives_agreeing_pct, 30.0);
    }

    #[test]
    fn missing_neutral_fragment_is_a_validation_error() {
        let mut text = BUNDLED_CORPUS_TOML.to_string();
        // Drop one neutral fragment table from the first topic.
        let start = text.find("[topics.fragments.neutral]").unwrap();
        let end = text[start..]
            .find("[topics.fragments.slightly_conservative]")
            .unwrap();
        text.replace_range(start..start + end, "");
        match Corpus::from_toml_str(&text) {
            Err(CorpusError::Validation(v)) => {
                assert_eq!(v.topic_id, "abortion");
                assert!(
                    v.message.contains("neutral"),
                    "unexpected message: {}",
                    v.message
                );
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        match Corpus::from_toml_str("") {
            Err(CorpusError::Parse(_)) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn swapped_statement_is_reported() {
        let corpus = Corpus::bundled();
        let mut topics = corpus.topics().to_vec();
        // Point a liberal clause at the complement statement.
        let complement = topics[0].complement_statement.clone();
        let clause = topics[0]
            .fragments
            .get_mut(&OpinionLevel::StronglyLiberal)
            .unwrap();
        clause.opinion_clause = format!("You strongly agree with the statement \"{complement}\".");
        let violations = validate_topics(&topics);
        assert!(!violations.is_empty());
        assert_eq!(violations[0].topic_id, "abortion");
    }

    #[test]
    fn round_trip_parses_back_to_an_equal_corpus() {
        let corpus = Corpus::bundled();
        let text = corpus.to_toml_string();
        let reloaded = Corpus::from_toml_str(&text).unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn source_hash_tracks_the_input_text() {
        let a = Corpus::bundled();
        let b = Corpus::from_toml_str(BUNDLED_CORPUS_TOML).unwrap();
        assert_eq!(a.source_hash(), b.source_hash());
        let c = Corpus::from_toml_str(&a.to_toml_string()).unwrap();
        assert_ne!(a.source_hash(), c.source_hash());
    }
}
