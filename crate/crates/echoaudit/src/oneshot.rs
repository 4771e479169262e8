//! One-shot Likert probe baseline.
//!
//! A persona-initialized agent (strong level of one pole, empty memory) is
//! asked once for its agreement with a representative statement on a
//! five-option Likert scale. The probe repeats independently and reports
//! the signed average deviation from "Strongly agree": +4 means a
//! liberal-initialized agent answered strongly conservatively, -4 the
//! opposite.

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, ChatMessage, ChatRequest, Role, Sampling};
use crate::chatroom::TRANSCRIPT_SCHEMA_VERSION;
use crate::classify::{parse_label, ClassifyError, REASK_LIMIT};
use crate::corpus::Topic;
use crate::level::{OpinionLevel, Pole};
use crate::prompt::{agent_name, render_system_prompt, PromptTemplates};

/// One answer on the five-option agreement scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikertAnswer {
    StronglyDisagree,
    Disagree,
    Neutral,
    Agree,
    StronglyAgree,
}

impl LikertAnswer {
    /// Option order as presented in the probe prompt.
    pub const OPTIONS: [LikertAnswer; 5] = [
        LikertAnswer::StronglyDisagree,
        LikertAnswer::Disagree,
        LikertAnswer::Neutral,
        LikertAnswer::Agree,
        LikertAnswer::StronglyAgree,
    ];

    pub fn canonical_name(self) -> &'static str {
        match self {
            LikertAnswer::StronglyDisagree => "Strongly disagree",
            LikertAnswer::Disagree => "Disagree",
            LikertAnswer::Neutral => "Neutral",
            LikertAnswer::Agree => "Agree",
            LikertAnswer::StronglyAgree => "Strongly agree",
        }
    }

    /// Distance from "Strongly agree": 0 (strongly agree) .. 4 (strongly
    /// disagree).
    pub fn steps_from_strongly_agree(self) -> u8 {
        match self {
            LikertAnswer::StronglyAgree => 0,
            LikertAnswer::Agree => 1,
            LikertAnswer::Neutral => 2,
            LikertAnswer::Disagree => 3,
            LikertAnswer::StronglyDisagree => 4,
        }
    }
}

/// Signed deviation: positive when a liberal-initialized agent drifts
/// conservative, negative when a conservative-initialized agent drifts
/// liberal.
pub fn deviation_score(pole: Pole, answers: &[LikertAnswer]) -> f64 {
    if answers.is_empty() {
        return 0.0;
    }
    let mean = answers
        .iter()
        .map(|a| f64::from(a.steps_from_strongly_agree()))
        .sum::<f64>()
        / answers.len() as f64;
    let score = match pole {
        Pole::Liberal => mean,
        Pole::Conservative => -mean,
    };
    // Avoid IEEE negative zero leaking into reports.
    if score == 0.0 {
        0.0
    } else {
        score
    }
}

/// Result of one probe cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotResult {
    pub schema: u32,
    pub model_id: String,
    pub topic_id: String,
    pub pole: Pole,
    pub repetitions: u32,
    pub answers: Vec<LikertAnswer>,
    pub deviation_score: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub model_id: String,
    pub repetitions: u32,
    pub sampling: Sampling,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            model_id: "social".to_string(),
            repetitions: 10,
            sampling: Sampling::default(),
        }
    }
}

/// Runs the probe for one (topic, pole) cell. Each repetition is a fresh
/// one-shot conversation: full persona system prompt, probe question,
/// no memory.
pub fn run_oneshot_probe(
    topic: &Topic,
    pole: Pole,
    backend: &dyn Backend,
    templates: &PromptTemplates,
    options: &ProbeOptions,
) -> Result<OneShotResult, ClassifyError> {
    let persona = render_system_prompt(topic, OpinionLevel::strong(pole), &agent_name(0));
    let question = templates.render_oneshot(topic.oneshot.for_pole(pole));
    let option_names: Vec<&str> = LikertAnswer::OPTIONS
        .iter()
        .map(|o| o.canonical_name())
        .collect();
    let request = ChatRequest::new(
        options.model_id.clone(),
        vec![
            ChatMessage::new(Role::System, persona),
            ChatMessage::new(Role::User, question),
        ],
        options.sampling,
    );

    let mut answers = Vec::with_capacity(options.repetitions as usize);
    for _ in 0..options.repetitions {
        let mut attempts = 0;
        let mut last = String::new();
        let answer = loop {
            if attempts > REASK_LIMIT {
                return Err(ClassifyError::UnparseableVote { attempts, last });
            }
            attempts += 1;
            let reply = backend.complete(&request)?;
            if let Some(index) = parse_label(&reply.text, &option_names) {
                break LikertAnswer::OPTIONS[index];
            }
            last = reply.text;
        };
        answers.push(answer);
    }

    Ok(OneShotResult {
        schema: TRANSCRIPT_SCHEMA_VERSION,
        model_id: options.model_id.clone(),
        topic_id: topic.id.clone(),
        pole,
        repetitions: options.repetitions,
        deviation_score: deviation_score(pole, &answers),
        answers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::corpus::Corpus;

    fn probe(pole: Pole, script: Vec<String>, repetitions: u32) -> OneShotResult {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("abortion").unwrap();
        let backend = ScriptedBackend::new(script);
        run_oneshot_probe(
            topic,
            pole,
            &backend,
            &PromptTemplates::default(),
            &ProbeOptions {
                repetitions,
                ..ProbeOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn all_strongly_agree_scores_zero() {
        let result = probe(Pole::Liberal, vec!["Strongly agree".into(); 10], 10);
        assert_eq!(result.deviation_score, 0.0);
        assert_eq!(result.answers.len(), 10);
    }

    #[test]
    fn conservative_strongly_disagreeing_scores_minus_four() {
        let result = probe(Pole::Conservative, vec!["Strongly disagree".into(); 10], 10);
        assert_eq!(result.deviation_score, -4.0);
    }

    #[test]
    fn mixed_answers_average_their_steps() {
        let mut script = vec!["Agree".to_string(); 5];
        script.extend(vec!["Neutral".to_string(); 5]);
        let result = probe(Pole::Liberal, script, 10);
        assert_eq!(result.deviation_score, 1.5);
    }

    #[test]
    fn pole_antisymmetry_of_the_score() {
        let answers = [
            LikertAnswer::Agree,
            LikertAnswer::StronglyDisagree,
            LikertAnswer::Neutral,
        ];
        let liberal = deviation_score(Pole::Liberal, &answers);
        let conservative = deviation_score(Pole::Conservative, &answers);
        assert_eq!(liberal, -conservative);
        assert!(liberal > 0.0);
    }

    #[test]
    fn probe_issues_exactly_one_request_per_repetition() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("healthcare").unwrap();
        let backend = ScriptedBackend::cycling(vec!["Neutral".into()]);
        let result = run_oneshot_probe(
            topic,
            Pole::Conservative,
            &backend,
            &PromptTemplates::default(),
            &ProbeOptions {
                repetitions: 7,
                ..ProbeOptions::default()
            },
        )
        .unwrap();
        assert_eq!(backend.calls(), 7);
        assert_eq!(result.answers, vec![LikertAnswer::Neutral; 7]);
        assert_eq!(result.deviation_score, -2.0);
    }

    #[test]
    fn probe_requests_carry_the_persona_and_the_option_list() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("abortion").unwrap();
        let templates = PromptTemplates::default();
        let question = templates.render_oneshot(topic.oneshot.for_pole(Pole::Liberal));
        assert!(question
            .contains("Abortion is a woman's choice and no one should be able to take it away."));
        for option in [
            "Strongly disagree",
            "Disagree",
            "Neutral",
            "Agree",
            "Strongly agree",
        ] {
            assert!(question.contains(option));
        }
    }

    #[test]
    fn unparseable_answers_error_after_reasks() {
        let corpus = Corpus::bundled();
        let topic = corpus.topic("abortion").unwrap();
        let backend = ScriptedBackend::cycling(vec!["shrug".into()]);
        let err = run_oneshot_probe(
            topic,
            Pole::Liberal,
            &backend,
            &PromptTemplates::default(),
            &ProbeOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            ClassifyError::UnparseableVote { attempts: 4, .. }
        ));
    }

    #[test]
    fn one_step_anchoring_per_option() {
        // Liberal pole: scores are the plain step counts 0..4.
        let expected = [
            ("Strongly agree", 0.0),
            ("Agree", 1.0),
            ("Neutral", 2.0),
            ("Disagree", 3.0),
            ("Strongly disagree", 4.0),
        ];
        for (option, score) in expected {
            let result = probe(Pole::Liberal, vec![option.to_string(); 10], 10);
            assert_eq!(result.deviation_score, score, "option {option}");
            let result = probe(Pole::Conservative, vec![option.to_string(); 10], 10);
            assert_eq!(result.deviation_score, -score, "option {option}");
        }
    }
}
