//! Pure analysis over stored transcripts: unwarranted-change detection and
//! the aggregations behind the four report tables.
//!
//! Whether intra-pole softening (strongly to slightly conservative, say)
//! counts as a change is a matter of reading; both criteria are computed
//! and the change-rate table reports them side by side. Events detected on
//! post-conversation internal probes are included by default and flagged
//! so they can be excluded.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chatroom::{MessageKind, Transcript};
use crate::level::{OpinionLevel, Pole};
use crate::oneshot::OneShotResult;

/// What counts as an unwarranted opinion change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeCriterion {
    /// Any difference between the classified level and the level held
    /// before the message.
    AnyLevelChange,
    /// Only changes of pole, with neutral counting as leaving the pole.
    PoleFlip,
}

impl ChangeCriterion {
    pub const BOTH: [ChangeCriterion; 2] =
        [ChangeCriterion::AnyLevelChange, ChangeCriterion::PoleFlip];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeCriterion::AnyLevelChange => "any-level",
            ChangeCriterion::PoleFlip => "pole-flip",
        }
    }
}

impl std::str::FromStr for ChangeCriterion {
    type Err = String;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        match text {
            "any-level" => Ok(ChangeCriterion::AnyLevelChange),
            "pole-flip" => Ok(ChangeCriterion::PoleFlip),
            _ => Err(format!(
                "unknown criterion `{text}` (expected any-level or pole-flip)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeDirection {
    TowardLiberal,
    TowardConservative,
}

/// One detected deviation of an agent's expressed opinion from its held
/// stance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub agent: String,
    pub message_index: u32,
    pub from_level: OpinionLevel,
    pub to_level: OpinionLevel,
    pub direction: ChangeDirection,
    pub from_internal: bool,
}

fn sign_category(level: OpinionLevel) -> i8 {
    level.numeric_code().signum()
}

/// Walks every message's classification against the opinion its author
/// held going in, and reports the differences admitted by `criterion`.
pub fn detect_change_events(
    transcript: &Transcript,
    criterion: ChangeCriterion,
) -> Vec<ChangeEvent> {
    let mut events = Vec::new();
    for message in &transcript.messages {
        let Some(expressed) = message.classification.final_label else {
            continue;
        };
        let held = message.author_opinion_before;
        if expressed == held {
            continue;
        }
        let counts = match criterion {
            ChangeCriterion::AnyLevelChange => true,
            ChangeCriterion::PoleFlip => sign_category(expressed) != sign_category(held),
        };
        if !counts {
            continue;
        }
        events.push(ChangeEvent {
            agent: message.author.clone(),
            message_index: message.index,
            from_level: held,
            to_level: expressed,
            direction: if expressed.numeric_code() < held.numeric_code() {
                ChangeDirection::TowardLiberal
            } else {
                ChangeDirection::TowardConservative
            },
            from_internal: message.kind == MessageKind::Internal,
        });
    }
    events
}

/// Filters applied before aggregation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub criterion: ChangeCriterion,
    /// Keep transcripts with failed classifications.
    pub include_degraded: bool,
    /// Keep events detected on internal probe messages.
    pub include_internal: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            criterion: ChangeCriterion::AnyLevelChange,
            include_degraded: false,
            include_internal: true,
        }
    }
}

impl AnalysisOptions {
    fn admitted_events(&self, transcript: &Transcript) -> Vec<ChangeEvent> {
        detect_change_events(transcript, self.criterion)
            .into_iter()
            .filter(|e| self.include_internal || !e.from_internal)
            .collect()
    }

    fn admitted<'a>(&self, transcripts: &[&'a Transcript]) -> Vec<&'a Transcript> {
        transcripts
            .iter()
            .copied()
            .filter(|t| self.include_degraded || !t.degraded)
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no transcripts left in the cell after filtering")]
    EmptyCell,
    #[error("cell mixes configurations: {0}")]
    MixedCell(String),
}

/// Per-direction event totals across a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirectionCounts {
    pub toward_liberal: u64,
    pub toward_conservative: u64,
}

/// Aggregated change statistics for one (model, topic, pole) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model_id: String,
    pub topic_id: String,
    pub pole: Pole,
    pub n_transcripts: u64,
    pub n_with_change: u64,
    pub pct_with_change: f64,
    /// Distinct-agents-changed count per transcript, keyed 0..=N.
    pub agents_changed_histogram: BTreeMap<u32, u64>,
    pub direction_counts: DirectionCounts,
}

fn agents_changed(events: &[ChangeEvent]) -> u32 {
    events
        .iter()
        .map(|e| e.agent.as_str())
        .collect::<BTreeSet<_>>()
        .len() as u32
}

/// Summarizes one cell. All transcripts must share model, topic and pole.
pub fn summarize_cell(
    transcripts: &[&Transcript],
    options: &AnalysisOptions,
) -> Result<CellSummary, MetricsError> {
    let kept = options.admitted(transcripts);
    let first = kept.first().ok_or(MetricsError::EmptyCell)?;
    let (model_id, topic_id, pole) = (
        first.config.model_id.clone(),
        first.config.topic_id.clone(),
        first.config.initial_pole,
    );
    for t in &kept {
        if t.config.model_id != model_id
            || t.config.topic_id != topic_id
            || t.config.initial_pole != pole
        {
            return Err(MetricsError::MixedCell(format!(
                "expected ({model_id}, {topic_id}, {pole}), found ({}, {}, {})",
                t.config.model_id, t.config.topic_id, t.config.initial_pole
            )));
        }
    }

    let n_agents = kept.iter().map(|t| t.config.n_agents).max().unwrap_or(0);
    let mut histogram: BTreeMap<u32, u64> = (0..=n_agents).map(|k| (k, 0)).collect();
    let mut n_with_change = 0u64;
    let mut direction_counts = DirectionCounts::default();
    for t in &kept {
        let events = options.admitted_events(t);
        if !events.is_empty() {
            n_with_change += 1;
        }
        *histogram.entry(agents_changed(&events)).or_insert(0) += 1;
        for event in &events {
            match event.direction {
                ChangeDirection::TowardLiberal => direction_counts.toward_liberal += 1,
                ChangeDirection::TowardConservative => direction_counts.toward_conservative += 1,
            }
        }
    }

    let n_transcripts = kept.len() as u64;
    Ok(CellSummary {
        model_id,
        topic_id,
        pole,
        n_transcripts,
        n_with_change,
        pct_with_change: 100.0 * n_with_change as f64 / n_transcripts as f64,
        agents_changed_histogram: histogram,
        direction_counts,
    })
}

/// Share of transcripts with at least one admitted event, over an
/// arbitrary pool.
pub fn pct_with_change(
    transcripts: &[&Transcript],
    options: &AnalysisOptions,
) -> Result<f64, MetricsError> {
    let kept = options.admitted(transcripts);
    if kept.is_empty() {
        return Err(MetricsError::EmptyCell);
    }
    let with_change = kept
        .iter()
        .filter(|t| !options.admitted_events(t).is_empty())
        .count();
    Ok(100.0 * with_change as f64 / kept.len() as f64)
}

/// Change rate per conversation length, conservative conversations only.
pub fn length_sweep_table(
    transcripts: &[&Transcript],
    options: &AnalysisOptions,
) -> Result<Vec<(u32, f64)>, MetricsError> {
    let conservative: Vec<&Transcript> = transcripts
        .iter()
        .copied()
        .filter(|t| t.config.initial_pole == Pole::Conservative)
        .collect();
    let mut by_m: BTreeMap<u32, Vec<&Transcript>> = BTreeMap::new();
    for t in conservative {
        by_m.entry(t.config.n_messages).or_default().push(t);
    }
    if by_m.is_empty() {
        return Err(MetricsError::EmptyCell);
    }
    let mut rows = Vec::new();
    for (m, group) in by_m {
        rows.push((m, pct_with_change(&group, options)?));
    }
    Ok(rows)
}

/// One row of the one-shot table; duplicate cells average their scores
/// with the count recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotRow {
    pub model_id: String,
    pub topic_id: String,
    pub pole: Pole,
    pub score: f64,
    pub n: u64,
}

pub fn oneshot_table(results: &[&OneShotResult]) -> Vec<OneShotRow> {
    let mut cells: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for result in results {
        cells
            .entry((
                result.model_id.clone(),
                result.topic_id.clone(),
                result.pole.slug().to_string(),
            ))
            .or_default()
            .push(result.deviation_score);
    }
    cells
        .into_iter()
        .map(|((model_id, topic_id, pole), scores)| OneShotRow {
            model_id,
            topic_id,
            pole: Pole::from_slug(&pole).expect("pole slug"),
            score: scores.iter().sum::<f64>() / scores.len() as f64,
            n: scores.len() as u64,
        })
        .collect()
}

/// The four CSV report files.
#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub fig1_csv: String,
    pub fig2_csv: String,
    pub fig3_csv: String,
    pub fig4_csv: String,
}

fn fmt_pct(pct: f64) -> String {
    format!("{pct:.1}")
}

fn group_cells<'a>(
    transcripts: &[&'a Transcript],
) -> BTreeMap<(String, String, String), Vec<&'a Transcript>> {
    let mut cells: BTreeMap<(String, String, String), Vec<&Transcript>> = BTreeMap::new();
    for t in transcripts {
        cells
            .entry((
                t.config.model_id.clone(),
                t.config.topic_id.clone(),
                t.config.initial_pole.slug().to_string(),
            ))
            .or_default()
            .push(t);
    }
    cells
}

/// Renders all four reports. The change-rate table (`fig2`) always carries
/// both criteria; the per-agent histogram and length sweep use the
/// selected criterion.
pub fn render_reports(
    transcripts: &[&Transcript],
    oneshots: &[&OneShotResult],
    options: &AnalysisOptions,
) -> Reports {
    // fig1: one-shot deviation scores.
    let mut fig1 = String::from("model,topic,pole,score,n\n");
    for row in oneshot_table(oneshots) {
        fig1.push_str(&format!(
            "{},{},{},{:.2},{}\n",
            row.model_id,
            row.topic_id,
            row.pole.slug(),
            row.score,
            row.n
        ));
    }

    // fig2: change rates per cell and pooled across poles, both criteria.
    let mut fig2 = String::from("model,topic,pole,criterion,n,pct\n");
    let cells = group_cells(transcripts);
    for ((model, topic, pole), group) in &cells {
        for criterion in ChangeCriterion::BOTH {
            let opts = AnalysisOptions {
                criterion,
                ..*options
            };
            let kept = opts.admitted(group);
            if kept.is_empty() {
                continue;
            }
            let pct = pct_with_change(group, &opts).expect("group is non-empty");
            fig2.push_str(&format!(
                "{model},{topic},{pole},{},{},{}\n",
                criterion.as_str(),
                kept.len(),
                fmt_pct(pct)
            ));
        }
    }
    let mut pooled: BTreeMap<(String, String), Vec<&Transcript>> = BTreeMap::new();
    for ((model, topic, _), group) in &cells {
        pooled
            .entry((model.clone(), topic.clone()))
            .or_default()
            .extend(group.iter().copied());
    }
    for ((model, topic), group) in &pooled {
        for criterion in ChangeCriterion::BOTH {
            let opts = AnalysisOptions {
                criterion,
                ..*options
            };
            let kept = opts.admitted(group);
            if kept.is_empty() {
                continue;
            }
            let pct = pct_with_change(group, &opts).expect("group is non-empty");
            fig2.push_str(&format!(
                "{model},{topic},pooled,{},{},{}\n",
                criterion.as_str(),
                kept.len(),
                fmt_pct(pct)
            ));
        }
    }

    // fig3: distinct-agents-changed histogram per cell.
    let mut fig3 = String::from("model,topic,pole,agents_changed,count\n");
    for ((model, topic, pole), group) in &cells {
        match summarize_cell(group, options) {
            Ok(summary) => {
                for (agents, count) in &summary.agents_changed_histogram {
                    fig3.push_str(&format!("{model},{topic},{pole},{agents},{count}\n"));
                }
            }
            Err(MetricsError::EmptyCell) => {}
            Err(err) => unreachable!("grouped cells are homogeneous: {err}"),
        }
    }

    // fig4: change rate by conversation length, conservative pole.
    let mut fig4 = String::from("model,topic,M,pct\n");
    let mut sweep_groups: BTreeMap<(String, String), Vec<&Transcript>> = BTreeMap::new();
    for t in transcripts {
        if t.config.initial_pole == Pole::Conservative {
            sweep_groups
                .entry((t.config.model_id.clone(), t.config.topic_id.clone()))
                .or_default()
                .push(t);
        }
    }
    for ((model, topic), group) in &sweep_groups {
        match length_sweep_table(group, options) {
            Ok(rows) => {
                for (m, pct) in rows {
                    fig4.push_str(&format!("{model},{topic},{m},{}\n", fmt_pct(pct)));
                }
            }
            Err(MetricsError::EmptyCell) => {}
            Err(err) => unreachable!("sweep groups are conservative-only: {err}"),
        }
    }

    Reports {
        fig1_csv: fig1,
        fig2_csv: fig2,
        fig3_csv: fig3,
        fig4_csv: fig4,
    }
}
