//! The five-step opinion scale and its two poles.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One of the five stance levels an agent can hold or express.
///
/// The scale is anchored by agreement with a topic's statement (liberal
/// pole) or its complement (conservative pole), with a neutral midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpinionLevel {
    StronglyLiberal,
    SlightlyLiberal,
    Neutral,
    SlightlyConservative,
    StronglyConservative,
}

/// The liberal or conservative side of the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pole {
    Liberal,
    Conservative,
}

impl OpinionLevel {
    /// All five levels, ordered from liberal to conservative.
    pub const ALL: [OpinionLevel; 5] = [
        OpinionLevel::StronglyLiberal,
        OpinionLevel::SlightlyLiberal,
        OpinionLevel::Neutral,
        OpinionLevel::SlightlyConservative,
        OpinionLevel::StronglyConservative,
    ];

    /// Signed position on the scale: -2 (strongly liberal) .. +2
    /// (strongly conservative), 0 for neutral.
    pub fn numeric_code(self) -> i8 {
        match self {
            OpinionLevel::StronglyLiberal => -2,
            OpinionLevel::SlightlyLiberal => -1,
            OpinionLevel::Neutral => 0,
            OpinionLevel::SlightlyConservative => 1,
            OpinionLevel::StronglyConservative => 2,
        }
    }

    pub fn from_numeric_code(code: i8) -> Option<OpinionLevel> {
        Self::ALL.iter().copied().find(|l| l.numeric_code() == code)
    }

    /// The pole this level belongs to; `None` for neutral.
    pub fn pole(self) -> Option<Pole> {
        match self.numeric_code() {
            c if c < 0 => Some(Pole::Liberal),
            c if c > 0 => Some(Pole::Conservative),
            _ => None,
        }
    }

    /// Snake-case identifier used in corpus files and transcripts.
    pub fn slug(self) -> &'static str {
        match self {
            OpinionLevel::StronglyLiberal => "strongly_liberal",
            OpinionLevel::SlightlyLiberal => "slightly_liberal",
            OpinionLevel::Neutral => "neutral",
            OpinionLevel::SlightlyConservative => "slightly_conservative",
            OpinionLevel::StronglyConservative => "strongly_conservative",
        }
    }

    pub fn from_slug(slug: &str) -> Option<OpinionLevel> {
        Self::ALL.iter().copied().find(|l| l.slug() == slug)
    }

    /// Human-readable label, as presented to classifier agents.
    pub fn canonical_name(self) -> &'static str {
        match self {
            OpinionLevel::StronglyLiberal => "Strongly liberal",
            OpinionLevel::SlightlyLiberal => "Slightly liberal",
            OpinionLevel::Neutral => "Neutral",
            OpinionLevel::SlightlyConservative => "Slightly conservative",
            OpinionLevel::StronglyConservative => "Strongly conservative",
        }
    }

    /// The level an echo chamber of the given pole is initialized at.
    pub fn strong(pole: Pole) -> OpinionLevel {
        match pole {
            Pole::Liberal => OpinionLevel::StronglyLiberal,
            Pole::Conservative => OpinionLevel::StronglyConservative,
        }
    }
}

// Ordering follows numeric_code so level maps iterate liberal-first.
impl Ord for OpinionLevel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.numeric_code().cmp(&other.numeric_code())
    }
}

impl PartialOrd for OpinionLevel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for OpinionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl Pole {
    pub fn slug(self) -> &'static str {
        match self {
            Pole::Liberal => "liberal",
            Pole::Conservative => "conservative",
        }
    }

    pub fn from_slug(slug: &str) -> Option<Pole> {
        match slug {
            "liberal" => Some(Pole::Liberal),
            "conservative" => Some(Pole::Conservative),
            _ => None,
        }
    }
}

impl fmt::Display for Pole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}
