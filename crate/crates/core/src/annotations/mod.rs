//! Hierarchical ground-truth annotations.

mod io;
mod qa;
mod synth;

pub use io::{
    check_annotations, check_annotations_file, load_annotations, load_predictions,
    parse_annotations, parse_predictions, save_annotations, to_jsonl, write_annotations,
    CheckReport, IngestError, SCHEMA_VERSION,
};
pub use qa::{
    generate_qa, generate_qa_with_schema, qa_to_jsonl, AnswerDraft, QaError, QaPair,
    SportTemplates, TemplateSet,
};
pub use synth::{synth_dataset, SportProfile, SynthConfig, SynthError};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("interval bounds must be finite")]
    NonFinite,
    #[error("interval start {0} is negative")]
    NegativeStart(f64),
    #[error("interval end {end} is not after start {start}")]
    EmptyOrReversed { start: f64, end: f64 },
}

/// Half-open time span `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInterval")]
pub struct TimeInterval {
    start: f64,
    end: f64,
}

#[derive(Deserialize)]
struct RawInterval {
    start: f64,
    end: f64,
}

impl TryFrom<RawInterval> for TimeInterval {
    type Error = IntervalError;
    fn try_from(raw: RawInterval) -> Result<Self, Self::Error> {
        TimeInterval::new(raw.start, raw.end)
    }
}

impl TimeInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, IntervalError> {
        if !start.is_finite() || !end.is_finite() {
            return Err(IntervalError::NonFinite);
        }
        if start < 0.0 {
            return Err(IntervalError::NegativeStart(start));
        }
        if end <= start {
            return Err(IntervalError::EmptyOrReversed { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sport {
    Diving,
    FigureSkating,
    ArtisticSwimming,
}

impl Sport {
    pub const ALL: [Sport; 3] = [Sport::Diving, Sport::FigureSkating, Sport::ArtisticSwimming];

    pub fn as_str(self) -> &'static str {
        match self {
            Sport::Diving => "diving",
            Sport::FigureSkating => "figure_skating",
            Sport::ArtisticSwimming => "artistic_swimming",
        }
    }

    pub fn parse(s: &str) -> Option<Sport> {
        Sport::ALL.into_iter().find(|sp| sp.as_str() == s)
    }
}

impl fmt::Display for Sport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubActionAnnotation {
    pub label: String,
    pub interval: TimeInterval,
}

impl SubActionAnnotation {
    pub fn new(label: impl Into<String>, start: f64, end: f64) -> Result<Self, IntervalError> {
        Ok(Self {
            label: label.into(),
            interval: TimeInterval::new(start, end)?,
        })
    }
}

/// Ground truth for one performance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub instance_id: String,
    pub sport: Sport,
    pub action_label: String,
    pub sub_actions: Vec<SubActionAnnotation>,
    pub difficulty: f64,
    pub quality: f64,
    pub final_score: f64,
    pub prompt: String,
    pub reference_answer: Option<String>,
}

/// A contiguous group of sub-actions rendered as one recognition step.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGroup {
    pub name: String,
    pub members: std::ops::Range<usize>,
}

/// Phase layout for a sport: diving splits into take-off, flight (one or
/// more middle sub-actions) and entry; other sports use one phase per
/// element.
pub fn phase_groups(sport: Sport, n_sub_actions: usize) -> Vec<PhaseGroup> {
    if sport == Sport::Diving && n_sub_actions >= 3 {
        return vec![
            PhaseGroup {
                name: "Take-off".into(),
                members: 0..1,
            },
            PhaseGroup {
                name: "Flight".into(),
                members: 1..n_sub_actions - 1,
            },
            PhaseGroup {
                name: "Entry".into(),
                members: n_sub_actions - 1..n_sub_actions,
            },
        ];
    }
    (0..n_sub_actions)
        .map(|i| PhaseGroup {
            name: format!("Element {}", i + 1),
            members: i..i + 1,
        })
        .collect()
}

// Characters that would break the answer-block field syntax.
const RESERVED_LABEL_CHARS: [char; 5] = [';', '[', ']', '\n', '\r'];

fn check_label(what: &str, label: &str) -> Result<(), String> {
    if label.trim().is_empty() {
        return Err(format!("{what} is empty"));
    }
    if label.trim() != label {
        return Err(format!("{what} has surrounding whitespace"));
    }
    if let Some(c) = label.chars().find(|c| RESERVED_LABEL_CHARS.contains(c)) {
        return Err(format!("{what} contains reserved character {c:?}"));
    }
    Ok(())
}

impl ActionInstance {
    pub fn sub_action_labels(&self) -> Vec<&str> {
        self.sub_actions.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.sub_actions.iter().map(|s| s.interval).collect()
    }

    /// Checks every instance invariant; the error describes the first
    /// violation found.
    pub fn validate(&self) -> Result<(), String> {
        if self.instance_id.trim().is_empty() {
            return Err("id is empty".into());
        }
        check_label("action_label", &self.action_label)?;
        for (i, sub) in self.sub_actions.iter().enumerate() {
            check_label(&format!("sub_actions[{i}].label"), &sub.label)?;
        }
        for (i, pair) in self.sub_actions.windows(2).enumerate() {
            let (a, b) = (&pair[0].interval, &pair[1].interval);
            if b.start() < a.end() {
                return Err(format!(
                    "sub_actions[{}] starts at {} before sub_actions[{i}] ends at {}",
                    i + 1,
                    b.start(),
                    a.end()
                ));
            }
        }
        if self.sport == Sport::Diving && !(3..=4).contains(&self.sub_actions.len()) {
            return Err(format!(
                "diving needs take-off, 1-2 flight sub-actions and entry (3-4 sub-actions), got {}",
                self.sub_actions.len()
            ));
        }
        if !(self.difficulty.is_finite() && self.difficulty > 0.0) {
            return Err(format!("difficulty must be positive, got {}", self.difficulty));
        }
        if !self.quality.is_finite() {
            return Err("quality must be finite".into());
        }
        if !(self.final_score.is_finite() && self.final_score >= 0.0) {
            return Err(format!(
                "final_score must be non-negative, got {}",
                self.final_score
            ));
        }
        Ok(())
    }

    /// Checks sub-action labels against a vocabulary.
    pub fn check_vocabulary(&self, vocabulary: &[String]) -> Result<(), String> {
        match self
            .sub_actions
            .iter()
            .position(|s| !vocabulary.contains(&s.label))
        {
            Some(i) => Err(format!(
                "sub_actions[{i}].label `{}` is not in the vocabulary",
                self.sub_actions[i].label
            )),
            None => Ok(()),
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_rules() {
        assert!(TimeInterval::new(0.0, 1.0).is_ok());
        assert_eq!(
            TimeInterval::new(2.0, 2.0),
            Err(IntervalError::EmptyOrReversed { start: 2.0, end: 2.0 })
        );
        assert!(TimeInterval::new(-0.5, 1.0).is_err());
        assert!(TimeInterval::new(0.0, f64::NAN).is_err());
        assert!(serde_json::from_str::<TimeInterval>(r#"{"start":3,"end":1}"#).is_err());
    }

    #[test]
    fn fixture_is_valid() {
        fixtures::dive().validate().unwrap();
    }

    #[test]
    fn instance_invariants() {
        let mut d = fixtures::dive();
        d.sub_actions.swap(0, 1);
        assert!(d.validate().unwrap_err().contains("before"));

        let mut d = fixtures::dive();
        d.sub_actions.truncate(2);
        assert!(d.validate().is_err());

        let mut d = fixtures::dive();
        d.difficulty = 0.0;
        assert!(d.validate().is_err());

        let mut d = fixtures::dive();
        d.final_score = -1.0;
        assert!(d.validate().is_err());

        let mut d = fixtures::dive();
        d.sub_actions[0].label = "a;b".into();
        assert!(d.validate().is_err());

        let mut d = fixtures::dive();
        d.sport = Sport::FigureSkating;
        d.sub_actions.clear();
        assert!(d.validate().is_ok());
    }

    #[test]
    fn diving_phases_group_flight() {
        let groups = phase_groups(Sport::Diving, 4);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[1].members, 1..3);
        assert_eq!(phase_groups(Sport::FigureSkating, 4).len(), 4);
    }

    #[test]
    fn vocabulary_check() {
        let d = fixtures::dive();
        let vocab: Vec<String> = ["Back", "2.5 Soms.Pike", "1.5 Twists", "Entry"]
            .map(String::from)
            .to_vec();
        assert!(d.check_vocabulary(&vocab).is_ok());
        assert!(d.check_vocabulary(&vocab[..2]).is_err());
    }
}
