//! Key-value extraction from the answer block.
//!
//! The answer block carries labelled fields separated by the list separator
//! (`;`) or line breaks, e.g.
//!
//! ```text
//! Action: 5253B; Sub-actions: Forward [0.4, 1.1); 2.5 Soms.Pike [1.1, 2.9); Entry [2.9, 3.5); Quality: 24.5; Difficulty: 3.2; Score: 78.4
//! ```
//!
//! A segment that starts with a known label opens a field. Segments that do
//! not start with a label extend the sub-action list when it is the open
//! field and are ignored otherwise, so free prose before the fields is
//! tolerated. The first occurrence of a label wins.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SarDocument;
use crate::annotations::TimeInterval;

/// Labels and separators used in the answer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSchema {
    pub action_label: String,
    pub sub_actions_label: String,
    pub quality_label: String,
    pub difficulty_label: String,
    pub score_label: String,
    pub decimal_separator: char,
    pub list_separator: char,
    pub interval_separator: char,
    /// When set, sub-action labels outside this list are flagged.
    pub vocabulary: Option<Vec<String>>,
}

impl Default for ExtractionSchema {
    fn default() -> Self {
        Self {
            action_label: "Action:".into(),
            sub_actions_label: "Sub-actions:".into(),
            quality_label: "Quality:".into(),
            difficulty_label: "Difficulty:".into(),
            score_label: "Score:".into(),
            decimal_separator: '.',
            list_separator: ';',
            interval_separator: ',',
            vocabulary: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid extraction schema: {0}")]
    Invalid(String),
    #[error("cannot parse extraction schema: {0}")]
    Toml(#[from] toml::de::Error),
}

impl ExtractionSchema {
    pub fn from_toml_str(s: &str) -> Result<Self, SchemaError> {
        let schema: Self = toml::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let labels = self.labels();
        for (field, label) in labels {
            if label.trim().is_empty() || label.trim() != label {
                return Err(SchemaError::Invalid(format!(
                    "label for {} must be non-empty and trimmed",
                    field.name()
                )));
            }
        }
        for (i, (fa, a)) in labels.iter().enumerate() {
            for (fb, b) in &labels[i + 1..] {
                if a.starts_with(&**b) || b.starts_with(&**a) {
                    return Err(SchemaError::Invalid(format!(
                        "labels for {} and {} overlap",
                        fa.name(),
                        fb.name()
                    )));
                }
            }
        }
        let seps = [
            self.decimal_separator,
            self.list_separator,
            self.interval_separator,
        ];
        if seps[0] == seps[1] || seps[0] == seps[2] || seps[1] == seps[2] {
            return Err(SchemaError::Invalid(
                "decimal, list and interval separators must be distinct".into(),
            ));
        }
        if seps.iter().any(|c| c.is_whitespace() || "[)-+".contains(*c)) {
            return Err(SchemaError::Invalid(
                "separators cannot be whitespace, brackets or signs".into(),
            ));
        }
        Ok(())
    }

    fn labels(&self) -> [(Field, &str); 5] {
        [
            (Field::Action, self.action_label.as_str()),
            (Field::SubActions, self.sub_actions_label.as_str()),
            (Field::Quality, self.quality_label.as_str()),
            (Field::Difficulty, self.difficulty_label.as_str()),
            (Field::Score, self.score_label.as_str()),
        ]
    }

    fn parse_number(&self, field: Field, raw: &str) -> Result<f64, ExtractError> {
        let raw = raw.trim();
        let normalized = if self.decimal_separator == '.' {
            raw.to_string()
        } else if raw.contains('.') {
            return Err(ExtractError::UnparsableNumber(field.name()));
        } else {
            raw.replace(self.decimal_separator, ".")
        };
        match normalized.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(ExtractError::UnparsableNumber(field.name())),
        }
    }
}

/// Renders a number so that the schema's parser reads back the same value.
pub fn format_number(value: f64, schema: &ExtractionSchema) -> String {
    let s = value.to_string();
    if schema.decimal_separator == '.' {
        s
    } else {
        s.replace('.', &schema.decimal_separator.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Action,
    SubActions,
    Quality,
    Difficulty,
    Score,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::Action => "action",
            Field::SubActions => "sub_actions",
            Field::Quality => "quality",
            Field::Difficulty => "difficulty",
            Field::Score => "score",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` is not a finite number")]
    UnparsableNumber(&'static str),
    #[error("malformed sub-action item `{0}`")]
    MalformedInterval(String),
    #[error("field `{field}` is invalid: {reason}")]
    InvalidValue { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSubAction {
    pub label: String,
    pub interval: TimeInterval,
}

/// Machine-readable fields read from a prediction's answer block.
///
/// `Action`, `Difficulty` and `Score` are required. An absent `Sub-actions`
/// field reads as an empty sequence and an absent `Quality` as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedAssessment {
    pub action_label: String,
    pub sub_actions: Vec<PredictedSubAction>,
    pub quality: Option<f64>,
    pub difficulty: f64,
    pub final_score: f64,
    /// Sub-action labels not found in the schema vocabulary.
    pub unknown_labels: Vec<String>,
}

impl PredictedAssessment {
    pub fn sub_action_labels(&self) -> Vec<&str> {
        self.sub_actions.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn intervals(&self) -> Vec<TimeInterval> {
        self.sub_actions.iter().map(|s| s.interval).collect()
    }
}

/// Per-field extraction outcome; reward computation degrades each component
/// independently.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssessment {
    pub action_label: Result<String, ExtractError>,
    pub sub_actions: Result<Vec<PredictedSubAction>, ExtractError>,
    pub quality: Result<Option<f64>, ExtractError>,
    pub difficulty: Result<f64, ExtractError>,
    pub final_score: Result<f64, ExtractError>,
    pub unknown_labels: Vec<String>,
}

impl PartialAssessment {
    /// Collapses to a full assessment, reporting the first failing field in
    /// action, sub-actions, quality, difficulty, score order.
    pub fn complete(self) -> Result<PredictedAssessment, ExtractError> {
        Ok(PredictedAssessment {
            action_label: self.action_label?,
            sub_actions: self.sub_actions?,
            quality: self.quality?,
            difficulty: self.difficulty?,
            final_score: self.final_score?,
            unknown_labels: self.unknown_labels,
        })
    }
}

pub fn extract_assessment(
    doc: &SarDocument,
    schema: &ExtractionSchema,
) -> Result<PredictedAssessment, ExtractError> {
    extract_fields(&doc.answer, schema).complete()
}

/// Reads every field from raw answer-block text.
pub fn extract_fields(answer: &str, schema: &ExtractionSchema) -> PartialAssessment {
    let mut action = None;
    let mut sub_items: Option<Vec<&str>> = None;
    let mut quality = None;
    let mut difficulty = None;
    let mut score = None;
    let mut open: Option<Field> = None;

    let list_sep = schema.list_separator;
    for segment in answer.split([list_sep, '\n', '\r']) {
        let segment = segment.trim();
        if segment.is_empty() {
            continue;
        }
        let labelled = schema
            .labels()
            .into_iter()
            .find(|(_, label)| segment.starts_with(label));
        match labelled {
            Some((field, label)) => {
                let value = segment[label.len()..].trim();
                let slot = match field {
                    Field::Action => &mut action,
                    Field::Quality => &mut quality,
                    Field::Difficulty => &mut difficulty,
                    Field::Score => &mut score,
                    Field::SubActions => {
                        if sub_items.is_some() {
                            open = None;
                        } else {
                            let first = (!value.is_empty()).then_some(value);
                            sub_items = Some(first.into_iter().collect());
                            open = Some(Field::SubActions);
                        }
                        continue;
                    }
                };
                open = None;
                if slot.is_none() {
                    *slot = Some(value);
                }
            }
            None => {
                if open == Some(Field::SubActions) {
                    if let Some(items) = sub_items.as_mut() {
                        items.push(segment);
                    }
                }
            }
        }
    }

    let action_label = match action {
        None => Err(ExtractError::MissingField(Field::Action.name())),
        Some("") => Err(ExtractError::InvalidValue {
            field: Field::Action.name(),
            reason: "empty label".into(),
        }),
        Some(v) => Ok(v.to_string()),
    };

    let sub_actions = match sub_items {
        None => Ok(Vec::new()),
        Some(items) => items
            .into_iter()
            .map(|item| parse_sub_action(item, schema))
            .collect(),
    };

    let unknown_labels = match (&sub_actions, &schema.vocabulary) {
        (Ok(subs), Some(vocab)) => subs
            .iter()
            .filter(|s| !vocab.iter().any(|v| v == &s.label))
            .map(|s| s.label.clone())
            .collect(),
        _ => Vec::new(),
    };

    let quality = quality
        .map(|v| schema.parse_number(Field::Quality, v))
        .transpose();

    let difficulty = difficulty
        .ok_or(ExtractError::MissingField(Field::Difficulty.name()))
        .and_then(|v| schema.parse_number(Field::Difficulty, v))
        .and_then(|d| {
            if d > 0.0 {
                Ok(d)
            } else {
                Err(ExtractError::InvalidValue {
                    field: Field::Difficulty.name(),
                    reason: format!("difficulty must be positive, got {d}"),
                })
            }
        });

    let final_score = score
        .ok_or(ExtractError::MissingField(Field::Score.name()))
        .and_then(|v| schema.parse_number(Field::Score, v));

    PartialAssessment {
        action_label,
        sub_actions,
        quality,
        difficulty,
        final_score,
        unknown_labels,
    }
}

fn parse_sub_action(item: &str, schema: &ExtractionSchema) -> Result<PredictedSubAction, ExtractError> {
    let malformed = || ExtractError::MalformedInterval(item.to_string());
    let open = item.rfind('[').ok_or_else(malformed)?;
    let label = item[..open].trim();
    let body = item[open + 1..].trim_end().strip_suffix(')').ok_or_else(malformed)?;
    if label.is_empty() {
        return Err(malformed());
    }
    let mut bounds = body.split(schema.interval_separator);
    let (Some(a), Some(b), None) = (bounds.next(), bounds.next(), bounds.next()) else {
        return Err(malformed());
    };
    let start = schema.parse_number(Field::SubActions, a)?;
    let end = schema.parse_number(Field::SubActions, b)?;
    let interval = TimeInterval::new(start, end).map_err(|e| ExtractError::InvalidValue {
        field: Field::SubActions.name(),
        reason: e.to_string(),
    })?;
    Ok(PredictedSubAction {
        label: label.to_string(),
        interval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(answer: &str) -> PartialAssessment {
        extract_fields(answer, &ExtractionSchema::default())
    }

    #[test]
    fn reads_direct_fields() {
        let p = fields("Action: 5253B; Score: 72.0; Difficulty: 3.2")
            .complete()
            .unwrap();
        assert_eq!(p.action_label, "5253B");
        assert_eq!(p.final_score, 72.0);
        assert_eq!(p.difficulty, 3.2);
        assert_eq!(p.quality, None);
        assert!(p.sub_actions.is_empty());
    }

    #[test]
    fn missing_difficulty_is_reported() {
        let err = fields("Action: 5253B; Score: 72.0").complete().unwrap_err();
        assert_eq!(err, ExtractError::MissingField("difficulty"));
    }

    #[test]
    fn reads_sub_action_list_and_prose() {
        let p = fields(
            "The diver completed a back dive.\n\
             Action: 205B; Sub-actions: Back [0.5, 1.25); 2.5 Soms.Pike [1.25, 3); Entry [3, 3.75); \
             Quality: 24.5; Difficulty: 3; Score: 73.5",
        )
        .complete()
        .unwrap();
        assert_eq!(p.sub_action_labels(), vec!["Back", "2.5 Soms.Pike", "Entry"]);
        assert_eq!(p.sub_actions[1].interval, TimeInterval::new(1.25, 3.0).unwrap());
        assert_eq!(p.quality, Some(24.5));
    }

    #[test]
    fn bad_numbers_and_intervals() {
        let p = fields("Action: A; Difficulty: abc; Score: NaN; Quality: inf");
        assert_eq!(p.difficulty, Err(ExtractError::UnparsableNumber("difficulty")));
        assert_eq!(p.final_score, Err(ExtractError::UnparsableNumber("score")));
        assert_eq!(p.quality, Err(ExtractError::UnparsableNumber("quality")));

        let p = fields("Sub-actions: a [2, 1)");
        assert!(matches!(p.sub_actions, Err(ExtractError::InvalidValue { .. })));
        let p = fields("Sub-actions: a [1 2)");
        assert!(matches!(p.sub_actions, Err(ExtractError::MalformedInterval(_))));
        let p = fields("Sub-actions: [1, 2)");
        assert!(matches!(p.sub_actions, Err(ExtractError::MalformedInterval(_))));
        let p = fields("Difficulty: 0");
        assert!(matches!(p.difficulty, Err(ExtractError::InvalidValue { .. })));
    }

    #[test]
    fn first_occurrence_wins() {
        let p = fields("Action: A; Action: B; Sub-actions: x [0, 1); Sub-actions: y [1, 2); z [2, 3)");
        assert_eq!(p.action_label.unwrap(), "A");
        let subs = p.sub_actions.unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].label, "x");
    }

    #[test]
    fn vocabulary_flags_unknown_labels() {
        let schema = ExtractionSchema {
            vocabulary: Some(vec!["Back".into(), "Entry".into()]),
            ..Default::default()
        };
        let p = extract_fields("Sub-actions: Back [0, 1); Twist [1, 2); Entry [2, 3)", &schema);
        assert_eq!(p.unknown_labels, vec!["Twist".to_string()]);
    }

    #[test]
    fn comma_decimal_schema() {
        let schema = ExtractionSchema {
            decimal_separator: ',',
            interval_separator: '|',
            ..Default::default()
        };
        schema.validate().unwrap();
        let p = extract_fields(
            "Action: A; Sub-actions: x [0,5 | 1,25); Difficulty: 3,2; Score: 72,5",
            &schema,
        )
        .complete()
        .unwrap();
        assert_eq!(p.difficulty, 3.2);
        assert_eq!(p.sub_actions[0].interval, TimeInterval::new(0.5, 1.25).unwrap());
        assert_eq!(format_number(3.25, &schema), "3,25");
        assert!(extract_fields("Difficulty: 3.2", &schema).difficulty.is_err());
    }

    #[test]
    fn schema_from_toml() {
        let s = ExtractionSchema::from_toml_str("score_label = \"Final:\"\n").unwrap();
        assert_eq!(s.score_label, "Final:");
        assert_eq!(s.action_label, "Action:");
        assert!(ExtractionSchema::from_toml_str("list_separator = \".\"\n").is_err());
        assert!(ExtractionSchema::from_toml_str("score_label = \"Action:\"\n").is_err());
    }
}
