//! Stepwise action reasoning (SAR) output format.
//!
//! A document is four tagged blocks in fixed order:
//!
//! ```text
//! <look>…</look>
//! <recognition>Phase: …, Observation: …, Conclusion: …</recognition>
//! <assessment>…</assessment>
//! <answer>…</answer>
//! ```
//!
//! Tags are case-sensitive and each must appear exactly once. Text outside
//! the four blocks is ignored.

mod extract;

pub use extract::{
    extract_assessment, extract_fields, format_number, ExtractError, ExtractionSchema, Field,
    PartialAssessment, PredictedAssessment, PredictedSubAction, SchemaError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PHASE_MARKER: &str = "Phase:";
pub const OBSERVATION_MARKER: &str = "Observation:";
pub const CONCLUSION_MARKER: &str = "Conclusion:";

/// The four reasoning stages, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Look,
    Recognition,
    Assessment,
    Answer,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Look, Stage::Recognition, Stage::Assessment, Stage::Answer];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Look => "look",
            Stage::Recognition => "recognition",
            Stage::Assessment => "assessment",
            Stage::Answer => "answer",
        }
    }

    pub fn open_tag(self) -> &'static str {
        match self {
            Stage::Look => "<look>",
            Stage::Recognition => "<recognition>",
            Stage::Assessment => "<assessment>",
            Stage::Answer => "<answer>",
        }
    }

    pub fn close_tag(self) -> &'static str {
        match self {
            Stage::Look => "</look>",
            Stage::Recognition => "</recognition>",
            Stage::Assessment => "</assessment>",
            Stage::Answer => "</answer>",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecognitionStep {
    pub phase: String,
    pub observation: String,
    pub conclusion: String,
}

impl RecognitionStep {
    pub fn new(
        phase: impl Into<String>,
        observation: impl Into<String>,
        conclusion: impl Into<String>,
    ) -> Self {
        Self {
            phase: phase.into(),
            observation: observation.into(),
            conclusion: conclusion.into(),
        }
    }
}

/// A parsed four-stage document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarDocument {
    pub look: String,
    pub recognition: Vec<RecognitionStep>,
    pub assessment: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing <{0}> tag")]
    MissingTag(&'static str),
    #[error("<{0}> is not closed")]
    UnclosedTag(&'static str),
    #[error("<{0}> appears more than once")]
    DuplicateTag(&'static str),
    #[error("tag blocks are not in look, recognition, assessment, answer order")]
    TagsOutOfOrder,
    #[error("recognition block has no steps")]
    EmptyRecognition,
    #[error("recognition block has text before the first `Phase:` marker")]
    TextBeforeFirstPhase,
    #[error("recognition step {index}: {reason}")]
    MalformedStep { index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("document invariant violated: {0}")]
pub struct InvariantViolation(pub String);

/// Byte span of one stage's content (between its open and close tags).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpan {
    pub open: usize,
    pub content_start: usize,
    pub content_end: usize,
    pub close_end: usize,
}

/// Locates all eight tags and checks they are balanced, unique and in
/// canonical order. Returns the span of each block in stage order.
pub fn tag_layout(text: &str) -> Result<[BlockSpan; 4], ParseError> {
    let mut spans = [BlockSpan {
        open: 0,
        content_start: 0,
        content_end: 0,
        close_end: 0,
    }; 4];
    for (slot, stage) in spans.iter_mut().zip(Stage::ALL) {
        *slot = locate_block(text, stage)?;
    }
    for pair in spans.windows(2) {
        if pair[0].close_end > pair[1].open {
            return Err(ParseError::TagsOutOfOrder);
        }
    }
    Ok(spans)
}

/// Finds the single balanced block for one stage, ignoring all other tags.
pub fn locate_block(text: &str, stage: Stage) -> Result<BlockSpan, ParseError> {
    let open_tag = stage.open_tag();
    let close_tag = stage.close_tag();
    let opens: Vec<usize> = text.match_indices(open_tag).map(|(i, _)| i).collect();
    let closes: Vec<usize> = text.match_indices(close_tag).map(|(i, _)| i).collect();
    match (opens.as_slice(), closes.as_slice()) {
        ([], _) => Err(ParseError::MissingTag(stage.name())),
        ([_, _, ..], _) | (_, [_, _, ..]) => Err(ParseError::DuplicateTag(stage.name())),
        ([_], []) => Err(ParseError::UnclosedTag(stage.name())),
        ([open], [close]) => {
            let content_start = open + open_tag.len();
            if *close < content_start {
                return Err(ParseError::UnclosedTag(stage.name()));
            }
            Ok(BlockSpan {
                open: *open,
                content_start,
                content_end: *close,
                close_end: close + close_tag.len(),
            })
        }
    }
}

/// Trimmed content of a single stage's block, located independently of the
/// other stages.
pub fn block_content(text: &str, stage: Stage) -> Result<&str, ParseError> {
    let span = locate_block(text, stage)?;
    Ok(text[span.content_start..span.content_end].trim())
}

pub fn parse_sar(text: &str) -> Result<SarDocument, ParseError> {
    let spans = tag_layout(text)?;
    let content = |i: usize| text[spans[i].content_start..spans[i].content_end].trim();
    Ok(SarDocument {
        look: content(0).to_string(),
        recognition: parse_recognition(content(1))?,
        assessment: content(2).to_string(),
        answer: content(3).to_string(),
    })
}

fn parse_recognition(content: &str) -> Result<Vec<RecognitionStep>, ParseError> {
    if content.is_empty() {
        return Err(ParseError::EmptyRecognition);
    }
    if !content.starts_with(PHASE_MARKER) {
        return Err(ParseError::TextBeforeFirstPhase);
    }
    let starts: Vec<usize> = content.match_indices(PHASE_MARKER).map(|(i, _)| i).collect();
    let mut steps = Vec::with_capacity(starts.len());
    for (index, &start) in starts.iter().enumerate() {
        let end = starts.get(index + 1).copied().unwrap_or(content.len());
        let chunk = &content[start + PHASE_MARKER.len()..end];
        steps.push(parse_step(index, chunk)?);
    }
    Ok(steps)
}

fn parse_step(index: usize, chunk: &str) -> Result<RecognitionStep, ParseError> {
    let malformed = |reason: &str| ParseError::MalformedStep {
        index,
        reason: reason.to_string(),
    };
    let obs = chunk
        .find(OBSERVATION_MARKER)
        .ok_or_else(|| malformed("missing `Observation:` marker"))?;
    let after_obs = obs + OBSERVATION_MARKER.len();
    let concl = chunk[after_obs..]
        .find(CONCLUSION_MARKER)
        .map(|i| i + after_obs)
        .ok_or_else(|| malformed("missing `Conclusion:` marker"))?;

    let phase = step_field(&chunk[..obs]);
    if phase.is_empty() {
        return Err(malformed("empty phase"));
    }
    Ok(RecognitionStep {
        phase: phase.to_string(),
        observation: step_field(&chunk[after_obs..concl]).to_string(),
        conclusion: chunk[concl + CONCLUSION_MARKER.len()..].trim().to_string(),
    })
}

// Strips the ", " that separates a field from the next marker.
fn step_field(raw: &str) -> &str {
    let t = raw.trim();
    t.strip_suffix(',').unwrap_or(t).trim_end()
}

const ALL_TAGS: [&str; 8] = [
    "<look>",
    "</look>",
    "<recognition>",
    "</recognition>",
    "<assessment>",
    "</assessment>",
    "<answer>",
    "</answer>",
];

fn check_text(what: &str, text: &str, markers: bool) -> Result<(), InvariantViolation> {
    if text.trim() != text {
        return Err(InvariantViolation(format!(
            "{what} has leading or trailing whitespace"
        )));
    }
    if let Some(tag) = ALL_TAGS.iter().find(|t| text.contains(*t)) {
        return Err(InvariantViolation(format!("{what} contains the tag {tag}")));
    }
    if markers {
        for marker in [PHASE_MARKER, OBSERVATION_MARKER, CONCLUSION_MARKER] {
            if text.contains(marker) {
                return Err(InvariantViolation(format!(
                    "{what} contains the field marker `{marker}`"
                )));
            }
        }
    }
    Ok(())
}

impl SarDocument {
    /// Checks the conditions under which serialization round-trips.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        check_text("look", &self.look, false)?;
        check_text("assessment", &self.assessment, false)?;
        check_text("answer", &self.answer, false)?;
        if self.recognition.is_empty() {
            return Err(InvariantViolation("recognition has no steps".into()));
        }
        for (i, step) in self.recognition.iter().enumerate() {
            if step.phase.is_empty() {
                return Err(InvariantViolation(format!("step {i} has an empty phase")));
            }
            check_text(&format!("step {i} phase"), &step.phase, true)?;
            check_text(&format!("step {i} observation"), &step.observation, true)?;
            check_text(&format!("step {i} conclusion"), &step.conclusion, true)?;
        }
        Ok(())
    }
}

/// Renders the canonical text form. `parse_sar` inverts this exactly.
pub fn serialize_sar(doc: &SarDocument) -> Result<String, InvariantViolation> {
    doc.validate()?;
    let steps: Vec<String> = doc
        .recognition
        .iter()
        .map(|s| {
            format!(
                "{PHASE_MARKER} {}, {OBSERVATION_MARKER} {}, {CONCLUSION_MARKER} {}",
                s.phase, s.observation, s.conclusion
            )
        })
        .collect();
    Ok(format!(
        "<look>{}</look>\n<recognition>{}</recognition>\n<assessment>{}</assessment>\n<answer>{}</answer>",
        doc.look,
        steps.join("\n"),
        doc.assessment,
        doc.answer
    ))
}
