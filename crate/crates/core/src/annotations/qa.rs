//! SAR-style question/answer generation from annotations.
//!
//! Explanatory prose comes from fixed template variants picked by a seeded
//! generator; the answer block always ends with the machine-readable field
//! line so that extraction inverts generation exactly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{phase_groups, ActionInstance, Sport};
use crate::sar::{
    format_number, serialize_sar, ExtractionSchema, InvariantViolation, RecognitionStep,
    SarDocument,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    #[serde(rename = "source")]
    pub source_instance: String,
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error("no templates for sport `{0}`")]
    MissingTemplate(Sport),
    #[error("template set for `{sport}` has no `{list}` variants")]
    EmptyTemplateList { sport: Sport, list: &'static str },
    #[error("rendered document is malformed: {0}")]
    Render(#[from] InvariantViolation),
}

/// Template variants for one sport.
///
/// Placeholders: `{labels}`, `{start}`, `{end}`, `{phase}` in observations
/// and conclusions; `{quality}`, `{difficulty}`, `{score}` in assessments;
/// `{action}` in summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SportTemplates {
    pub questions: Vec<String>,
    pub looks: Vec<String>,
    pub observations: Vec<String>,
    pub conclusions: Vec<String>,
    pub assessments: Vec<String>,
    pub summaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub sports: BTreeMap<Sport, SportTemplates>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let diving = SportTemplates {
            questions: strings(&[
                "Watch the dive and give a stepwise assessment with the dive code, sub-actions and score.",
                "Analyse this dive phase by phase and report its code, difficulty and final score.",
            ]),
            looks: strings(&[
                "A single diver performs from the board; the full dive from take-off to water entry is visible.",
                "One athlete is in frame on the diving board, with the pool below and no other active performers.",
            ]),
            observations: strings(&[
                "{labels} between {start}s and {end}s",
                "the diver shows {labels} from {start}s to {end}s",
            ]),
            conclusions: strings(&[
                "the {phase} phase is identified as {labels}",
                "{labels} completes the {phase} phase",
            ]),
            assessments: strings(&[
                "Judges' execution total is {quality}. With a difficulty coefficient of {difficulty}, the final score is {score}.",
                "Execution merits {quality} points; multiplied by the difficulty of {difficulty} this gives {score}.",
            ]),
            summaries: strings(&[
                "The dive is recognised as {action}.",
                "Overall the performance corresponds to dive {action}.",
            ]),
        };
        let skating = SportTemplates {
            questions: strings(&[
                "Watch the program and list its elements in order, then give the technical and final scores.",
            ]),
            looks: strings(&[
                "A single skater performs on the ice; the program is shown from the opening pose to the end.",
                "One skater is on the rink performing a competitive program.",
            ]),
            observations: strings(&[
                "{labels} from {start}s to {end}s",
                "the skater executes {labels} between {start}s and {end}s",
            ]),
            conclusions: strings(&[
                "{phase} is {labels}",
                "the element in {phase} is recognised as {labels}",
            ]),
            assessments: strings(&[
                "The technical elements are worth {quality} at a difficulty factor of {difficulty}; the program totals {score}.",
                "Element execution totals {quality} (factor {difficulty}) and the overall score is {score}.",
            ]),
            summaries: strings(&["The program is a {action}.", "This performance is a {action}."]),
        };
        let swimming = SportTemplates {
            questions: strings(&[
                "Watch the routine and identify its elements in order, then score the performance.",
            ]),
            looks: strings(&[
                "A team routine is performed in the pool; swimmers are visible above and below the surface.",
                "The routine is filmed from the deck with the whole team in view.",
            ]),
            observations: strings(&[
                "{labels} from {start}s to {end}s",
                "the team performs {labels} between {start}s and {end}s",
            ]),
            conclusions: strings(&[
                "{phase} is a {labels}",
                "the element in {phase} is recognised as {labels}",
            ]),
            assessments: strings(&[
                "Element execution is worth {quality} at a difficulty factor of {difficulty}; the routine scores {score}.",
            ]),
            summaries: strings(&["The routine is a {action}."]),
        };
        Self {
            sports: BTreeMap::from([
                (Sport::Diving, diving),
                (Sport::FigureSkating, skating),
                (Sport::ArtisticSwimming, swimming),
            ]),
        }
    }

    fn for_sport(&self, sport: Sport) -> Result<&SportTemplates, QaError> {
        let t = self.sports.get(&sport).ok_or(QaError::MissingTemplate(sport))?;
        let lists: [(&'static str, &Vec<String>); 6] = [
            ("questions", &t.questions),
            ("looks", &t.looks),
            ("observations", &t.observations),
            ("conclusions", &t.conclusions),
            ("assessments", &t.assessments),
            ("summaries", &t.summaries),
        ];
        if let Some((list, _)) = lists.iter().find(|(_, l)| l.is_empty()) {
            return Err(QaError::EmptyTemplateList { sport, list });
        }
        Ok(t)
    }

    /// Renders a draft into a SAR document. Variant choice consumes `rng`.
    pub fn render(
        &self,
        draft: &AnswerDraft,
        schema: &ExtractionSchema,
        rng: &mut impl rand::Rng,
    ) -> Result<SarDocument, QaError> {
        let t = self.for_sport(draft.sport)?;
        let num = |x: f64| format_number(x, schema);
        let mut pick = |list: &[String]| list.choose(rng).cloned().unwrap_or_default();

        let look = pick(&t.looks);
        let mut recognition = Vec::new();
        for group in phase_groups(draft.sport, draft.sub_actions.len()) {
            let members = &draft.sub_actions[group.members.clone()];
            let labels = members
                .iter()
                .map(|s| s.0.as_str())
                .collect::<Vec<_>>()
                .join(" then ");
            let start = members.first().map(|s| s.1).unwrap_or_default();
            let end = members.last().map(|s| s.2).unwrap_or_default();
            let fill = |tpl: String| {
                tpl.replace("{labels}", &labels)
                    .replace("{start}", &num(start))
                    .replace("{end}", &num(end))
                    .replace("{phase}", &group.name.to_lowercase())
            };
            recognition.push(RecognitionStep {
                observation: fill(pick(&t.observations)),
                conclusion: fill(pick(&t.conclusions)),
                phase: group.name,
            });
        }
        if recognition.is_empty() {
            recognition.push(RecognitionStep::new(
                "Overview",
                "no distinct sub-actions are visible",
                "the action is treated as a single segment",
            ));
        }
        let assessment = pick(&t.assessments)
            .replace("{quality}", &num(draft.quality))
            .replace("{difficulty}", &num(draft.difficulty))
            .replace("{score}", &num(draft.final_score));
        let summary = pick(&t.summaries).replace("{action}", &draft.action_label);

        let doc = SarDocument {
            look,
            recognition,
            assessment,
            answer: format!("{summary}\n{}", draft.field_line(schema)),
        };
        doc.validate()?;
        Ok(doc)
    }
}

/// Content for one rendered answer. Sub-actions are `(label, start, end)`
/// and are rendered verbatim even when malformed.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerDraft {
    pub sport: Sport,
    pub action_label: String,
    pub sub_actions: Vec<(String, f64, f64)>,
    pub quality: f64,
    pub difficulty: f64,
    pub final_score: f64,
}

impl AnswerDraft {
    pub fn from_instance(inst: &ActionInstance) -> Self {
        Self {
            sport: inst.sport,
            action_label: inst.action_label.clone(),
            sub_actions: inst
                .sub_actions
                .iter()
                .map(|s| (s.label.clone(), s.interval.start(), s.interval.end()))
                .collect(),
            quality: inst.quality,
            difficulty: inst.difficulty,
            final_score: inst.final_score,
        }
    }

    /// The machine-readable answer line, e.g.
    /// `Action: 107B; Sub-actions: Forward [0.5, 1); …; Quality: 24; Difficulty: 3; Score: 72`.
    pub fn field_line(&self, schema: &ExtractionSchema) -> String {
        let sep = format!("{} ", schema.list_separator);
        let mut parts = vec![format!("{} {}", schema.action_label, self.action_label)];
        if !self.sub_actions.is_empty() {
            let items: Vec<String> = self
                .sub_actions
                .iter()
                .map(|(label, start, end)| {
                    format!(
                        "{label} [{}{} {})",
                        format_number(*start, schema),
                        schema.interval_separator,
                        format_number(*end, schema)
                    )
                })
                .collect();
            parts.push(format!("{} {}", schema.sub_actions_label, items.join(&sep)));
        }
        parts.push(format!("{} {}", schema.quality_label, format_number(self.quality, schema)));
        parts.push(format!(
            "{} {}",
            schema.difficulty_label,
            format_number(self.difficulty, schema)
        ));
        parts.push(format!("{} {}", schema.score_label, format_number(self.final_score, schema)));
        parts.join(&sep)
    }
}

// FNV-1a, stable across platforms and releases.
pub(crate) fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn generate_qa(inst: &ActionInstance, templates: &TemplateSet, seed: u64) -> Result<QaPair, QaError> {
    generate_qa_with_schema(inst, templates, &ExtractionSchema::default(), seed)
}

/// Builds the QA pair for one instance. Output depends only on the
/// instance, templates, schema and seed.
pub fn generate_qa_with_schema(
    inst: &ActionInstance,
    templates: &TemplateSet,
    schema: &ExtractionSchema,
    seed: u64,
) -> Result<QaPair, QaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_hash(&inst.instance_id));
    let doc = templates.render(&AnswerDraft::from_instance(inst), schema, &mut rng)?;
    let question = if inst.prompt.trim().is_empty() {
        templates.for_sport(inst.sport)?.questions.choose(&mut rng).cloned().unwrap_or_default()
    } else {
        inst.prompt.clone()
    };
    Ok(QaPair {
        question,
        answer: serialize_sar(&doc)?,
        source_instance: inst.instance_id.clone(),
    })
}

pub fn qa_to_jsonl(pairs: &[QaPair]) -> String {
    pairs
        .iter()
        .map(|p| serde_json::to_string(p).expect("QaPair serialization cannot fail") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::fixtures::dive;
    use crate::sar::{extract_assessment, parse_sar};

    #[test]
    fn diving_answer_has_three_recognition_steps() {
        let qa = generate_qa(&dive(), &TemplateSet::builtin(), 3).unwrap();
        let doc = parse_sar(&qa.answer).unwrap();
        assert_eq!(doc.recognition.len(), 3);
        assert_eq!(doc.recognition[0].phase, "Take-off");
        assert!(doc.recognition[1].observation.contains("2.5 Soms.Pike then 1.5 Twists"));
    }

    #[test]
    fn generation_is_deterministic() {
        let t = TemplateSet::builtin();
        assert_eq!(generate_qa(&dive(), &t, 11).unwrap(), generate_qa(&dive(), &t, 11).unwrap());
    }

    #[test]
    fn extraction_inverts_generation() {
        let inst = dive();
        let qa = generate_qa(&inst, &TemplateSet::builtin(), 5).unwrap();
        let pred = extract_assessment(&parse_sar(&qa.answer).unwrap(), &ExtractionSchema::default()).unwrap();
        assert_eq!(pred.action_label, inst.action_label);
        assert_eq!(pred.sub_action_labels(), inst.sub_action_labels());
        assert_eq!(pred.intervals(), inst.intervals());
        assert_eq!(pred.quality, Some(inst.quality));
        assert_eq!(pred.difficulty, inst.difficulty);
        assert_eq!(pred.final_score, inst.final_score);
    }

    #[test]
    fn assessment_embeds_scores() {
        let inst = dive();
        let qa = generate_qa(&inst, &TemplateSet::builtin(), 0).unwrap();
        let doc = parse_sar(&qa.answer).unwrap();
        for value in [inst.quality, inst.difficulty, inst.final_score] {
            assert!(doc.assessment.contains(&value.to_string()), "{}", doc.assessment);
        }
    }

    #[test]
    fn missing_sport_template() {
        let mut t = TemplateSet::builtin();
        t.sports.remove(&Sport::Diving);
        assert!(matches!(
            generate_qa(&dive(), &t, 0),
            Err(QaError::MissingTemplate(Sport::Diving))
        ));
    }

    #[test]
    fn qa_jsonl_uses_source_key() {
        let qa = generate_qa(&dive(), &TemplateSet::builtin(), 0).unwrap();
        let line = qa_to_jsonl(&[qa]);
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(v["source"], "dive-1");
        assert!(v.get("question").is_some() && v.get("answer").is_some());
    }
}
