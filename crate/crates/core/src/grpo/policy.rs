//! Slot-factored categorical policy that renders SAR text through the QA
//! templates.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::annotations::{ActionInstance, AnswerDraft, Sport, TemplateSet};
use crate::rewards::ScoreNormalization;
use crate::sar::{serialize_sar, tag_layout, ExtractionSchema};

/// Logit vectors keyed by slot name.
pub type SlotTable = BTreeMap<String, Vec<f64>>;

/// One sampled value per slot, in sampling order.
pub type Choices = Vec<(String, usize)>;

/// Shared slot deciding the document layout.
pub const FORMAT_SLOT: &str = "shared:format";

// Boundary offsets and the format gate are shared by all instances;
// everything else is keyed by instance id.
const SHARED_PREFIX: &str = "shared:";
const INSTANCE_PREFIX: &str = "inst:";

fn is_instance_slot(slot: &str) -> bool {
    slot.starts_with(INSTANCE_PREFIX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatChoice {
    Canonical,
    /// Look and recognition blocks exchanged.
    Swapped,
    /// Answer block dropped.
    NoAnswer,
}

impl FormatChoice {
    pub const ALL: [FormatChoice; 3] = [FormatChoice::Canonical, FormatChoice::Swapped, FormatChoice::NoAnswer];
}

/// Discretisation of the continuous answer fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    /// Offsets in seconds added to each ground-truth boundary.
    pub offset_bins: Vec<f64>,
    pub quality_bins: usize,
    pub difficulty_bins: usize,
    /// Bin grids span these per-sport ranges.
    pub scales: ScoreNormalization,
}

impl Default for ActionSpace {
    fn default() -> Self {
        Self {
            offset_bins: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            quality_bins: 13,
            difficulty_bins: 11,
            scales: ScoreNormalization::default(),
        }
    }
}

impl ActionSpace {
    pub fn validate(&self) -> Result<(), GrpoError> {
        let bad = |m: String| Err(GrpoError::InvalidConfig(m));
        if self.offset_bins.is_empty() || self.offset_bins.iter().any(|b| !b.is_finite()) {
            return bad("offset_bins must be non-empty and finite".into());
        }
        if self.quality_bins < 2 || self.difficulty_bins < 2 {
            return bad("quality_bins and difficulty_bins must be >= 2".into());
        }
        for sport in Sport::ALL {
            let s = self.scales.scale(sport);
            if !(s.quality[1] > s.quality[0] && s.difficulty[1] > s.difficulty[0] && s.difficulty[0] > 0.0) {
                return bad(format!("{sport} bin ranges must be increasing with positive difficulty"));
            }
        }
        Ok(())
    }
}

fn grid(range: [f64; 2], n: usize, k: usize) -> f64 {
    range[0] + (range[1] - range[0]) * k as f64 / (n - 1) as f64
}

/// Probabilities of `logits / temperature`.
pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// `KL(softmax(p) || softmax(q))`.
pub fn kl_divergence(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum::<f64>().max(0.0)
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left `u` above the cumulative sum; take the last non-zero bin.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub space: ActionSpace,
    pub action_vocab: BTreeMap<Sport, Vec<String>>,
    pub sub_action_vocab: BTreeMap<Sport, Vec<String>>,
    pub logits: SlotTable,
}

impl ToyPolicy {
    /// Uniform policy over vocabularies collected from `dataset`.
    pub fn uniform(dataset: &[ActionInstance], space: ActionSpace) -> Result<Self, GrpoError> {
        space.validate()?;
        if dataset.is_empty() {
            return Err(GrpoError::EmptyDataset);
        }
        let mut actions: BTreeMap<Sport, BTreeSet<String>> = BTreeMap::new();
        let mut subs: BTreeMap<Sport, BTreeSet<String>> = BTreeMap::new();
        for inst in dataset {
            actions.entry(inst.sport).or_default().insert(inst.action_label.clone());
            let entry = subs.entry(inst.sport).or_default();
            entry.extend(inst.sub_actions.iter().map(|s| s.label.clone()));
        }
        let collect = |m: BTreeMap<Sport, BTreeSet<String>>| {
            m.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
        };
        let mut policy = Self {
            space,
            action_vocab: collect(actions),
            sub_action_vocab: collect(subs),
            logits: SlotTable::new(),
        };
        for inst in dataset {
            for (slot, size) in policy.slot_layout(inst) {
                if !is_instance_slot(&slot) {
                    policy.logits.entry(slot).or_insert_with(|| vec![0.0; size]);
                } else if policy.logits.insert(slot, vec![0.0; size]).is_some() {
                    return Err(GrpoError::InvalidConfig(format!(
                        "duplicate instance id `{}`",
                        inst.instance_id
                    )));
                }
            }
        }
        Ok(policy)
    }

    /// Slot names and sizes for one instance, in sampling order.
    pub fn slot_layout(&self, inst: &ActionInstance) -> Vec<(String, usize)> {
        let id = format!("{INSTANCE_PREFIX}{}", inst.instance_id);
        let n_actions = self.action_vocab.get(&inst.sport).map_or(0, Vec::len);
        let n_subs = self.sub_action_vocab.get(&inst.sport).map_or(0, Vec::len);
        let n_off = self.space.offset_bins.len();
        let mut out = vec![
            (FORMAT_SLOT.to_string(), FormatChoice::ALL.len()),
            (format!("{id}/action"), n_actions),
        ];
        for i in 0..inst.sub_actions.len() {
            out.push((format!("{id}/sub{i}/label"), n_subs));
            out.push((format!("{SHARED_PREFIX}phase{i}/start"), n_off));
            out.push((format!("{SHARED_PREFIX}phase{i}/end"), n_off));
        }
        out.push((format!("{id}/quality"), self.space.quality_bins));
        out.push((format!("{id}/difficulty"), self.space.difficulty_bins));
        out
    }

    fn slot_logits(&self, slot: &str) -> Result<&[f64], GrpoError> {
        self.logits
            .get(slot)
            .map(Vec::as_slice)
            .ok_or_else(|| GrpoError::UnknownSlot(slot.to_string()))
    }

    pub fn sample_choices(
        &self,
        inst: &ActionInstance,
        temperature: f64,
        rng: &mut impl Rng,
    ) -> Result<Choices, GrpoError> {
        self.slot_layout(inst)
            .into_iter()
            .map(|(slot, _)| {
                let k = sample_index(&softmax(self.slot_logits(&slot)?, temperature), rng);
                Ok((slot, k))
            })
            .collect()
    }

    /// Highest-logit value per slot, lowest index on ties.
    pub fn argmax_choices(&self, inst: &ActionInstance) -> Result<Choices, GrpoError> {
        self.slot_layout(inst)
            .into_iter()
            .map(|(slot, _)| {
                let z = self.slot_logits(&slot)?;
                let k = (0..z.len()).fold(0, |best, j| if z[j] > z[best] { j } else { best });
                Ok((slot, k))
            })
            .collect()
    }

    /// Maps slot choices to a layout and answer content.
    pub fn decode(&self, inst: &ActionInstance, choices: &Choices) -> (FormatChoice, AnswerDraft) {
        let pick: BTreeMap<&str, usize> = choices.iter().map(|(s, k)| (s.as_str(), *k)).collect();
        let id = format!("{INSTANCE_PREFIX}{}", inst.instance_id);
        let get = |name: String| pick.get(name.as_str()).copied().unwrap_or(0);
        let scale = self.space.scales.scale(inst.sport);
        let vocab = |m: &BTreeMap<Sport, Vec<String>>, k: usize| {
            m.get(&inst.sport).and_then(|v| v.get(k)).cloned().unwrap_or_default()
        };
        let offset = |k: usize| self.space.offset_bins[k.min(self.space.offset_bins.len() - 1)];

        let sub_actions = inst
            .sub_actions
            .iter()
            .enumerate()
            .map(|(i, gt)| {
                let label = vocab(&self.sub_action_vocab, get(format!("{id}/sub{i}/label")));
                let start = (gt.interval.start() + offset(get(format!("{SHARED_PREFIX}phase{i}/start")))).max(0.0);
                let end = gt.interval.end() + offset(get(format!("{SHARED_PREFIX}phase{i}/end")));
                (label, start, end)
            })
            .collect();
        let quality = grid(scale.quality, self.space.quality_bins, get(format!("{id}/quality")));
        let difficulty = grid(scale.difficulty, self.space.difficulty_bins, get(format!("{id}/difficulty")));
        let final_score = match inst.sport {
            Sport::Diving => quality * difficulty,
            _ => quality + (inst.final_score - inst.quality),
        };
        let format = FormatChoice::ALL[pick.get(FORMAT_SLOT).copied().unwrap_or(0).min(2)];
        let draft = AnswerDraft {
            sport: inst.sport,
            action_label: vocab(&self.action_vocab, get(format!("{id}/action"))),
            sub_actions,
            quality,
            difficulty,
            final_score,
        };
        (format, draft)
    }

    /// Renders sampled choices to SAR text. Template variants consume `rng`.
    pub fn render(
        &self,
        inst: &ActionInstance,
        choices: &Choices,
        templates: &TemplateSet,
        schema: &ExtractionSchema,
        rng: &mut impl Rng,
    ) -> Result<String, GrpoError> {
        let (format, draft) = self.decode(inst, choices);
        let doc = templates
            .render(&draft, schema, rng)
            .map_err(|e| GrpoError::Render(e.to_string()))?;
        let text = serialize_sar(&doc).map_err(|e| GrpoError::Render(e.to_string()))?;
        Ok(apply_format(&text, format))
    }
}

fn apply_format(text: &str, format: FormatChoice) -> String {
    let spans = tag_layout(text).expect("serialised documents have canonical layout");
    match format {
        FormatChoice::Canonical => text.to_string(),
        FormatChoice::Swapped => {
            let look = &text[spans[0].open..spans[0].close_end];
            let recognition = &text[spans[1].open..spans[1].close_end];
            format!("{recognition}\n{look}{}", &text[spans[1].close_end..])
        }
        FormatChoice::NoAnswer => text[..spans[3].open].trim_end().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::fixtures::dive;
    use crate::rewards::reward_format;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1.0, -2.0, 700.0, 3.5], 1.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert_eq!(softmax(&[0.0, 0.0], 1.0), vec![0.5, 0.5]);
    }

    #[test]
    fn kl_properties() {
        assert_eq!(kl_divergence(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!(kl_divergence(&[3.0, 0.0], &[0.0, 0.0]) > 0.0);
        // Shift invariance of logits.
        let a = kl_divergence(&[1.0, 0.5, -1.0], &[0.0, 0.0, 0.0]);
        let b = kl_divergence(&[11.0, 10.5, 9.0], &[4.0, 4.0, 4.0]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn layout_and_uniform_init() {
        let inst = dive();
        let p = ToyPolicy::uniform(std::slice::from_ref(&inst), ActionSpace::default()).unwrap();
        let layout = p.slot_layout(&inst);
        assert_eq!(layout.len(), 2 + 3 * 4 + 2);
        assert_eq!(p.logits.len(), layout.len());
        assert!(p.logits.values().all(|v| v.iter().all(|&z| z == 0.0)));
        assert!(ToyPolicy::uniform(&[inst.clone(), inst], ActionSpace::default()).is_err());
        assert!(matches!(ToyPolicy::uniform(&[], ActionSpace::default()), Err(GrpoError::EmptyDataset)));
    }

    fn canonical_choices(p: &ToyPolicy, inst: &ActionInstance) -> Choices {
        let subs = &p.sub_action_vocab[&inst.sport];
        let zero = p.space.offset_bins.iter().position(|&b| b == 0.0).unwrap();
        p.slot_layout(inst)
            .into_iter()
            .map(|(slot, _)| {
                let k = if slot.ends_with("/start") || slot.ends_with("/end") {
                    zero
                } else if let Some(rest) = slot.strip_suffix("/label") {
                    let i: usize = rest.rsplit("sub").next().unwrap().parse().unwrap();
                    subs.iter().position(|s| *s == inst.sub_actions[i].label).unwrap()
                } else {
                    0
                };
                (slot, k)
            })
            .collect()
    }

    #[test]
    fn decode_reproduces_ground_truth_geometry() {
        let inst = dive();
        let p = ToyPolicy::uniform(std::slice::from_ref(&inst), ActionSpace::default()).unwrap();
        let (format, draft) = p.decode(&inst, &canonical_choices(&p, &inst));
        assert_eq!(format, FormatChoice::Canonical);
        assert_eq!(draft.action_label, inst.action_label);
        let gt = AnswerDraft::from_instance(&inst);
        assert_eq!(draft.sub_actions, gt.sub_actions);
        assert_eq!(draft.quality, 0.0);
        assert_eq!(draft.difficulty, 1.2);
    }

    #[test]
    fn layouts_change_only_format() {
        let inst = dive();
        let p = ToyPolicy::uniform(std::slice::from_ref(&inst), ActionSpace::default()).unwrap();
        let mut choices = canonical_choices(&p, &inst);
        let templates = TemplateSet::builtin();
        let schema = ExtractionSchema::default();
        let mut texts = Vec::new();
        for k in 0..3 {
            choices[0].1 = k;
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            texts.push(p.render(&inst, &choices, &templates, &schema, &mut rng).unwrap());
        }
        assert_eq!(reward_format(&texts[0]), 1.0);
        assert_eq!(reward_format(&texts[1]), 0.0);
        assert_eq!(reward_format(&texts[2]), 0.0);
        assert!(texts[1].starts_with("<recognition>"));
        assert_eq!(texts[0].len(), texts[1].len());
        assert!(!texts[2].contains("<answer>"));
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let inst = dive();
        let p = ToyPolicy::uniform(std::slice::from_ref(&inst), ActionSpace::default()).unwrap();
        let a = p.sample_choices(&inst, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = p.sample_choices(&inst, 1.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        for (slot, k) in &a {
            assert!(*k < p.logits[slot].len());
        }
    }
}
