//! Seeded synthetic corpus generator.
//!
//! Diving instances are take-off, one or two flight sub-actions and entry,
//! with `final_score = quality * difficulty`. Skating and swimming instances
//! are element sequences whose final score is stored directly as quality
//! plus a program component.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ActionInstance, Sport, SubActionAnnotation};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("cannot parse synthetic config: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SportProfile {
    pub prompt: String,
    pub action_labels: Vec<String>,
    /// Flight vocabulary for diving, element vocabulary otherwise.
    pub sub_action_labels: Vec<String>,
    #[serde(default)]
    pub takeoff_labels: Vec<String>,
    #[serde(default)]
    pub entry_labels: Vec<String>,
    pub quality_range: [f64; 2],
    /// Quality is quantised to multiples of this step.
    pub quality_step: f64,
    /// Added to quality to form the final score (non-diving sports).
    #[serde(default)]
    pub component_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_instances: usize,
    /// Sports assigned round-robin by instance index.
    pub sports: Vec<Sport>,
    /// Element count range for non-diving sports (inclusive).
    pub element_count: [usize; 2],
    /// Sub-action duration range in seconds.
    pub segment_duration: [f64; 2],
    /// Maximum idle time before and between sub-actions, in seconds.
    pub max_gap: f64,
    /// Diving difficulty range; values are multiples of 0.1.
    pub difficulty_range: [f64; 2],
    pub diving: SportProfile,
    pub figure_skating: SportProfile,
    pub artistic_swimming: SportProfile,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_instances: 10,
            sports: vec![Sport::Diving],
            element_count: [4, 7],
            segment_duration: [0.5, 2.5],
            max_gap: 0.5,
            difficulty_range: [1.6, 3.8],
            diving: SportProfile {
                prompt: "Analyse this dive step by step and give its code, sub-actions, difficulty and score.".into(),
                action_labels: strings(&["107B", "205B", "305C", "405B", "5253B", "5154B", "626C", "6243D"]),
                sub_action_labels: strings(&[
                    "1.5 Soms.Pike",
                    "2.5 Soms.Pike",
                    "3.5 Soms.Tuck",
                    "0.5 Twist",
                    "1.5 Twists",
                    "2 Twists",
                ]),
                takeoff_labels: strings(&["Forward", "Back", "Reverse", "Inward", "Arm Stand"]),
                entry_labels: strings(&["Entry"]),
                quality_range: [15.0, 28.5],
                quality_step: 0.5,
                component_range: [0.0, 0.0],
            },
            figure_skating: SportProfile {
                prompt: "Analyse this skating program element by element and give its scores.".into(),
                action_labels: strings(&["Short Program", "Free Skate"]),
                sub_action_labels: strings(&["3Lz", "3F", "3A", "4T", "2A", "CCoSp4", "FCSp4", "LSp4", "StSq3", "ChSq1"]),
                takeoff_labels: vec![],
                entry_labels: vec![],
                quality_range: [20.0, 110.0],
                quality_step: 0.01,
                component_range: [20.0, 95.0],
            },
            artistic_swimming: SportProfile {
                prompt: "Analyse this routine element by element and give its score.".into(),
                action_labels: strings(&["Technical Routine", "Free Routine"]),
                sub_action_labels: strings(&["Hybrid", "Acrobatic", "Boost", "Thrust", "Twirl", "Rocket Split"]),
                takeoff_labels: vec![],
                entry_labels: vec![],
                quality_range: [40.0, 150.0],
                quality_step: 0.01,
                component_range: [30.0, 100.0],
            },
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, SynthError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn profile(&self, sport: Sport) -> &SportProfile {
        match sport {
            Sport::Diving => &self.diving,
            Sport::FigureSkating => &self.figure_skating,
            Sport::ArtisticSwimming => &self.artistic_swimming,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_instances > 0 && self.sports.is_empty() {
            return bad("`sports` is empty".into());
        }
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !range_ok(self.segment_duration) || self.segment_duration[0] < 0.1 {
            return bad("segment_duration must be an ordered range with minimum >= 0.1 s".into());
        }
        if !(self.max_gap.is_finite() && self.max_gap >= 0.0) {
            return bad("max_gap must be non-negative".into());
        }
        if self.element_count[0] == 0 || self.element_count[0] > self.element_count[1] {
            return bad("element_count must be an ordered range starting at 1 or more".into());
        }
        for &sport in &self.sports {
            let p = self.profile(sport);
            let nonempty = |name: &str, v: &[String]| {
                if v.is_empty() {
                    Err(SynthError::InvalidConfig(format!("{sport}: `{name}` is empty")))
                } else {
                    Ok(())
                }
            };
            nonempty("action_labels", &p.action_labels)?;
            nonempty("sub_action_labels", &p.sub_action_labels)?;
            if sport == Sport::Diving {
                nonempty("takeoff_labels", &p.takeoff_labels)?;
                nonempty("entry_labels", &p.entry_labels)?;
                if !range_ok(self.difficulty_range) || self.difficulty_range[0] < 0.1 {
                    return bad("difficulty_range must be ordered with minimum >= 0.1".into());
                }
            } else if !range_ok(p.component_range) || p.component_range[0] < 0.0 {
                return bad(format!("{sport}: component_range must be an ordered non-negative range"));
            }
            if !range_ok(p.quality_range) || p.quality_range[0] < 0.0 {
                return bad(format!("{sport}: quality_range must be an ordered non-negative range"));
            }
            if !(p.quality_step.is_finite() && p.quality_step > 0.0) {
                return bad(format!("{sport}: quality_step must be positive"));
            }
        }
        Ok(())
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn quantised(rng: &mut ChaCha8Rng, range: [f64; 2], step: f64) -> f64 {
    let lo = (range[0] / step).ceil() as i64;
    let hi = ((range[1] / step).floor() as i64).max(lo);
    let k = rng.gen_range(lo..=hi);
    // Dividing by the reciprocal keeps values like 24.5 exact.
    let inv = (1.0 / step).round();
    if (inv * step - 1.0).abs() < 1e-12 {
        k as f64 / inv
    } else {
        k as f64 * step
    }
}

fn pick(rng: &mut ChaCha8Rng, v: &[String]) -> String {
    v.choose(rng).cloned().expect("vocabulary checked non-empty")
}

pub fn synth_dataset(config: &SynthConfig, seed: u64) -> Result<Vec<ActionInstance>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_instances)
        .map(|i| {
            let sport = config.sports[i % config.sports.len()];
            synth_instance(config, sport, i, &mut rng)
        })
        .collect()
}

fn synth_instance(
    config: &SynthConfig,
    sport: Sport,
    index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ActionInstance, SynthError> {
    let p = config.profile(sport);
    let labels: Vec<String> = if sport == Sport::Diving {
        let flights = rng.gen_range(1..=2);
        let mut v = vec![pick(rng, &p.takeoff_labels)];
        v.extend((0..flights).map(|_| pick(rng, &p.sub_action_labels)));
        v.push(pick(rng, &p.entry_labels));
        v
    } else {
        let n = rng.gen_range(config.element_count[0]..=config.element_count[1]);
        (0..n).map(|_| pick(rng, &p.sub_action_labels)).collect()
    };

    let [dmin, dmax] = config.segment_duration;
    let mut t = round2(rng.gen_range(0.0..=config.max_gap));
    let mut sub_actions = Vec::with_capacity(labels.len());
    for label in labels {
        let end = round2(t + rng.gen_range(dmin..=dmax)).max(round2(t + 0.1));
        let sub = SubActionAnnotation::new(label, t, end)
            .map_err(|e| SynthError::InvalidConfig(format!("generated interval: {e}")))?;
        sub_actions.push(sub);
        t = round2(end + rng.gen_range(0.0..=config.max_gap));
    }

    let action_label = pick(rng, &p.action_labels);
    let quality = quantised(rng, p.quality_range, p.quality_step);
    let (difficulty, final_score) = if sport == Sport::Diving {
        let d = quantised(rng, config.difficulty_range, 0.1);
        (d, quality * d)
    } else {
        (1.0, round2(quality + quantised(rng, p.component_range, p.quality_step)))
    };

    let inst = ActionInstance {
        instance_id: format!("{}-{:05}", sport.as_str(), index),
        sport,
        action_label,
        sub_actions,
        difficulty,
        quality,
        final_score,
        prompt: p.prompt.clone(),
        reference_answer: None,
    };
    inst.validate().map_err(SynthError::InvalidConfig)?;
    Ok(inst)
}
