//! Hierarchical rewards for structured assessment outputs.
//!
//! The combined reward is
//! `λ_fmt·R_form + λ_temp·R_temp + λ_action·R_action + λ_score·R_score`
//! with `R_action = α·R_cls + (1−α)·R_sub` and
//! `R_score = exp(−λ_q·(q̂−q*)² − λ_d·(d̂−d*)²)`.

mod sequence;
mod temporal;

pub use sequence::{blend_action, edit_distance, reward_classification, reward_subaction};
pub use temporal::{
    interval_iou, iou_matrix, match_segments, max_weight_matching, reward_temporal,
    reward_temporal_labeled, Matching, TemporalMode,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ActionInstance, Sport};
use crate::sar::{
    block_content, extract_fields, parse_sar, tag_layout, ExtractionSchema, PartialAssessment,
    PredictedAssessment, Stage,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid reward config: {0}")]
    Invalid(String),
    #[error("cannot parse reward config: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_fmt: f64,
    pub lambda_temp: f64,
    pub lambda_action: f64,
    pub lambda_score: f64,
    pub alpha: f64,
    /// Quality sensitivity inside the score reward.
    pub lambda_score_inner: f64,
    /// Difficulty sensitivity inside the score reward.
    pub lambda_diff_inner: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_fmt: 0.1,
            lambda_temp: 0.3,
            lambda_action: 0.3,
            lambda_score: 0.3,
            alpha: 0.5,
            lambda_score_inner: 1.0,
            lambda_diff_inner: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let lambdas = [
            ("lambda_fmt", self.lambda_fmt),
            ("lambda_temp", self.lambda_temp),
            ("lambda_action", self.lambda_action),
            ("lambda_score", self.lambda_score),
            ("lambda_score_inner", self.lambda_score_inner),
            ("lambda_diff_inner", self.lambda_diff_inner),
        ];
        for (name, v) in lambdas {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::Invalid(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        Ok(())
    }

    /// Upper bound of the combined reward.
    pub fn max_total(&self) -> f64 {
        self.lambda_fmt + self.lambda_temp + self.lambda_action + self.lambda_score
    }

    pub fn combine(&self, r_form: f64, r_temp: f64, r_action: f64, r_score: f64) -> f64 {
        self.lambda_fmt * r_form
            + self.lambda_temp * r_temp
            + self.lambda_action * r_action
            + self.lambda_score * r_score
    }
}

/// What happens to content components when the document does not parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsePolicy {
    /// Score whatever the answer block yields, even if other tags are broken.
    #[default]
    Lenient,
    /// Any parse failure zeroes every component except the format reward.
    Strict,
}

/// Score ranges used to bring quality and difficulty to unit scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub quality: [f64; 2],
    pub difficulty: [f64; 2],
}

impl ScoreScale {
    fn normalize(range: [f64; 2], x: f64) -> f64 {
        (x - range[0]) / (range[1] - range[0])
    }

    pub fn quality(&self, x: f64) -> f64 {
        Self::normalize(self.quality, x)
    }

    pub fn difficulty(&self, x: f64) -> f64 {
        Self::normalize(self.difficulty, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalization {
    /// Compare raw scores instead of range-normalised ones.
    pub raw: bool,
    pub diving: ScoreScale,
    pub figure_skating: ScoreScale,
    pub artistic_swimming: ScoreScale,
}

impl Default for ScoreNormalization {
    fn default() -> Self {
        Self {
            raw: false,
            diving: ScoreScale {
                quality: [0.0, 30.0],
                difficulty: [1.2, 4.1],
            },
            figure_skating: ScoreScale {
                quality: [0.0, 130.0],
                difficulty: [1.0, 2.0],
            },
            artistic_swimming: ScoreScale {
                quality: [0.0, 160.0],
                difficulty: [1.0, 2.0],
            },
        }
    }
}

impl ScoreNormalization {
    pub fn scale(&self, sport: Sport) -> &ScoreScale {
        match sport {
            Sport::Diving => &self.diving,
            Sport::FigureSkating => &self.figure_skating,
            Sport::ArtisticSwimming => &self.artistic_swimming,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        for sport in Sport::ALL {
            let s = self.scale(sport);
            for (what, r) in [("quality", s.quality), ("difficulty", s.difficulty)] {
                if !(r[0].is_finite() && r[1].is_finite() && r[1] > r[0]) {
                    return Err(ConfigError::Invalid(format!(
                        "{sport} {what} range must satisfy min < max"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Maps `(quality, difficulty)` into the space the score reward compares in.
    pub fn apply(&self, sport: Sport, quality: f64, difficulty: f64) -> (f64, f64) {
        if self.raw {
            (quality, difficulty)
        } else {
            let s = self.scale(sport);
            (s.quality(quality), s.difficulty(difficulty))
        }
    }
}

/// Everything that parameterises [`reward_total`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardConfig {
    pub weights: RewardWeights,
    pub temporal_mode: TemporalMode,
    /// Only pairs with equal labels may overlap when matching segments.
    pub label_constrained_matching: bool,
    pub parse_policy: ParsePolicy,
    pub normalization: ScoreNormalization,
    pub schema: ExtractionSchema,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RewardConfigFile {
    lambda_fmt: f64,
    lambda_temp: f64,
    lambda_action: f64,
    lambda_score: f64,
    alpha: f64,
    lambda_score_inner: f64,
    lambda_diff_inner: f64,
    strict_temporal: bool,
    label_constrained_matching: bool,
    parse_policy: ParsePolicy,
    normalization: ScoreNormalization,
    schema: ExtractionSchema,
}

impl Default for RewardConfigFile {
    fn default() -> Self {
        Self::from(&RewardConfig::default())
    }
}

impl From<&RewardConfig> for RewardConfigFile {
    fn from(c: &RewardConfig) -> Self {
        let w = c.weights;
        Self {
            lambda_fmt: w.lambda_fmt,
            lambda_temp: w.lambda_temp,
            lambda_action: w.lambda_action,
            lambda_score: w.lambda_score,
            alpha: w.alpha,
            lambda_score_inner: w.lambda_score_inner,
            lambda_diff_inner: w.lambda_diff_inner,
            strict_temporal: c.temporal_mode == TemporalMode::Strict,
            label_constrained_matching: c.label_constrained_matching,
            parse_policy: c.parse_policy,
            normalization: c.normalization.clone(),
            schema: c.schema.clone(),
        }
    }
}

impl RewardConfig {
    /// Reads the key-value config file. Weights are top-level keys; missing
    /// keys keep their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let f: RewardConfigFile = toml::from_str(s)?;
        let cfg = Self {
            weights: RewardWeights {
                lambda_fmt: f.lambda_fmt,
                lambda_temp: f.lambda_temp,
                lambda_action: f.lambda_action,
                lambda_score: f.lambda_score,
                alpha: f.alpha,
                lambda_score_inner: f.lambda_score_inner,
                lambda_diff_inner: f.lambda_diff_inner,
            },
            temporal_mode: if f.strict_temporal {
                TemporalMode::Strict
            } else {
                TemporalMode::MatchedMean
            },
            label_constrained_matching: f.label_constrained_matching,
            parse_policy: f.parse_policy,
            normalization: f.normalization,
            schema: f.schema,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&RewardConfigFile::from(self)).expect("reward config is TOML-representable")
    }

    /// Stable JSON form, used for hashing run configurations.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(RewardConfigFile::from(self)).expect("reward config is JSON-representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weights.validate()?;
        self.normalization.validate()?;
        self.schema
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Per-component rewards and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_form: f64,
    pub r_temp: f64,
    pub r_cls: f64,
    pub r_sub: f64,
    pub r_action: f64,
    pub r_score: f64,
    pub total: f64,
}

/// 1 when all four tag pairs are present, balanced and in canonical order.
pub fn reward_format(text: &str) -> f64 {
    if tag_layout(text).is_ok() {
        1.0
    } else {
        0.0
    }
}

/// `exp(−λ_q·(q̂−q*)² − λ_d·(d̂−d*)²)`.
pub fn reward_assessment(
    pred_q: f64,
    pred_d: f64,
    gt_q: f64,
    gt_d: f64,
    lambda_score_inner: f64,
    lambda_diff_inner: f64,
) -> f64 {
    let dq = pred_q - gt_q;
    let dd = pred_d - gt_d;
    (-lambda_score_inner * dq * dq - lambda_diff_inner * dd * dd).exp()
}

/// Action reward for a complete prediction.
pub fn reward_action(gt: &ActionInstance, pred: &PredictedAssessment, alpha: f64) -> f64 {
    blend_action(
        reward_classification(&gt.action_label, &pred.action_label),
        reward_subaction(&gt.sub_action_labels(), &pred.sub_action_labels()),
        alpha,
    )
}

/// Reads the prediction's fields according to the parse policy. `None`
/// means no content component can be computed.
pub fn read_prediction(text: &str, config: &RewardConfig) -> Option<PartialAssessment> {
    let answer = match config.parse_policy {
        ParsePolicy::Strict => parse_sar(text).ok()?.answer,
        ParsePolicy::Lenient => block_content(text, Stage::Answer).ok()?.to_string(),
    };
    Some(extract_fields(&answer, &config.schema))
}

/// Scores one prediction text against its ground truth.
///
/// Components whose inputs cannot be extracted contribute 0; the format
/// reward is always evaluated on the raw text.
pub fn reward_total(gt: &ActionInstance, prediction_text: &str, config: &RewardConfig) -> RewardBreakdown {
    let w = &config.weights;
    let r_form = reward_format(prediction_text);
    let mut out = RewardBreakdown {
        r_form,
        ..Default::default()
    };
    if let Some(fields) = read_prediction(prediction_text, config) {
        if let Ok(label) = &fields.action_label {
            out.r_cls = reward_classification(&gt.action_label, label);
        }
        if let Ok(subs) = &fields.sub_actions {
            let pred_labels: Vec<&str> = subs.iter().map(|s| s.label.as_str()).collect();
            out.r_sub = reward_subaction(&gt.sub_action_labels(), &pred_labels);
            out.r_temp = if config.label_constrained_matching {
                let g: Vec<_> = gt.sub_actions.iter().map(|s| (s.label.as_str(), s.interval)).collect();
                let p: Vec<_> = subs.iter().map(|s| (s.label.as_str(), s.interval)).collect();
                reward_temporal_labeled(&g, &p, config.temporal_mode)
            } else {
                let p: Vec<_> = subs.iter().map(|s| s.interval).collect();
                reward_temporal(&gt.intervals(), &p, config.temporal_mode)
            };
        }
        if let (Ok(Some(q)), Ok(d)) = (&fields.quality, &fields.difficulty) {
            let (pq, pd) = config.normalization.apply(gt.sport, *q, *d);
            let (gq, gd) = config.normalization.apply(gt.sport, gt.quality, gt.difficulty);
            out.r_score = reward_assessment(pq, pd, gq, gd, w.lambda_score_inner, w.lambda_diff_inner);
        }
    }
    out.r_action = blend_action(out.r_cls, out.r_sub, w.alpha);
    out.total = w.combine(out.r_form, out.r_temp, out.r_action, out.r_score);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::fixtures::dive;
    use crate::annotations::{generate_qa, TemplateSet};

    fn reference(inst: &ActionInstance) -> String {
        generate_qa(inst, &TemplateSet::builtin(), 1).unwrap().answer
    }

    #[test]
    fn default_weights() {
        let w = RewardWeights::default();
        assert_eq!(
            (w.lambda_fmt, w.lambda_temp, w.lambda_action, w.lambda_score, w.alpha),
            (0.1, 0.3, 0.3, 0.3, 0.5)
        );
    }

    #[test]
    fn format_reward() {
        let text = reference(&dive());
        assert_eq!(reward_format(&text), 1.0);
        assert_eq!(reward_format(&text.replace("<answer>", "")), 0.0);
        assert_eq!(reward_format(""), 0.0);
        // Empty blocks still satisfy the order-only check.
        assert_eq!(
            reward_format("<look></look><recognition></recognition><assessment></assessment><answer></answer>"),
            1.0
        );
    }

    #[test]
    fn assessment_reward() {
        assert_eq!(reward_assessment(3.0, 2.0, 3.0, 2.0, 1.0, 1.0), 1.0);
        assert!((reward_assessment(4.0, 2.0, 3.0, 2.0, 1.0, 1.0) - (-1.0f64).exp()).abs() < 1e-15);
        let mut last = 1.0;
        for k in 1..50 {
            let r = reward_assessment(3.0 + k as f64 * 0.5, 2.0, 3.0, 2.0, 1.0, 0.0);
            assert!(r < last);
            last = r;
        }
        assert!(last < 1e-100);
    }

    #[test]
    fn reference_answer_scores_maximum() {
        let inst = dive();
        let b = reward_total(&inst, &reference(&inst), &RewardConfig::default());
        assert_eq!(
            b,
            RewardBreakdown {
                r_form: 1.0,
                r_temp: 1.0,
                r_cls: 1.0,
                r_sub: 1.0,
                r_action: 1.0,
                r_score: 1.0,
                total: 0.1 + 0.3 + 0.3 + 0.3,
            }
        );
        assert!((b.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        assert_eq!(reward_total(&dive(), "", &RewardConfig::default()), RewardBreakdown::default());
    }

    #[test]
    fn out_of_order_tags_by_policy() {
        let inst = dive();
        let text = reference(&inst);
        let look_end = text.find("</look>").unwrap() + "</look>".len();
        let (look, rest) = text.split_at(look_end);
        let rec_end = rest.find("</recognition>").unwrap() + "</recognition>".len();
        let (rec, tail) = rest.split_at(rec_end);
        let swapped = format!("{rec}{look}{tail}");

        let lenient = reward_total(&inst, &swapped, &RewardConfig::default());
        assert_eq!(lenient.r_form, 0.0);
        assert_eq!((lenient.r_temp, lenient.r_action, lenient.r_score), (1.0, 1.0, 1.0));
        assert!((lenient.total - 0.9).abs() < 1e-12);

        let strict_cfg = RewardConfig {
            parse_policy: ParsePolicy::Strict,
            ..Default::default()
        };
        assert_eq!(reward_total(&inst, &swapped, &strict_cfg), RewardBreakdown::default());
    }

    #[test]
    fn wrong_label_halves_action_reward() {
        let inst = dive();
        let text = reference(&inst).replace("Action: 5253B", "Action: 5251B");
        let b = reward_total(&inst, &text, &RewardConfig::default());
        assert_eq!(b.r_cls, 0.0);
        assert_eq!(b.r_action, 0.5);
    }

    #[test]
    fn missing_quality_zeroes_score_only() {
        let inst = dive();
        let text = reference(&inst).replace("; Quality: 24.5", "");
        assert!(!text.contains("Quality"));
        let b = reward_total(&inst, &text, &RewardConfig::default());
        assert_eq!(b.r_score, 0.0);
        assert_eq!((b.r_form, b.r_temp, b.r_action), (1.0, 1.0, 1.0));
    }

    #[test]
    fn config_file_round_trip_and_validation() {
        let cfg = RewardConfig::from_toml_str("lambda_fmt = 0.2\nstrict_temporal = true\n").unwrap();
        assert_eq!(cfg.weights.lambda_fmt, 0.2);
        assert_eq!(cfg.weights.lambda_temp, 0.3);
        assert_eq!(cfg.temporal_mode, TemporalMode::Strict);
        assert_eq!(RewardConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        assert!(RewardConfig::from_toml_str("alpha = 1.5\n").is_err());
        assert!(RewardConfig::from_toml_str("lambda_temp = -1\n").is_err());
        assert!(RewardConfig::from_toml_str("lamda_temp = 1\n").is_err());
    }

    #[test]
    fn raw_normalization_uses_sport_units() {
        let inst = dive();
        let text = reference(&inst).replace("Quality: 24.5", "Quality: 25.5");
        let raw = RewardConfig {
            normalization: ScoreNormalization {
                raw: true,
                ..Default::default()
            },
            ..Default::default()
        };
        let b = reward_total(&inst, &text, &raw);
        assert!((b.r_score - (-1.0f64).exp()).abs() < 1e-15);
        let b = reward_total(&inst, &text, &RewardConfig::default());
        assert!((b.r_score - (-(1.0f64 / 30.0).powi(2)).exp()).abs() < 1e-15);
    }
}
