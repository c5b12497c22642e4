//! Corpus-level evaluation: action accuracy, sub-action edit similarity,
//! Spearman rank correlation and range-normalised absolute error.

mod report;

pub use report::{MetricsReport, ReportFormat};

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::annotations::{ActionInstance, Sport};
use crate::rewards::{reward_subaction, ParsePolicy};
use crate::sar::{block_content, extract_fields, parse_sar, ExtractionSchema, PredictedAssessment, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no samples")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooFew(usize),
    #[error("correlation undefined for constant input")]
    Undefined,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("degenerate range [{0}, {1}]")]
    DegenerateRange(String, String),
}

/// Fraction of exact label matches; `None` predictions count as misses.
pub fn action_accuracy(pairs: &[(String, Option<String>)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = pairs
        .iter()
        .filter(|(gt, pred)| pred.as_deref() == Some(gt.as_str()))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Sub-action edit similarity, `1 - d_edit / max(|G|, |P|)`.
pub fn sed<T: PartialEq>(gt: &[T], pred: &[T]) -> f64 {
    reward_subaction(gt, pred)
}

/// 1-based ranks; tied values share the mean of the positions they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) share rank mean((i+1)..=j).
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Mean absolute error divided by `range.1 - range.0`.
pub fn relative_l2(preds: &[f64], gts: &[f64], range: (f64, f64)) -> Result<f64, MetricError> {
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(MetricError::DegenerateRange(lo.to_string(), hi.to_string()));
    }
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch(preds.len(), gts.len()));
    }
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: f64 = preds.iter().zip(gts).map(|(p, g)| (p - g).abs()).sum();
    Ok(total / preds.len() as f64 / (hi - lo))
}

/// Pluggable text similarity in `[0, 1]` for free-text content checks.
pub trait TextSimilarity {
    fn similarity(&self, reference: &str, candidate: &str) -> f64;
}

/// Jaccard overlap of lower-cased whitespace tokens. Plumbing only; not a
/// substitute for a semantic judge.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenOverlap;

impl TextSimilarity for TokenOverlap {
    fn similarity(&self, reference: &str, candidate: &str) -> f64 {
        use std::collections::BTreeSet;
        let tokens = |s: &str| s.split_whitespace().map(str::to_lowercase).collect::<BTreeSet<_>>();
        let (a, b) = (tokens(reference), tokens(candidate));
        let union = a.union(&b).count();
        if union == 0 {
            return 1.0;
        }
        a.intersection(&b).count() as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// `Strict` (the default) requires the full document to parse;
    /// `Lenient` reads the answer block alone.
    pub parse_policy: ParsePolicy,
    pub schema: ExtractionSchema,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            parse_policy: ParsePolicy::Strict,
            schema: ExtractionSchema::default(),
        }
    }
}

/// Reads a prediction text into a complete assessment, or `None` when it
/// cannot be parsed under the given options.
pub fn read_assessment(text: &str, options: &EvalOptions) -> Option<PredictedAssessment> {
    let answer = match options.parse_policy {
        ParsePolicy::Strict => parse_sar(text).ok()?.answer,
        ParsePolicy::Lenient => block_content(text, Stage::Answer).ok()?.to_string(),
    };
    extract_fields(&answer, &options.schema).complete().ok()
}

fn span(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut it = values.peekable();
    it.peek()?;
    let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    (hi > lo).then_some((lo, hi))
}

/// Ground-truth range for one instance: its action category if that has at
/// least two samples and a non-zero spread, then its sport, then the corpus.
fn resolve_ranges(gts: &[&ActionInstance], value: fn(&ActionInstance) -> f64) -> Vec<Option<(f64, f64)>> {
    let mut by_action: BTreeMap<(Sport, &str), Vec<f64>> = BTreeMap::new();
    let mut by_sport: BTreeMap<Sport, Vec<f64>> = BTreeMap::new();
    for g in gts {
        by_action.entry((g.sport, g.action_label.as_str())).or_default().push(value(g));
        by_sport.entry(g.sport).or_default().push(value(g));
    }
    let corpus = span(gts.iter().map(|g| value(g)));
    gts.iter()
        .map(|g| {
            let own = &by_action[&(g.sport, g.action_label.as_str())];
            let category = if own.len() >= 2 { span(own.iter().copied()) } else { None };
            category
                .or_else(|| span(by_sport[&g.sport].iter().copied()))
                .or(corpus)
        })
        .collect()
}

/// Mean normalised error; unparsed predictions contribute 1.0 (a full-range
/// miss). `None` if any instance has no usable range.
fn range_normalised_error(
    gts: &[&ActionInstance],
    preds: &[Option<&PredictedAssessment>],
    gt_value: fn(&ActionInstance) -> f64,
    pred_value: fn(&PredictedAssessment) -> f64,
) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let ranges = resolve_ranges(gts, gt_value);
    let mut total = 0.0;
    for ((g, p), range) in gts.iter().zip(preds).zip(ranges) {
        let (lo, hi) = range?;
        total += match p {
            Some(p) => (pred_value(p) - gt_value(g)).abs() / (hi - lo),
            None => 1.0,
        };
    }
    Some(total / gts.len() as f64)
}

fn parsed_spearman(
    gts: &[&ActionInstance],
    preds: &[Option<&PredictedAssessment>],
    gt_value: fn(&ActionInstance) -> f64,
    pred_value: fn(&PredictedAssessment) -> f64,
) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = gts
        .iter()
        .zip(preds)
        .filter_map(|(g, p)| p.map(|p| (pred_value(p), gt_value(g))))
        .unzip();
    spearman(&x, &y).ok()
}

/// Evaluates prediction texts keyed by instance id against the ground truth.
pub fn evaluate(
    gts: &[ActionInstance],
    predictions: &HashMap<String, String>,
    options: &EvalOptions,
) -> MetricsReport {
    evaluate_with(gts, predictions, options, None)
}

/// [`evaluate`] plus an optional content-similarity hook, applied to
/// instances that carry a reference answer.
pub fn evaluate_with(
    gts: &[ActionInstance],
    predictions: &HashMap<String, String>,
    options: &EvalOptions,
    similarity: Option<&dyn TextSimilarity>,
) -> MetricsReport {
    let mut sorted: Vec<&ActionInstance> = gts.iter().collect();
    sorted.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    let mut n_missing = 0;
    let parsed: Vec<Option<PredictedAssessment>> = sorted
        .iter()
        .map(|g| match predictions.get(&g.instance_id) {
            Some(text) => read_assessment(text, options),
            None => {
                n_missing += 1;
                None
            }
        })
        .collect();
    let preds: Vec<Option<&PredictedAssessment>> = parsed.iter().map(Option::as_ref).collect();
    let n_total = sorted.len();
    let n_parse_failed = preds.iter().filter(|p| p.is_none()).count();

    let pairs: Vec<(String, Option<String>)> = sorted
        .iter()
        .zip(&preds)
        .map(|(g, p)| (g.action_label.clone(), p.map(|p| p.action_label.clone())))
        .collect();
    let action_accuracy = action_accuracy(&pairs).unwrap_or(0.0);
    let sed_mean = if n_total == 0 {
        0.0
    } else {
        let sum: f64 = sorted
            .iter()
            .zip(&preds)
            .map(|(g, p)| p.map_or(0.0, |p| sed(&g.sub_action_labels(), &p.sub_action_labels())))
            .sum();
        sum / n_total as f64
    };

    let score_gt = |g: &ActionInstance| g.final_score;
    let score_pred = |p: &PredictedAssessment| p.final_score;
    let diff_gt = |g: &ActionInstance| g.difficulty;
    let diff_pred = |p: &PredictedAssessment| p.difficulty;

    let (dive_gts, dive_preds): (Vec<&ActionInstance>, Vec<Option<&PredictedAssessment>>) = sorted
        .iter()
        .zip(&preds)
        .filter(|(g, _)| g.sport == Sport::Diving)
        .map(|(g, p)| (*g, *p))
        .unzip();

    let content_similarity = similarity.and_then(|sim| {
        let scores: Vec<f64> = sorted
            .iter()
            .filter_map(|g| {
                let reference = g.reference_answer.as_deref()?;
                let text = predictions.get(&g.instance_id).map_or("", String::as_str);
                Some(sim.similarity(reference, text))
            })
            .collect();
        (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
    });

    MetricsReport {
        action_accuracy,
        sed_mean,
        spearman_score: parsed_spearman(&sorted, &preds, score_gt, score_pred),
        spearman_difficulty: parsed_spearman(&dive_gts, &dive_preds, diff_gt, diff_pred),
        rl2_score: range_normalised_error(&sorted, &preds, score_gt, score_pred),
        rl2_difficulty: range_normalised_error(&dive_gts, &dive_preds, diff_gt, diff_pred),
        content_similarity,
        n_total,
        n_parse_failed,
        n_missing,
    }
}
