//! Generate, corrupt, evaluate: metrics against values computed from the
//! corruption model alone.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aqa_core::annotations::{generate_qa, synth_dataset, AnswerDraft, SynthConfig, TemplateSet};
use aqa_core::grpo::{train, TrainConfig};
use aqa_core::metrics::{evaluate, EvalOptions};
use aqa_core::rewards::RewardConfig;
use aqa_core::sar::{serialize_sar, ExtractionSchema};
use aqa_core::{ActionInstance, Sport};

fn mixed_corpus(n: usize, seed: u64) -> Vec<ActionInstance> {
    let cfg = SynthConfig {
        n_instances: n,
        sports: vec![Sport::Diving, Sport::FigureSkating, Sport::ArtisticSwimming],
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, seed).unwrap()
}

fn render(draft: &AnswerDraft) -> String {
    let doc = TemplateSet::builtin()
        .render(draft, &ExtractionSchema::default(), &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    serialize_sar(&doc).unwrap()
}

/// Corruption classes by index modulo 5:
/// 0 unparseable, 1 wrong action, 2 last sub-action dropped,
/// 3 no prediction at all, 4 untouched.
#[test]
fn corrupted_corpus_matches_the_corruption_model() {
    let gts = mixed_corpus(60, 11);
    let mut preds = HashMap::new();
    let mut n_missing = 0usize;
    let mut expected_sed = 0.0;
    for (i, g) in gts.iter().enumerate() {
        let mut draft = AnswerDraft::from_instance(g);
        let text = match i % 5 {
            0 => Some("<look>cut off".to_string()),
            1 => {
                draft.action_label = "Unlisted".into();
                expected_sed += 1.0;
                Some(render(&draft))
            }
            2 => {
                let n = draft.sub_actions.len();
                draft.sub_actions.pop();
                expected_sed += 1.0 - 1.0 / n as f64;
                Some(render(&draft))
            }
            3 => {
                n_missing += 1;
                None
            }
            _ => {
                expected_sed += 1.0;
                Some(render(&draft))
            }
        };
        if let Some(t) = text {
            preds.insert(g.instance_id.clone(), t);
        }
    }
    let n = gts.len() as f64;
    let report = evaluate(&gts, &preds, &EvalOptions::default());

    assert_eq!(report.n_total, 60);
    assert_eq!(report.n_missing, n_missing);
    assert_eq!(report.n_parse_failed, 24);
    assert!((report.action_accuracy - 24.0 / n).abs() < 1e-12);
    assert!((report.sed_mean - expected_sed / n).abs() < 1e-12);
    // Scores are untouched wherever parsing succeeds; failures cost 1 each.
    assert!((report.rl2_score.unwrap() - 24.0 / n).abs() < 1e-12);
    assert!((report.rl2_difficulty.unwrap() - 8.0 / 20.0).abs() < 1e-12);
    assert_eq!(report.spearman_score, Some(1.0));
    assert_eq!(report.spearman_difficulty.map(|r| r > 0.999), Some(true));
}

#[test]
fn score_offsets_give_hand_computed_rl2() {
    // Diving only, so every instance resolves a range from the same sport.
    let gts = synth_dataset(&SynthConfig { n_instances: 20, ..SynthConfig::default() }, 5).unwrap();
    let mut preds = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        let mut draft = AnswerDraft::from_instance(g);
        if i % 2 == 0 {
            draft.final_score += 2.0;
        }
        preds.insert(g.instance_id.clone(), render(&draft));
    }
    let report = evaluate(&gts, &preds, &EvalOptions::default());

    // Independent range resolution: per action code when it has two or more
    // distinct values, otherwise the sport range.
    let sport_lo = gts.iter().map(|g| g.final_score).fold(f64::INFINITY, f64::min);
    let sport_hi = gts.iter().map(|g| g.final_score).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (i, g) in gts.iter().enumerate() {
        if i % 2 != 0 {
            continue;
        }
        let same: Vec<f64> = gts
            .iter()
            .filter(|h| h.action_label == g.action_label)
            .map(|h| h.final_score)
            .collect();
        let lo = same.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = same.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = if same.len() >= 2 && hi > lo { hi - lo } else { sport_hi - sport_lo };
        total += 2.0 / range;
    }
    let expected = total / gts.len() as f64;
    assert!((report.rl2_score.unwrap() - expected).abs() < 1e-9, "{report:?} vs {expected}");
    assert_eq!(report.action_accuracy, 1.0);
}

#[test]
fn reference_answers_are_perfect_on_a_mixed_corpus() {
    let gts = mixed_corpus(30, 2);
    let preds: HashMap<String, String> = gts
        .iter()
        .map(|g| (g.instance_id.clone(), generate_qa(g, &TemplateSet::builtin(), 0).unwrap().answer))
        .collect();
    let r = evaluate(&gts, &preds, &EvalOptions::default());
    assert_eq!((r.action_accuracy, r.sed_mean), (1.0, 1.0));
    assert_eq!((r.rl2_score, r.rl2_difficulty), (Some(0.0), Some(0.0)));
    assert_eq!(r.n_parse_failed, 0);
}

/// Final-window mean temporal reward, averaged over seeds, for a given
/// temporal weight.
fn final_temporal(data: &[ActionInstance], lambda_temp: f64, seeds: &[u64]) -> f64 {
    let mut rewards = RewardConfig::default();
    rewards.weights.lambda_temp = lambda_temp;
    let total: f64 = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, iterations: 300, ..TrainConfig::default() };
            let trace = train(data, &cfg, &rewards).unwrap().trace;
            let tail = &trace.rows[trace.len() - 50..];
            tail.iter().map(|r| r.r_temp).sum::<f64>() / tail.len() as f64
        })
        .sum();
    total / seeds.len() as f64
}

#[test]
fn temporal_weight_pressure_is_monotone() {
    let data = synth_dataset(&SynthConfig::default(), 7).unwrap();
    let seeds = [0, 1, 2];
    let levels: Vec<f64> = [0.0, 0.3, 0.9].iter().map(|&l| final_temporal(&data, l, &seeds)).collect();
    for pair in levels.windows(2) {
        assert!(pair[1] >= pair[0], "r_temp by weight: {levels:?}");
    }
}
