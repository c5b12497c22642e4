use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use aqa_core::annotations::{
    generate_qa, parse_annotations, synth_dataset, to_jsonl, AnswerDraft, SynthConfig, TemplateSet,
};
use aqa_core::grpo::{group_advantages, AdvantageMode};
use aqa_core::metrics::{evaluate, relative_l2, spearman, EvalOptions};
use aqa_core::rewards::{
    edit_distance, interval_iou, reward_assessment, reward_temporal, reward_total, RewardConfig,
    RewardWeights, TemporalMode,
};
use aqa_core::sar::{
    extract_fields, parse_sar, serialize_sar, ExtractionSchema, RecognitionStep, SarDocument,
};
use aqa_core::{ActionInstance, Sport, TimeInterval};

fn free_text() -> impl Strategy<Value = String> {
    "([A-Za-z0-9][A-Za-z0-9 ,.()-]{0,24})?".prop_map(|s| s.trim().to_string())
}

fn phase_text() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9 -]{0,12}".prop_map(|s| s.trim().to_string())
}

fn sar_doc() -> impl Strategy<Value = SarDocument> {
    (
        free_text(),
        prop::collection::vec((phase_text(), free_text(), free_text()), 1..5),
        free_text(),
        free_text(),
    )
        .prop_map(|(look, steps, assessment, answer)| SarDocument {
            look,
            recognition: steps
                .into_iter()
                .map(|(p, o, c)| RecognitionStep::new(p, o, c))
                .collect(),
            assessment,
            answer,
        })
}

fn whitespace() -> impl Strategy<Value = String> {
    "[ \n\t]{0,4}"
}

fn corpus(n: usize, seed: u64) -> Vec<ActionInstance> {
    let cfg = SynthConfig {
        n_instances: n,
        sports: vec![Sport::Diving, Sport::FigureSkating, Sport::ArtisticSwimming],
        ..SynthConfig::default()
    };
    synth_dataset(&cfg, seed).unwrap()
}

proptest! {
    #[test]
    fn sar_round_trip(doc in sar_doc()) {
        let text = serialize_sar(&doc).unwrap();
        prop_assert_eq!(parse_sar(&text).unwrap(), doc);
    }

    #[test]
    fn synthetic_answers_round_trip(seed in 0u64..500) {
        let templates = TemplateSet::builtin();
        for inst in corpus(3, seed) {
            let text = generate_qa(&inst, &templates, seed).unwrap().answer;
            let doc = parse_sar(&text).unwrap();
            let again = serialize_sar(&doc).unwrap();
            prop_assert_eq!(&again, &text);
            prop_assert_eq!(parse_sar(&again).unwrap(), doc);
        }
    }

    #[test]
    fn whitespace_between_tags_is_ignored(
        doc in sar_doc(),
        pads in prop::collection::vec(whitespace(), 9),
    ) {
        let steps: Vec<String> = doc
            .recognition
            .iter()
            .map(|s| format!("Phase: {}, Observation: {}, Conclusion: {}", s.phase, s.observation, s.conclusion))
            .collect();
        let text = format!(
            "{}<look>{}{}{}</look>{}<recognition>{}{}{}</recognition>\
             <assessment>{}{}</assessment><answer>{}{}</answer>",
            pads[0], pads[1], doc.look, pads[2], pads[3], pads[4], steps.join("\n"), pads[5],
            doc.assessment, pads[6], pads[7], doc.answer,
        ) + &pads[8];
        prop_assert_eq!(parse_sar(&text).unwrap(), doc);
    }

    #[test]
    fn edit_distance_metric_axioms(
        a in prop::collection::vec(0u8..4, 0..8),
        b in prop::collection::vec(0u8..4, 0..8),
        c in prop::collection::vec(0u8..4, 0..8),
    ) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
        prop_assert!(d(&a, &b) <= a.len().max(b.len()));
        prop_assert!(d(&a, &b) >= a.len().abs_diff(b.len()));
    }

    #[test]
    fn spearman_is_rank_invariant(
        pairs in prop::collection::vec((-50i32..50, -50i32..50), 3..20),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        if let Ok(rho) = spearman(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&rho));
            let x_cubed: Vec<f64> = x.iter().map(|v| v * v * v + 3.0 * v).collect();
            let y_exp: Vec<f64> = y.iter().map(|v| (v / 10.0).exp()).collect();
            prop_assert!((spearman(&x_cubed, &y_exp).unwrap() - rho).abs() < 1e-12);
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((spearman(&x, &neg).unwrap() + rho).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_l2_scales_with_error(
        pairs in prop::collection::vec((-100.0f64..100.0, -5.0f64..5.0), 1..20),
        c in 0.0f64..10.0,
    ) {
        let gts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let scaled: Vec<f64> = pairs.iter().map(|p| p.0 + c * p.1).collect();
        let base = relative_l2(&preds, &gts, (-100.0, 100.0)).unwrap();
        let r = relative_l2(&scaled, &gts, (-100.0, 100.0)).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((r - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }

    #[test]
    fn evaluate_ignores_instance_order(seed in 0u64..200, shuffle_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let gts = corpus(12, seed);
        let templates = TemplateSet::builtin();
        let preds: HashMap<String, String> = gts
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 5 != 0)
            .map(|(i, g)| {
                let mut draft = AnswerDraft::from_instance(g);
                draft.final_score += i as f64 * 0.7;
                let doc = templates
                    .render(&draft, &ExtractionSchema::default(), &mut ChaCha8Rng::seed_from_u64(seed))
                    .unwrap();
                (g.instance_id.clone(), serialize_sar(&doc).unwrap())
            })
            .collect();
        let opts = EvalOptions::default();
        let mut shuffled = gts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        prop_assert_eq!(evaluate(&gts, &preds, &opts), evaluate(&shuffled, &preds, &opts));
    }

    #[test]
    fn reward_total_is_linear_in_weights(
        seed in 0u64..300,
        corrupt in 0usize..4,
        scale in 0.1f64..5.0,
    ) {
        let inst = &corpus(3, seed)[(seed % 3) as usize];
        let mut draft = AnswerDraft::from_instance(inst);
        match corrupt {
            0 => {}
            1 => draft.quality += 1.5,
            2 => draft.sub_actions.truncate(1),
            _ => draft.action_label = "unknown".into(),
        }
        let doc = TemplateSet::builtin()
            .render(&draft, &ExtractionSchema::default(), &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        let text = serialize_sar(&doc).unwrap();
        let base = RewardConfig::default();
        let mut doubled = base.clone();
        let w = &mut doubled.weights;
        w.lambda_fmt *= scale;
        w.lambda_temp *= scale;
        w.lambda_action *= scale;
        w.lambda_score *= scale;
        let a = reward_total(inst, &text, &base);
        let b = reward_total(inst, &text, &doubled);
        prop_assert!((b.total - scale * a.total).abs() < 1e-12 * (1.0 + b.total));
        for r in [a.r_form, a.r_temp, a.r_cls, a.r_sub, a.r_action, a.r_score] {
            prop_assert!((0.0..=1.0).contains(&r));
        }
        prop_assert!(a.total <= RewardWeights::default().max_total() + 1e-12);
    }

    #[test]
    fn reference_answer_attains_the_maximum(seed in 0u64..300) {
        let cfg = RewardConfig::default();
        for inst in corpus(3, seed) {
            let text = generate_qa(&inst, &TemplateSet::builtin(), seed).unwrap().answer;
            let r = reward_total(&inst, &text, &cfg);
            prop_assert!((r.total - cfg.weights.max_total()).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_reward_falls_with_shift(
        start in 0.0f64..10.0,
        len in 0.1f64..5.0,
        s1 in 0.0f64..8.0,
        s2 in 0.0f64..8.0,
    ) {
        let (near, far) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let gt = [TimeInterval::new(start, start + len).unwrap()];
        let at = |shift: f64| {
            let p = [TimeInterval::new(start + shift, start + shift + len).unwrap()];
            reward_temporal(&gt, &p, TemporalMode::MatchedMean)
        };
        prop_assert!(at(far) <= at(near) + 1e-12);
        prop_assert!((at(0.0) - 1.0).abs() < 1e-12);
        prop_assert!((interval_iou(&gt[0], &gt[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn score_reward_decreases_with_error(e1 in 0.0f64..3.0, e2 in 0.0f64..3.0, d in 0.0f64..1.0) {
        prop_assume!((e1 - e2).abs() > 1e-6);
        let (small, large) = if e1 < e2 { (e1, e2) } else { (e2, e1) };
        let r = |e: f64| reward_assessment(0.5 + e, d, 0.5, d, 1.0, 1.0);
        prop_assert!(r(large) < r(small));
    }

    #[test]
    fn group_relative_advantages_are_centred(rewards in prop::collection::vec(0.0f64..1.0, 2..16)) {
        let a = group_advantages(&rewards, AdvantageMode::GroupRelative);
        let varies = rewards.iter().any(|r| (r - rewards[0]).abs() > 0.0);
        if varies {
            prop_assert!(a.iter().sum::<f64>().abs() < 1e-6);
        } else {
            prop_assert!(a.iter().all(|&x| x == 0.0));
        }
        let best = group_advantages(&rewards, AdvantageMode::BestOfG);
        prop_assert_eq!(best.len(), rewards.len());
        prop_assert!(best.iter().all(|&x| x == 0.0 || x == 1.0));
    }

    #[test]
    fn extraction_never_panics(answer in "[A-Za-z:;,.\\[\\)0-9 -]{0,80}") {
        let fields = extract_fields(&answer, &ExtractionSchema::default());
        let _ = fields.complete();
    }

    #[test]
    fn jsonl_round_trip_is_identity(seed in 0u64..200) {
        let data = corpus(6, seed);
        let text = to_jsonl(&data);
        prop_assert_eq!(parse_annotations(text.as_bytes()).unwrap(), data);
    }

    #[test]
    fn synth_is_reproducible(seed in any::<u64>()) {
        prop_assert_eq!(corpus(4, seed), corpus(4, seed));
    }
}

#[test]
fn only_canonical_tag_order_parses() {
    let blocks = [
        "<look>x</look>",
        "<recognition>Phase: a, Observation: b, Conclusion: c</recognition>",
        "<assessment>y</assessment>",
        "<answer>z</answer>",
    ];
    let mut parsed = 0;
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let order = [a, b, c, d];
                    let mut seen = order.to_vec();
                    seen.sort_unstable();
                    seen.dedup();
                    if seen.len() < 4 {
                        continue;
                    }
                    let text: String = order.iter().map(|&i| blocks[i]).collect::<Vec<_>>().join("\n");
                    let ok = parse_sar(&text).is_ok();
                    assert_eq!(ok, order == [0, 1, 2, 3], "{order:?}");
                    parsed += ok as usize;
                }
            }
        }
    }
    assert_eq!(parsed, 1);
}
