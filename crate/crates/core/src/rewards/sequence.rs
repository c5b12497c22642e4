//! Label-level rewards: classification, sub-action sequence and the
//! hierarchical action blend.

/// Levenshtein distance with unit insert, delete and substitute costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - d_edit / max(|gt|, |pred|)`; two empty sequences score 1.
pub fn reward_subaction<T: PartialEq>(gt: &[T], pred: &[T]) -> f64 {
    let longest = gt.len().max(pred.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(gt, pred) as f64 / longest as f64
}

/// Exact, case-sensitive label match after trimming surrounding whitespace.
pub fn reward_classification(gt_label: &str, pred_label: &str) -> f64 {
    if gt_label.trim() == pred_label.trim() {
        1.0
    } else {
        0.0
    }
}

/// `alpha * r_cls + (1 - alpha) * r_sub`.
pub fn blend_action(r_cls: f64, r_sub: f64, alpha: f64) -> f64 {
    alpha * r_cls + (1.0 - alpha) * r_sub
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances() {
        assert_eq!(edit_distance(&["x"], &["x"]), 0);
        assert_eq!(edit_distance::<&str>(&[], &["a", "b", "c"]), 3);
        assert_eq!(edit_distance(&['k', 'i', 't', 't', 'e', 'n'], &['s', 'i', 't', 't', 'i', 'n', 'g']), 3);
    }

    #[test]
    fn subaction_reward() {
        assert_eq!(reward_subaction(&["a", "b"], &["a", "b"]), 1.0);
        let r = reward_subaction(&["a", "b", "c"], &["a", "c"]);
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(reward_subaction(&["a", "b"], &["c", "d"]), 0.0);
        assert_eq!(reward_subaction::<&str>(&[], &[]), 1.0);
        assert_eq!(reward_subaction(&["a"], &[]), 0.0);
    }

    #[test]
    fn classification() {
        assert_eq!(reward_classification("5253B", "5253B"), 1.0);
        assert_eq!(reward_classification("5253B", "5251B"), 0.0);
        assert_eq!(reward_classification(" 5253B ", "5253B"), 1.0);
        assert_eq!(reward_classification("5253B", "5253b"), 0.0);
    }

    #[test]
    fn action_blend() {
        assert_eq!(blend_action(1.0, 1.0, 0.5), 1.0);
        assert!((blend_action(0.0, 2.0 / 3.0, 0.5) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(blend_action(1.0, 0.25, 1.0), 1.0);
        assert_eq!(blend_action(0.0, 0.25, 1.0), 0.0);
    }
}
