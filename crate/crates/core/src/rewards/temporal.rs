//! Temporal IoU, optimal one-to-one segment matching and the temporal
//! alignment reward.

use serde::{Deserialize, Serialize};

use crate::annotations::TimeInterval;

/// Slack used when testing whether a partial assignment can still reach the
/// optimum. Far above accumulated rounding in the solver, far below any IoU
/// difference that matters.
const OPTIMALITY_TOLERANCE: f64 = 1e-10;

/// Intersection over union of two half-open intervals.
pub fn interval_iou(a: &TimeInterval, b: &TimeInterval) -> f64 {
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.length() + b.length() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// One-to-one assignment between ground-truth and predicted segments.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Matching {
    /// `(gt_index, pred_index)` pairs sorted by ground-truth index.
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Sum of weights over the pairs, accumulated in ground-truth order.
    pub fn total(&self, weights: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(i, j)| weights[i][j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    /// Mean IoU over the matching (divides by the matching size).
    #[default]
    MatchedMean,
    /// Divides by the larger segment count, so unmatched segments cost reward.
    Strict,
}

/// Minimum-cost assignment of every row to a distinct column; requires
/// `rows <= cols`. Returns the column assigned to each row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best achievable total weight when matching `rows` against `cols` with
/// `min(|rows|, |cols|)` pairs.
fn best_total(weights: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    if rows.len() <= cols.len() {
        let cost: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| -weights[i][j]).collect())
            .collect();
        hungarian_min(&cost)
            .iter()
            .zip(rows)
            .map(|(&c, &i)| weights[i][cols[c]])
            .sum()
    } else {
        let cost: Vec<Vec<f64>> = cols
            .iter()
            .map(|&j| rows.iter().map(|&i| -weights[i][j]).collect())
            .collect();
        hungarian_min(&cost)
            .iter()
            .zip(cols)
            .map(|(&r, &j)| weights[rows[r]][j])
            .sum()
    }
}

/// Maximum-weight one-to-one assignment of size `min(rows, cols)` for a
/// non-negative weight matrix.
///
/// Among optimal assignments the one whose sorted pair list is
/// lexicographically smallest is returned.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Matching {
    let n = weights.len();
    let m = weights.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Matching::default();
    }
    let mut free_cols: Vec<usize> = (0..m).collect();
    let mut target = best_total(weights, &(0..n).collect::<Vec<_>>(), &free_cols);
    let mut pairs = Vec::with_capacity(n.min(m));
    for i in 0..n {
        if free_cols.is_empty() {
            break;
        }
        let rest: Vec<usize> = (i + 1..n).collect();
        let mut chosen = None;
        for (pos, &j) in free_cols.iter().enumerate() {
            let mut cols = free_cols.clone();
            cols.remove(pos);
            let remainder = best_total(weights, &rest, &cols);
            if weights[i][j] + remainder >= target - OPTIMALITY_TOLERANCE {
                chosen = Some((pos, remainder));
                break;
            }
        }
        match chosen {
            Some((pos, remainder)) => {
                pairs.push((i, free_cols.remove(pos)));
                target = remainder;
            }
            // Leaving row i unmatched is optimal.
            None => target = best_total(weights, &rest, &free_cols),
        }
    }
    Matching { pairs }
}

pub fn iou_matrix(gt: &[TimeInterval], pred: &[TimeInterval]) -> Vec<Vec<f64>> {
    gt.iter()
        .map(|g| pred.iter().map(|p| interval_iou(g, p)).collect())
        .collect()
}

/// Optimal one-to-one matching maximising total IoU.
pub fn match_segments(gt: &[TimeInterval], pred: &[TimeInterval]) -> Matching {
    max_weight_matching(&iou_matrix(gt, pred))
}

fn temporal_from_weights(weights: &[Vec<f64>], n_gt: usize, n_pred: usize, mode: TemporalMode) -> f64 {
    if n_gt == 0 && n_pred == 0 {
        return 1.0;
    }
    if n_gt == 0 || n_pred == 0 {
        return 0.0;
    }
    let matching = max_weight_matching(weights);
    let denom = match mode {
        TemporalMode::MatchedMean => matching.len(),
        TemporalMode::Strict => n_gt.max(n_pred),
    };
    matching.total(weights) / denom as f64
}

/// Mean IoU over the optimal matching. Both lists empty gives 1, exactly
/// one empty gives 0.
pub fn reward_temporal(gt: &[TimeInterval], pred: &[TimeInterval], mode: TemporalMode) -> f64 {
    temporal_from_weights(&iou_matrix(gt, pred), gt.len(), pred.len(), mode)
}

/// Like [`reward_temporal`], but pairs whose labels differ contribute zero
/// overlap.
pub fn reward_temporal_labeled(
    gt: &[(&str, TimeInterval)],
    pred: &[(&str, TimeInterval)],
    mode: TemporalMode,
) -> f64 {
    let weights: Vec<Vec<f64>> = gt
        .iter()
        .map(|(gl, g)| {
            pred.iter()
                .map(|(pl, p)| if gl == pl { interval_iou(g, p) } else { 0.0 })
                .collect()
        })
        .collect();
    temporal_from_weights(&weights, gt.len(), pred.len(), mode)
}
