//! Optimal bipartite assignment between predicted slots and ground-truth objects.

use serde::{Deserialize, Serialize};

use crate::annotation::{FrameAnnotation, PredictionSet};
use crate::error::{Error, Result};

/// Padding value for the dummy ground-truth columns of a rectangular problem.
pub const PAD_COST: f64 = 1e6;

/// Relative tolerance under which two assignment totals count as tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchCostConfig {
    pub w_class: f64,
    pub w_l1: f64,
    pub w_giou: f64,
}

impl Default for MatchCostConfig {
    fn default() -> Self {
        MatchCostConfig {
            w_class: 1.0,
            w_l1: 5.0,
            w_giou: 2.0,
        }
    }
}

impl MatchCostConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_class", self.w_class),
            ("w_l1", self.w_l1),
            ("w_giou", self.w_giou),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("matcher.{name} must be nonnegative, got {w}")));
            }
        }
        Ok(())
    }
}

/// Matched `(prediction, ground truth)` pairs ordered by ground-truth index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
}

impl Assignment {
    pub fn total(&self, cost: &[Vec<f64>]) -> f64 {
        self.pairs.iter().map(|&(i, j)| cost[i][j]).sum()
    }

    /// Per-slot class targets: the matched object's class, or `no_object` elsewhere.
    pub fn slot_targets(&self, slots: usize, gts: &FrameAnnotation, no_object: usize) -> Vec<usize> {
        let mut t = vec![no_object; slots];
        for &(i, j) in &self.pairs {
            t[i] = gts.objects[j].class_id;
        }
        t
    }
}

/// `N × G` matrix of class-plus-box matching costs.
pub fn pairwise_cost(
    preds: &PredictionSet,
    gts: &FrameAnnotation,
    cfg: &MatchCostConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(preds.len());
    for p in &preds.slots {
        let mut row = Vec::with_capacity(gts.len());
        for g in &gts.objects {
            let prob = *p.class_probs.get(g.class_id).ok_or_else(|| {
                Error::Contract(format!(
                    "class {} outside a {}-way distribution",
                    g.class_id,
                    p.class_probs.len()
                ))
            })?;
            let giou = p.bbox.giou(&g.bbox)?;
            row.push(-cfg.w_class * prob + cfg.w_l1 * p.bbox.l1(&g.bbox) + cfg.w_giou * (1.0 - giou));
        }
        out.push(row);
    }
    Ok(out)
}

/// Minimum-cost injective map from ground truth (columns) to predictions (rows).
///
/// Among optimal assignments the one whose prediction indices, read in
/// ground-truth order, are lexicographically smallest is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    let g = cost.first().map_or(0, Vec::len);
    for (i, row) in cost.iter().enumerate() {
        if row.len() != g {
            return Err(Error::Contract(format!(
                "ragged cost matrix: row {i} has {} columns, expected {g}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("non-finite cost at ({i}, {j})")));
        }
    }
    if g > n {
        return Err(Error::Capacity {
            ground_truth: g,
            slots: n,
        });
    }
    if g == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_predictions: (0..n).collect(),
        });
    }

    let all_rows: Vec<usize> = (0..n).collect();
    let all_cols: Vec<usize> = (0..g).collect();
    let optimum = solve(cost, &all_rows, &all_cols).0;
    let tol = TIE_TOL * optimum.abs().max(1.0);

    // Fix ground-truth objects in order, each to the smallest prediction that
    // still admits an optimal completion.
    let mut pairs = Vec::with_capacity(g);
    let mut used = vec![false; n];
    let mut fixed = 0.0;
    for j in 0..g {
        let rest_cols: Vec<usize> = (j + 1..g).collect();
        let mut chosen = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let rows: Vec<usize> = (0..n).filter(|&r| !used[r] && r != i).collect();
            let rest = solve(cost, &rows, &rest_cols).0;
            if fixed + cost[i][j] + rest <= optimum + tol {
                chosen = Some(i);
                break;
            }
        }
        // The optimal row for this column always qualifies; fall back defensively.
        let i = chosen.unwrap_or_else(|| {
            let rows: Vec<usize> = (0..n).filter(|&r| !used[r]).collect();
            let cols: Vec<usize> = (j..g).collect();
            solve(cost, &rows, &cols).1[0]
        });
        used[i] = true;
        fixed += cost[i][j];
        pairs.push((i, j));
    }
    Ok(Assignment {
        pairs,
        unmatched_predictions: (0..n).filter(|&i| !used[i]).collect(),
    })
}

/// Shortest-augmenting-path assignment restricted to `rows × cols` of `cost`,
/// with `cols.len() <= rows.len()`. Returns the total and, per column, the row.
///
/// Equivalent to padding the column side with a constant to a square problem:
/// every padded completion adds the same amount, so the argmin is unchanged.
fn solve(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (f64, Vec<usize>) {
    let n = cols.len();
    let m = rows.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let a = |c: usize, r: usize| cost[rows[r - 1]][cols[c - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for c in 1..=n {
        p[0] = c;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
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
    let mut row_of = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_of[p[j] - 1] = rows[j - 1];
        }
    }
    let total = row_of
        .iter()
        .enumerate()
        .map(|(c, &r)| cost[r][cols[c]])
        .sum();
    (total, row_of)
}

/// Matching cost followed by optimal assignment.
pub fn match_sets(
    preds: &PredictionSet,
    gts: &FrameAnnotation,
    cfg: &MatchCostConfig,
) -> Result<Assignment> {
    if gts.len() > preds.len() {
        return Err(Error::Capacity {
            ground_truth: gts.len(),
            slots: preds.len(),
        });
    }
    if gts.is_empty() {
        return Ok(Assignment {
            pairs: Vec::new(),
            unmatched_predictions: (0..preds.len()).collect(),
        });
    }
    hungarian(&pairwise_cost(preds, gts, cfg)?)
}
