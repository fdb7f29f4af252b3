//! OOD evaluation metrics and the 1-D Wasserstein-1 distance.
//!
//! Scores follow the "higher = in-distribution" orientation. For FPR/TPR the
//! positive (detected) class is OOD and detection fires when
//! `score ≤ threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{DscError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub fpr_at_95: f64,
    pub fpr_at_98: f64,
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

fn check_nonempty(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(DscError::invalid("metrics need nonempty ID and OOD score sets"));
    }
    if id.iter().chain(ood).any(|x| !x.is_finite()) {
        return Err(DscError::invalid("metrics need finite scores"));
    }
    Ok(())
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of OOD detections needed to reach `tpr`, i.e. `⌈tpr·n⌉`.
fn required_detections(tpr: f64, n: usize) -> usize {
    // Guard against 0.95·n landing a hair above an integer.
    let k = (tpr * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

/// Fraction of ID scores flagged at the threshold reaching `tpr` on OOD.
///
/// The threshold is the `⌈tpr·n_ood⌉`-th smallest OOD score and detection
/// is inclusive (`score ≤ t`), so the achieved TPR is never below `tpr`.
pub fn fpr_at_tpr(id: &[f64], ood: &[f64], tpr: f64) -> Result<f64> {
    check_nonempty(id, ood)?;
    if !(tpr > 0.0 && tpr < 1.0) {
        return Err(DscError::invalid(format!("tpr must lie in (0, 1), got {tpr}")));
    }
    let ood_sorted = sorted(ood);
    let t = ood_sorted[required_detections(tpr, ood.len()) - 1];
    let flagged = id.iter().filter(|&&s| s <= t).count();
    Ok(flagged as f64 / id.len() as f64)
}

/// Achieved TPR at the threshold [`fpr_at_tpr`] selects.
pub fn achieved_tpr(ood: &[f64], tpr: f64) -> f64 {
    let ood_sorted = sorted(ood);
    let t = ood_sorted[required_detections(tpr, ood.len()) - 1];
    ood.iter().filter(|&&s| s <= t).count() as f64 / ood.len() as f64
}

/// Mann–Whitney AUROC: `P(id > ood) + ½·P(id = ood)`, via average ranks.
pub fn auroc(id: &[f64], ood: &[f64]) -> Result<f64> {
    check_nonempty(id, ood)?;
    let mut all: Vec<(f64, bool)> = id.iter().map(|&s| (s, true)).chain(ood.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_id = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let ids_in_group = all[i..=j].iter().filter(|x| x.1).count();
        rank_sum_id += avg_rank * ids_in_group as f64;
        i = j + 1;
    }
    let (n, m) = (id.len() as f64, ood.len() as f64);
    let u = rank_sum_id - n * (n + 1.0) / 2.0;
    Ok(u / (n * m))
}

/// Average precision `Σ (R_i − R_{i−1})·P_i` over distinct thresholds.
///
/// With `positive_is_high` the positives are expected to score higher;
/// otherwise lower scores count as positive.
pub fn aupr(pos: &[f64], neg: &[f64], positive_is_high: bool) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let orient = |s: f64| if positive_is_high { s } else { -s };
    let mut all: Vec<(f64, bool)> =
        pos.iter().map(|&s| (orient(s), true)).chain(neg.iter().map(|&s| (orient(s), false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

pub fn evaluate(id: &[f64], ood: &[f64]) -> Result<EvalRecord> {
    Ok(EvalRecord {
        fpr_at_95: fpr_at_tpr(id, ood, 0.95)?,
        fpr_at_98: fpr_at_tpr(id, ood, 0.98)?,
        auroc: auroc(id, ood)?,
        aupr_in: aupr(id, ood, true)?,
        aupr_out: aupr(ood, id, false)?,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

/// Empirical Wasserstein-1 distance between two 1-D samples.
///
/// Equal sizes use the mean absolute difference of order statistics;
/// otherwise the quantile functions are integrated exactly over the merged
/// breakpoints `{i/n} ∪ {j/m}`.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    check_nonempty(a, b)?;
    let sa = sorted(a);
    let sb = sorted(b);
    if sa.len() == sb.len() {
        let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / sa.len() as f64);
    }
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u_prev = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // Next breakpoint is min((i+1)/n, (j+1)/m); compare via cross-multiplication.
        let lhs = (i + 1) * m;
        let rhs = (j + 1) * n;
        let u_next = if lhs <= rhs { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        total += (sa[i] - sb[j]).abs() * (u_next - u_prev);
        u_prev = u_next;
        if lhs <= rhs {
            i += 1;
        }
        if rhs <= lhs {
            j += 1;
        }
    }
    Ok(total)
}
