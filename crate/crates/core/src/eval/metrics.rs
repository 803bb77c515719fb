use serde::{Deserialize, Serialize};

use crate::error::{Result, TadError};

/// Window-level detection quality of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// `NaN` when the truth has a single class.
    pub auroc: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Confusion counts and the derived rates. Empty denominators give 0.
pub fn confusion_metrics(pred: &[bool], truth: &[bool]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(TadError::Other(format!(
            "{} predictions for {} truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut m = MetricsReport {
        auroc: f64::NAN,
        ..MetricsReport::default()
    };
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn_);
    m.f1 = if m.precision + m.recall > 0.0 {
        2.0 * m.precision * m.recall / (m.precision + m.recall)
    } else {
        0.0
    };
    m.fpr = ratio(m.fp, m.fp + m.tn);
    Ok(m)
}

/// Rank-sum AUROC with average ranks for ties; `NaN` for single-class truth.
///
/// The statistic is accumulated in doubled integer ranks so the result is the
/// exact ratio `(2·wins + ties) / (2·n⁺·n⁻)`.
pub fn auroc(scores: &[f64], truth: &[bool]) -> f64 {
    assert_eq!(scores.len(), truth.len(), "auroc needs one label per score");
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum over positives of doubled average rank (ranks start at 1).
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let doubled_rank = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if truth[k] {
                rank_sum2 += doubled_rank;
            }
        }
        i = j + 1;
    }
    let n_pos = n_pos as u128;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    u2 as f64 / (2 * n_pos * n_neg as u128) as f64
}
