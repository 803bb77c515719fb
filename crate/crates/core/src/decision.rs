//! Rank and threshold decision rules plus run-length filtering and dilation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TadError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    Rank,
    Threshold,
}

impl FromStr for DecisionMode {
    type Err = TadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(Self::Rank),
            "threshold" => Ok(Self::Threshold),
            other => Err(TadError::Config(format!("unknown decision mode '{other}' (rank|threshold)"))),
        }
    }
}

impl fmt::Display for DecisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rank => "rank",
            Self::Threshold => "threshold",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub mode: DecisionMode,
    pub alpha: f64,
    /// Runs shorter than this are removed; 1 disables the filter.
    pub min_run: usize,
    /// Surviving runs grow by this many windows on each side.
    pub dilation: usize,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            mode: DecisionMode::Rank,
            alpha: 0.05,
            min_run: 1,
            dilation: 0,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(TadError::Config(format!("decision.alpha {} must lie in (0, 1)", self.alpha)));
        }
        if self.min_run == 0 {
            return Err(TadError::Config("decision.min_run must be at least 1".into()));
        }
        Ok(())
    }
}

/// `⌈αN⌉`, treating products within 1e-9 of an integer as that integer.
pub fn flag_count(alpha: f64, n: usize) -> usize {
    let x = alpha * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

/// Flags the `⌈αN⌉` largest scores; ties at the cutoff go to the earlier index.
pub fn rank_decision(scores: &[f64], alpha: f64) -> Vec<bool> {
    let k = flag_count(alpha, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![false; scores.len()];
    for &i in &order[..k] {
        labels[i] = true;
    }
    labels
}

/// `score > τ`.
pub fn threshold_decision(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > tau).collect()
}

fn runs(labels: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] {
            let start = i;
            while i < labels.len() && labels[i] {
                i += 1;
            }
            out.push((start, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Removes runs shorter than `min_run`, then dilates each surviving run.
pub fn postprocess(labels: &[bool], min_run: usize, dilation: usize) -> Vec<bool> {
    let mut out = vec![false; labels.len()];
    for (a, b) in runs(labels).into_iter().filter(|(a, b)| b - a >= min_run) {
        let lo = a.saturating_sub(dilation);
        let hi = (b + dilation).min(labels.len());
        out[lo..hi].iter_mut().for_each(|v| *v = true);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub labels: Vec<bool>,
    pub mode: DecisionMode,
    /// Threshold in threshold mode; smallest flagged score in rank mode.
    pub cutoff: f64,
    pub flagged_before_postprocess: usize,
    pub removed_by_filter: usize,
    pub added_by_dilation: usize,
}

impl DetectionResult {
    pub fn flagged(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Applies the configured rule to smoothed scores. `tau` is used in threshold mode.
pub fn decide(scores: &[f64], tau: f64, cfg: &DecisionConfig) -> Result<DetectionResult> {
    cfg.validate()?;
    let raw = match cfg.mode {
        DecisionMode::Rank => rank_decision(scores, cfg.alpha),
        DecisionMode::Threshold => threshold_decision(scores, tau),
    };
    let cutoff = match cfg.mode {
        DecisionMode::Threshold => tau,
        DecisionMode::Rank => scores
            .iter()
            .zip(&raw)
            .filter(|(_, &l)| l)
            .map(|(&s, _)| s)
            .fold(f64::INFINITY, f64::min),
    };
    let filtered = postprocess(&raw, cfg.min_run, 0);
    let labels = postprocess(&filtered, 1, cfg.dilation);
    let count = |v: &[bool]| v.iter().filter(|&&l| l).count();
    Ok(DetectionResult {
        mode: cfg.mode,
        cutoff,
        flagged_before_postprocess: count(&raw),
        removed_by_filter: count(&raw) - count(&filtered),
        added_by_dilation: count(&labels) - count(&filtered),
        labels,
    })
}
