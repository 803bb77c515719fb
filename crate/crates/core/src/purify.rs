//! Stage I: iterative reconstruction-error trimming of the training windows.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, Objective};
use crate::error::{Result, TadError};
use crate::stats;
use crate::windowing::WindowPair;

/// Below this many training windows purification is skipped.
pub const MIN_PURIFY_WINDOWS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurifyConfig {
    /// Windows with reconstruction error at or above this quantile are removed.
    pub trim_quantile: f64,
    /// Cap on the cumulative removed fraction of the initial set.
    pub max_removal: f64,
    pub max_iterations: usize,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self {
            trim_quantile: 0.97,
            max_removal: 0.30,
            max_iterations: 3,
        }
    }
}

impl PurifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.trim_quantile > 0.5 && self.trim_quantile < 1.0) {
            return Err(TadError::Config(format!(
                "purify.trim_quantile {} must lie in (0.5, 1)",
                self.trim_quantile
            )));
        }
        if !(self.max_removal > 0.0 && self.max_removal < 0.5) {
            return Err(TadError::Config(format!(
                "purify.max_removal {} must lie in (0, 0.5)",
                self.max_removal
            )));
        }
        Ok(())
    }

    /// Largest number of windows that may be removed from `n` initial windows.
    pub fn removal_cap(&self, n: usize) -> usize {
        (self.max_removal * n as f64 + 1e-9).floor() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurifyIteration {
    /// Window indices (`t`) removed in this iteration.
    pub removed: Vec<usize>,
    pub threshold: f64,
    /// Error quantiles at 0.5, 0.9 and the trim quantile, plus the maximum.
    pub error_quantiles: [f64; 4],
    /// The cumulative cap truncated this iteration's removal.
    pub capped: bool,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurifyReport {
    pub initial: usize,
    pub skipped: bool,
    pub iterations: Vec<PurifyIteration>,
    /// Retained window indices (`t`), ascending.
    pub retained: Vec<usize>,
    /// All removed window indices (`t`), ascending.
    pub removed: Vec<usize>,
    pub cap_reached: bool,
}

impl PurifyReport {
    pub fn removed_fraction(&self) -> f64 {
        if self.initial == 0 {
            0.0
        } else {
            self.removed.len() as f64 / self.initial as f64
        }
    }
}

/// Squared reconstruction error `‖X − X̂‖²_F` of every window under `model`.
pub fn reconstruction_errors(model: &Backbone, windows: &[&WindowPair]) -> Result<Vec<f64>> {
    windows
        .par_iter()
        .map_init(
            || model.evaluator(),
            |ev, w| {
                let (_, x_hat) = ev.reconstruct(&w.x)?;
                Ok(w.x.zip_map(&x_hat, |a, b| a - b)?.sum_sq())
            },
        )
        .collect()
}

/// Returns positions into `windows` that survive trimming, ascending.
///
/// Iteration `k` (from 1) trains a fresh reconstruction-only model seeded with
/// `seed ^ k` on the current set.
pub fn purify(
    windows: &[WindowPair],
    backbone: &BackboneConfig,
    cfg: &PurifyConfig,
    seed: u64,
) -> Result<(Vec<usize>, PurifyReport)> {
    cfg.validate()?;
    let n0 = windows.len();
    let mut report = PurifyReport {
        initial: n0,
        skipped: false,
        iterations: Vec::new(),
        retained: windows.iter().map(|w| w.t).collect(),
        removed: Vec::new(),
        cap_reached: false,
    };
    if n0 < MIN_PURIFY_WINDOWS {
        warn!("purification skipped: {n0} training windows (< {MIN_PURIFY_WINDOWS})");
        report.skipped = true;
        return Ok(((0..n0).collect(), report));
    }
    let cap = cfg.removal_cap(n0);
    let mut current: Vec<usize> = (0..n0).collect();
    let mut removed_total = 0usize;
    for k in 1..=cfg.max_iterations {
        let budget = cap - removed_total;
        if budget == 0 {
            report.cap_reached = true;
            break;
        }
        let subset: Vec<WindowPair> = current.iter().map(|&i| windows[i].clone()).collect();
        let mut model = Backbone::new(backbone.clone(), seed ^ k as u64)?;
        let trace = model.train(&subset, Objective::ReconOnly)?;
        let refs: Vec<&WindowPair> = subset.iter().collect();
        let errors = reconstruction_errors(&model, &refs)?;
        let threshold = stats::quantile(&errors, cfg.trim_quantile);
        let mut candidates: Vec<usize> = (0..current.len()).filter(|&i| errors[i] >= threshold).collect();
        let capped = candidates.len() > budget;
        if capped {
            candidates.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
            candidates.truncate(budget);
            candidates.sort_unstable();
            report.cap_reached = true;
        }
        let dropped: Vec<usize> = candidates.iter().map(|&i| current[i]).collect();
        report.iterations.push(PurifyIteration {
            removed: dropped.iter().map(|&i| windows[i].t).collect(),
            threshold,
            error_quantiles: [
                stats::quantile(&errors, 0.5),
                stats::quantile(&errors, 0.9),
                threshold,
                errors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ],
            capped,
            final_loss: trace.last().copied().unwrap_or(f64::NAN),
        });
        if dropped.is_empty() {
            break;
        }
        removed_total += dropped.len();
        current.retain(|i| dropped.binary_search(i).is_err());
    }
    report.retained = current.iter().map(|&i| windows[i].t).collect();
    let mut removed: Vec<usize> = report.iterations.iter().flat_map(|it| it.removed.iter().copied()).collect();
    removed.sort_unstable();
    report.removed = removed;
    Ok((current, report))
}
