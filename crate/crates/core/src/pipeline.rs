//! End-to-end detection run: purification, backbone training, calibration,
//! test scoring, decision, and attribution of flagged windows.

use std::time::Instant;

use log::info;
use ndnum::DenseArray;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    baseline_deviation, factor_contribution, latent_sensitivity, AttributionBaseline, AttributionReport,
    DEFAULT_MASS,
};
use crate::backbone::{Backbone, BackboneConfig, Objective};
use crate::data_gen::Panel;
use crate::decision::{decide, DecisionConfig, DetectionResult};
use crate::error::{Result, TadError};
use crate::purify::{purify, PurifyConfig, PurifyReport};
use crate::scoring::{
    window_outputs, CalibrationStats, DiagnosticVector, LatentBaseline, ScoreSeries, COMPONENTS, EWMA_SPAN,
    KNN_K, LATENT_LAG,
};
use crate::windowing::{build_windows, split_indices, NormStats, SplitIndices, WindowPair};

pub const DEFAULT_L: usize = 36;
pub const DEFAULT_H: usize = 5;
pub const DEFAULT_TRAIN_END: f64 = 0.6;
pub const DEFAULT_CAL_END: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub l: usize,
    pub h: usize,
    /// `T₀ = ⌊train_end·T⌋`.
    pub train_end: f64,
    /// `T₁ = ⌊cal_end·T⌋`.
    pub cal_end: f64,
    /// Widths and training budget; extents are taken from `l`, `h` and the panel.
    pub backbone: BackboneConfig,
    pub purify_enabled: bool,
    pub purify: PurifyConfig,
    pub decision: DecisionConfig,
    pub weights: DiagnosticVector,
    pub knn_k: usize,
    pub latent_lag: usize,
    pub ewma_span: usize,
    pub attribution_mass: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            l: DEFAULT_L,
            h: DEFAULT_H,
            train_end: DEFAULT_TRAIN_END,
            cal_end: DEFAULT_CAL_END,
            backbone: BackboneConfig::new(DEFAULT_L, DEFAULT_H, 1),
            purify_enabled: true,
            purify: PurifyConfig::default(),
            decision: DecisionConfig::default(),
            weights: [1.0; COMPONENTS],
            knn_k: KNN_K,
            latent_lag: LATENT_LAG,
            ewma_span: EWMA_SPAN,
            attribution_mass: DEFAULT_MASS,
        }
    }
}

impl PipelineConfig {
    /// Reduced backbone widths for single-core statistical experiments.
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::desk(DEFAULT_L, DEFAULT_H, 1),
            ..Self::default()
        }
    }

    /// Backbone configuration with extents filled in for a panel of `p` features.
    pub fn backbone_for(&self, p: usize) -> BackboneConfig {
        BackboneConfig {
            l: self.l,
            h: self.h,
            p,
            ..self.backbone.clone()
        }
    }

    /// `(T₀, T₁)` for a panel of `t` rows.
    pub fn split_points(&self, t: usize) -> (usize, usize) {
        let at = |f: f64| (f * t as f64 + 1e-9).floor() as usize;
        (at(self.train_end), at(self.cal_end))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_end > 0.0 && self.train_end < self.cal_end && self.cal_end < 1.0) {
            return Err(TadError::Config(format!(
                "split fractions must satisfy 0 < train_end ({}) < cal_end ({}) < 1",
                self.train_end, self.cal_end
            )));
        }
        if self.ewma_span == 0 || self.knn_k == 0 || self.latent_lag == 0 {
            return Err(TadError::Config("ewma_span, knn_k and latent_lag must be positive".into()));
        }
        if !(self.attribution_mass > 0.0 && self.attribution_mass <= 1.0) {
            return Err(TadError::Config(format!(
                "attribution.mass {} must lie in (0, 1]",
                self.attribution_mass
            )));
        }
        crate::scoring::validate_weights(&self.weights)?;
        self.backbone_for(1).validate()?;
        self.purify.validate()?;
        self.decision.validate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub purify_s: f64,
    pub train_s: f64,
    pub score_s: f64,
    pub attribution_s: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.purify_s + self.train_s + self.score_s + self.attribution_s
    }
}

pub struct PipelineRun {
    pub seed: u64,
    pub t0: usize,
    pub t1: usize,
    pub splits: SplitIndices,
    pub norm: NormStats,
    pub purify: PurifyReport,
    pub train_trace: Vec<f64>,
    pub model: Backbone,
    pub calibration: CalibrationStats,
    /// Raw components of the calibration windows, in time order.
    pub calibration_components: Vec<DiagnosticVector>,
    /// Test-window scores.
    pub scores: ScoreSeries,
    pub detection: DetectionResult,
    pub attribution_baseline: AttributionBaseline,
    pub attribution: Vec<AttributionReport>,
    pub timings: Timings,
}

impl PipelineRun {
    /// Re-aggregates the stored components under different weights and decision
    /// settings without touching the model.
    pub fn rescore(&self, weights: DiagnosticVector, decision: &DecisionConfig) -> Result<(ScoreSeries, DetectionResult)> {
        let cal = CalibrationStats::fit(
            &self.calibration_components,
            self.calibration.latent.clone(),
            weights,
            decision.alpha,
            self.calibration.ewma_span,
        )?;
        let scores = ScoreSeries::build(self.scores.index.clone(), self.scores.raw.clone(), &cal);
        let detection = decide(&scores.smoothed, cal.tau, decision)?;
        Ok((scores, detection))
    }
}

fn position(t: usize, l: usize) -> usize {
    t + 1 - l
}

/// Raw rows `t−L+1..=t` of the panel.
pub fn raw_window(panel: &Panel, t: usize, l: usize) -> DenseArray {
    let p = panel.p();
    let start = t + 1 - l;
    let data = panel.data.data()[start * p..(t + 1) * p].to_vec();
    DenseArray::new(vec![l, p], data).expect("window lies inside the panel")
}

pub fn run_pipeline(panel: &Panel, cfg: &PipelineConfig, seed: u64) -> Result<PipelineRun> {
    cfg.validate()?;
    let (l, h) = (cfg.l, cfg.h);
    let t = panel.t();
    let (t0, t1) = cfg.split_points(t);
    let splits = split_indices(t, l, h, t0, t1)?;
    let norm = NormStats::fit(&panel.data, 0..t0)?;
    let normalized = Panel {
        data: norm.apply(&panel.data),
        ..panel.clone()
    };
    let windows = build_windows(&normalized, l, h)?;
    let bcfg = cfg.backbone_for(panel.p());
    let mut timings = Timings::default();

    let clock = Instant::now();
    let train: Vec<WindowPair> = splits.train.iter().map(|&i| windows[position(i, l)].clone()).collect();
    let (kept, purify_report) = if cfg.purify_enabled {
        purify(&train, &bcfg, &cfg.purify, seed)?
    } else {
        ((0..train.len()).collect(), purify_skipped(&train))
    };
    let purified: Vec<WindowPair> = kept.iter().map(|&i| train[i].clone()).collect();
    timings.purify_s = clock.elapsed().as_secs_f64();
    info!(
        "stage I: kept {} of {} training windows",
        purified.len(),
        train.len()
    );

    let clock = Instant::now();
    let mut model = Backbone::new(bcfg, seed)?;
    let train_trace = model.train(&purified, Objective::Composite)?;
    timings.train_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let first_needed = splits.calibration[0].saturating_sub(cfg.latent_lag).max(l - 1);
    let scored = &windows[position(first_needed, l)..];
    let outputs = window_outputs(&model, scored)?;
    let out_at = |t: usize| &outputs[t - first_needed];
    let prev_z = |t: usize| -> Option<&[f64]> {
        t.checked_sub(cfg.latent_lag)
            .filter(|&s| s >= first_needed)
            .map(|s| out_at(s).z.as_slice())
    };
    let cal_latents: Vec<Vec<f64>> = splits.calibration.iter().map(|&t| out_at(t).z.clone()).collect();
    let cal_prev: Vec<Option<Vec<f64>>> = splits
        .calibration
        .iter()
        .map(|&t| prev_z(t).map(<[f64]>::to_vec))
        .collect();
    let latent = LatentBaseline::fit(
        &cal_latents,
        &splits.calibration,
        &cal_prev,
        cfg.knn_k,
        cfg.latent_lag,
        l,
    )?;
    let cal_components: Vec<DiagnosticVector> = splits
        .calibration
        .par_iter()
        .map(|&t| latent.components(out_at(t), prev_z(t), true))
        .collect::<Result<_>>()?;
    let calibration = CalibrationStats::fit(
        &cal_components,
        latent,
        cfg.weights,
        cfg.decision.alpha,
        cfg.ewma_span,
    )?;
    let test_raw: Vec<DiagnosticVector> = splits
        .test
        .iter()
        .map(|&t| calibration.latent.components(out_at(t), prev_z(t), false))
        .collect::<Result<_>>()?;
    let scores = ScoreSeries::build(splits.test.clone(), test_raw, &calibration);
    let detection = decide(&scores.smoothed, calibration.tau, &cfg.decision)?;
    timings.score_s = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let cal_rows = splits.calibration[0] + 1 - l..splits.calibration[splits.calibration.len() - 1] + 1;
    let attribution_baseline = AttributionBaseline::fit(&panel.data, cal_rows, calibration.latent.mu_z.clone())?;
    let flagged: Vec<usize> = scores
        .index
        .iter()
        .zip(&detection.labels)
        .filter(|(_, &f)| f)
        .map(|(&t, _)| t)
        .collect();
    let attribution = flagged
        .par_iter()
        .map(|&t| {
            let delta = baseline_deviation(&raw_window(panel, t, l), &attribution_baseline);
            let gamma = latent_sensitivity(&model, &windows[position(t, l)].x, &attribution_baseline.mu_z)?;
            factor_contribution(t, delta, gamma, cfg.attribution_mass, true)
        })
        .collect::<Result<Vec<_>>>()?;
    timings.attribution_s = clock.elapsed().as_secs_f64();

    Ok(PipelineRun {
        seed,
        t0,
        t1,
        splits,
        norm,
        purify: purify_report,
        train_trace,
        model,
        calibration,
        calibration_components: cal_components,
        scores,
        detection,
        attribution_baseline,
        attribution,
        timings,
    })
}

fn purify_skipped(train: &[WindowPair]) -> PurifyReport {
    PurifyReport {
        initial: train.len(),
        skipped: true,
        iterations: Vec::new(),
        retained: train.iter().map(|w| w.t).collect(),
        removed: Vec::new(),
        cap_reached: false,
    }
}

/// A window is positive when its input rows `t−L+1..=t` touch the anomaly mask.
pub fn window_truth(time_mask: &[bool], index: &[usize], l: usize) -> Vec<bool> {
    index
        .iter()
        .map(|&t| time_mask[t + 1 - l..=t].iter().any(|&m| m))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_points_floor() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.split_points(500), (300, 400));
        assert_eq!(cfg.split_points(101), (60, 80));
    }

    #[test]
    fn truth_uses_input_span() {
        let mut mask = vec![false; 20];
        mask[10] = true;
        assert_eq!(window_truth(&mask, &[8, 9, 10, 12, 13, 14], 4), vec![false, false, true, true, true, false]);
    }
}
