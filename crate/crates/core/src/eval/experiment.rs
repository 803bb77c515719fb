//! Monte Carlo experiment harness: scenario grids, replicated pipeline runs,
//! per-cell aggregation, and resumable on-disk results.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::sector_match_ratio;
use crate::data_gen::{generate_scenario, Dgp, Mechanism, Placement, ScenarioConfig};
use crate::decision::DecisionMode;
use crate::error::{Result, TadError};
use crate::eval::metrics::{auroc, confusion_metrics, MetricsReport};
use crate::output::{csv_bytes, fmt_f64, json_bytes, sha256_hex, write_atomic, write_json};
use crate::pipeline::{run_pipeline, window_truth, PipelineConfig};
use crate::rng::replication_seed;
use crate::scoring::{DiagnosticVector, COMPONENTS};
use crate::stats;

/// Cooperative cancellation shared between the driver and its workers.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// One scenario of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub dgp: Dgp,
    pub mechanism: Option<Mechanism>,
    pub gamma: f64,
    pub placement: Placement,
    pub h: usize,
    pub features: Option<Vec<usize>>,
    pub sectors: Option<usize>,
}

impl Cell {
    pub fn clean(dgp: Dgp, h: usize) -> Self {
        Self {
            dgp,
            mechanism: None,
            gamma: 0.0,
            placement: Placement::Late,
            h,
            features: None,
            sectors: None,
        }
    }

    pub fn injected(dgp: Dgp, mechanism: Mechanism, gamma: f64, placement: Placement, h: usize) -> Self {
        Self {
            mechanism: Some(mechanism),
            gamma,
            placement,
            ..Self::clean(dgp, h)
        }
    }

    pub fn mechanism_name(&self) -> &'static str {
        self.mechanism.map_or("clean", Mechanism::as_str)
    }

    /// Contamination regime label: `clean`, `low` (γ ≤ 0.05) or `high`.
    pub fn regime(&self) -> &'static str {
        if self.mechanism.is_none() || self.gamma == 0.0 {
            "clean"
        } else if self.gamma <= 0.05 + 1e-12 {
            "low"
        } else {
            "high"
        }
    }

    pub fn id(&self) -> String {
        format!(
            "{}/{}/g{}/{}/h{}",
            self.dgp,
            self.mechanism_name(),
            self.gamma,
            self.placement,
            self.h
        )
    }
}

/// Alternative weightings re-aggregated from the same trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub weights: DiagnosticVector,
}

impl Variant {
    /// All weight on component `m` (0-based).
    pub fn single(name: &str, m: usize) -> Self {
        let mut weights = [0.0; COMPONENTS];
        weights[m] = COMPONENTS as f64;
        Self {
            name: name.to_string(),
            weights,
        }
    }
}

pub const ENSEMBLE: &str = "ensemble";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub t: usize,
    pub p: usize,
    pub cells: Vec<Cell>,
    pub replications: usize,
    pub master_seed: u64,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub variants: Vec<Variant>,
}

impl ExperimentSpec {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64)
            .map(|r| replication_seed(self.master_seed, r))
            .collect()
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("spec serializes"))
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        for c in &self.cells {
            if c.h == 0 {
                return Err(TadError::Config(format!("cell {} has zero horizon", c.id())));
            }
        }
        for v in &self.variants {
            crate::scoring::validate_weights(&v.weights)?;
            if v.name == ENSEMBLE {
                return Err(TadError::Config(format!("variant name '{ENSEMBLE}' is reserved")));
            }
        }
        Ok(())
    }
}

/// Outcome of one replication under one weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub replication: usize,
    pub seed: u64,
    pub variant: String,
    /// `None` when the replication failed.
    pub metrics: Option<MetricsReport>,
    pub n_test: usize,
    pub flagged: usize,
    /// Mean sector match ratio over flagged windows; `NaN` when undefined.
    pub match_ratio: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub cell: usize,
    pub replication: usize,
    pub seconds: f64,
}

/// Per-cell, per-variant averages of per-replication metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub variant: String,
    pub runs: usize,
    pub failed: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// Mean over runs with a defined AUROC; `NaN` if none.
    pub auroc: f64,
    pub match_ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Pending,
    Complete,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub id: String,
    pub status: CellStatus,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub name: String,
    pub spec_hash: String,
    pub version: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub complete: bool,
    pub cells: Vec<CellState>,
    pub spec: ExperimentSpec,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CellSummary>,
    pub timings: Vec<Timing>,
    pub statuses: Vec<CellStatus>,
    pub cancelled: bool,
}

impl ExperimentResult {
    /// No replication produced a record.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn failures(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.variant == ENSEMBLE && r.error.is_some())
            .count()
    }

    pub fn summary(&self, cell: usize, variant: &str) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| s.cell == cell && s.variant == variant)
    }

    pub fn ensemble_records(&self, cell: usize) -> impl Iterator<Item = &RunRecord> {
        self.records
            .iter()
            .filter(move |r| r.cell == cell && r.variant == ENSEMBLE)
    }
}

fn failed_records(cell: usize, replication: usize, seed: u64, names: &[String], error: &str) -> Vec<RunRecord> {
    names
        .iter()
        .map(|v| RunRecord {
            cell,
            replication,
            seed,
            variant: v.clone(),
            metrics: None,
            n_test: 0,
            flagged: 0,
            match_ratio: f64::NAN,
            error: Some(error.to_string()),
        })
        .collect()
}

/// Runs the pipeline once and evaluates the main detection plus every variant.
fn run_replication(spec: &ExperimentSpec, cell_idx: usize, replication: usize, seed: u64) -> Result<Vec<RunRecord>> {
    let cell = &spec.cells[cell_idx];
    let scenario = ScenarioConfig {
        dgp: cell.dgp,
        mechanism: cell.mechanism,
        t: spec.t,
        p: spec.p,
        gamma: cell.gamma,
        placement: cell.placement,
        seed,
        features: cell.features.clone(),
        sectors: cell.sectors,
    };
    let (panel, truth) = generate_scenario(&scenario)?;
    let cfg = PipelineConfig {
        h: cell.h,
        ..spec.pipeline.clone()
    };
    let run = run_pipeline(&panel, &cfg, seed)?;
    let labels_truth = window_truth(&truth.time_mask, &run.scores.index, cfg.l);
    let affected = truth.affected_features();
    let record = |variant: &str, pred: &[bool], scores: &[f64], match_ratio: f64| -> Result<RunRecord> {
        let mut metrics = confusion_metrics(pred, &labels_truth)?;
        metrics.auroc = auroc(scores, &labels_truth);
        Ok(RunRecord {
            cell: cell_idx,
            replication,
            seed,
            variant: variant.to_string(),
            metrics: Some(metrics),
            n_test: pred.len(),
            flagged: pred.iter().filter(|&&l| l).count(),
            match_ratio,
            error: None,
        })
    };

    let match_ratio = if affected.is_empty() || run.attribution.is_empty() {
        f64::NAN
    } else {
        let ratios = run
            .attribution
            .iter()
            .map(|r| sector_match_ratio(r, &affected))
            .collect::<Result<Vec<_>>>()?;
        stats::mean(&ratios)
    };
    let mut out = vec![record(ENSEMBLE, &run.detection.labels, &run.scores.smoothed, match_ratio)?];
    for v in &spec.variants {
        let (scores, detection) = run.rescore(v.weights, &cfg.decision)?;
        out.push(record(&v.name, &detection.labels, &scores.smoothed, f64::NAN)?);
    }
    Ok(out)
}

fn mean_defined(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        stats::mean(&v)
    }
}

fn summarize(cell: usize, variant: &str, records: &[RunRecord]) -> CellSummary {
    let rs: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.cell == cell && r.variant == variant)
        .collect();
    let ok: Vec<&MetricsReport> = rs.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let avg = |f: fn(&MetricsReport) -> f64| {
        if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
        }
    };
    CellSummary {
        cell,
        variant: variant.to_string(),
        runs: ok.len(),
        failed: rs.len() - ok.len(),
        precision: avg(|m| m.precision),
        recall: avg(|m| m.recall),
        f1: avg(|m| m.f1),
        fpr: avg(|m| m.fpr),
        auroc: mean_defined(ok.iter().map(|m| m.auroc)),
        match_ratio: mean_defined(rs.iter().filter(|r| r.metrics.is_some()).map(|r| r.match_ratio)),
    }
}

/// Runs every cell in order, replications in parallel. Replications are
/// reduced by index, so results do not depend on scheduling. `on_cell` is
/// called after each completed cell with the partial result.
pub fn run_experiment_with(
    spec: &ExperimentSpec,
    cancel: &CancelToken,
    mut on_cell: impl FnMut(&ExperimentResult) -> Result<()>,
) -> Result<ExperimentResult> {
    spec.validate()?;
    let seeds = spec.seeds();
    let names: Vec<String> = std::iter::once(ENSEMBLE.to_string())
        .chain(spec.variants.iter().map(|v| v.name.clone()))
        .collect();
    let mut result = ExperimentResult {
        statuses: vec![CellStatus::Pending; spec.cells.len()],
        ..ExperimentResult::default()
    };
    for (ci, cell) in spec.cells.iter().enumerate() {
        if cancel.is_cancelled() {
            result.cancelled = true;
            break;
        }
        info!("cell {}/{}: {}", ci + 1, spec.cells.len(), cell.id());
        let outcomes: Vec<Option<(Vec<RunRecord>, f64)>> = seeds
            .par_iter()
            .enumerate()
            .map(|(rep, &seed)| {
                if cancel.is_cancelled() {
                    return None;
                }
                let clock = Instant::now();
                let records = run_replication(spec, ci, rep, seed).unwrap_or_else(|e| {
                    warn!("{} replication {rep} failed: {e}", cell.id());
                    failed_records(ci, rep, seed, &names, &e.to_string())
                });
                Some((records, clock.elapsed().as_secs_f64()))
            })
            .collect();
        if outcomes.iter().any(Option::is_none) {
            result.cancelled = true;
            break;
        }
        for (rep, (records, seconds)) in outcomes.into_iter().flatten().enumerate() {
            result.records.extend(records);
            result.timings.push(Timing {
                cell: ci,
                replication: rep,
                seconds,
            });
        }
        if spec.replications > 0 {
            for name in &names {
                result.summaries.push(summarize(ci, name, &result.records));
            }
        }
        let all_failed = spec.replications > 0 && result.ensemble_records(ci).all(|r| r.error.is_some());
        result.statuses[ci] = if all_failed {
            CellStatus::Failed
        } else {
            CellStatus::Complete
        };
        on_cell(&result)?;
    }
    Ok(result)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment_with(spec, &CancelToken::new(), |_| Ok(()))
}

fn num(v: f64) -> String {
    fmt_f64(v)
}

fn manifest(spec: &ExperimentSpec, result: &ExperimentResult) -> ExperimentManifest {
    ExperimentManifest {
        name: spec.name.clone(),
        spec_hash: spec.content_hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: spec.master_seed,
        seeds: spec.seeds(),
        complete: !result.cancelled && result.statuses.iter().all(|s| *s != CellStatus::Pending),
        cells: spec
            .cells
            .iter()
            .enumerate()
            .map(|(i, c)| CellState {
                id: c.id(),
                status: result.statuses.get(i).copied().unwrap_or(CellStatus::Pending),
                failures: result.ensemble_records(i).filter(|r| r.error.is_some()).count(),
            })
            .collect(),
        spec: spec.clone(),
    }
}

const CELL_COLUMNS: [&str; 6] = ["dgp", "mechanism", "gamma", "regime", "placement", "h"];

fn cell_fields(c: &Cell) -> Vec<String> {
    vec![
        c.dgp.to_string(),
        c.mechanism_name().to_string(),
        num(c.gamma),
        c.regime().to_string(),
        c.placement.to_string(),
        c.h.to_string(),
    ]
}

fn with_cell_columns(rest: &[&'static str]) -> Vec<&'static str> {
    CELL_COLUMNS.iter().chain(rest).copied().collect()
}

/// Per-cell averages, one row per (cell, variant).
pub fn results_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = with_cell_columns(&[
        "variant", "runs", "failed", "precision", "recall", "f1", "fpr", "auroc", "match_ratio",
    ]);
    let rows = result
        .summaries
        .iter()
        .map(|s| {
            let mut row = cell_fields(&spec.cells[s.cell]);
            row.extend([
                s.variant.clone(),
                s.runs.to_string(),
                s.failed.to_string(),
                num(s.precision),
                num(s.recall),
                num(s.f1),
                num(s.fpr),
                num(s.auroc),
                num(s.match_ratio),
            ]);
            row
        })
        .collect();
    (header, rows)
}

/// Per-replication records without wall-clock fields.
pub fn runs_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = with_cell_columns(&[
        "replication", "seed", "variant", "n_test", "flagged", "tp", "fp", "tn", "fn", "precision", "recall", "f1",
        "fpr", "auroc", "match_ratio", "error",
    ]);
    let rows = result
        .records
        .iter()
        .map(|r| {
            let mut row = cell_fields(&spec.cells[r.cell]);
            row.extend([r.replication.to_string(), r.seed.to_string(), r.variant.clone()]);
            row.extend([r.n_test.to_string(), r.flagged.to_string()]);
            match &r.metrics {
                Some(m) => row.extend([
                    m.tp.to_string(),
                    m.fp.to_string(),
                    m.tn.to_string(),
                    m.fn_.to_string(),
                    num(m.precision),
                    num(m.recall),
                    num(m.f1),
                    num(m.fpr),
                    num(m.auroc),
                ]),
                None => row.extend(std::iter::repeat(String::new()).take(9)),
            }
            row.push(num(r.match_ratio));
            row.push(r.error.clone().unwrap_or_default());
            row
        })
        .collect();
    (header, rows)
}

/// Averages of the ensemble rows over cells, per contamination regime, then
/// over all cells. Cells are weighted equally.
pub fn overall_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["regime", "cells", "precision", "recall", "f1", "fpr", "auroc"];
    let ensemble: Vec<&CellSummary> = result
        .summaries
        .iter()
        .filter(|s| s.variant == ENSEMBLE && s.runs > 0)
        .collect();
    let mut regimes: Vec<&str> = Vec::new();
    for s in &ensemble {
        let r = spec.cells[s.cell].regime();
        if !regimes.contains(&r) {
            regimes.push(r);
        }
    }
    let row = |label: &str, group: Vec<&&CellSummary>| {
        let m = |f: fn(&CellSummary) -> f64| mean_defined(group.iter().map(|s| f(s)));
        vec![
            label.to_string(),
            group.len().to_string(),
            num(m(|s| s.precision)),
            num(m(|s| s.recall)),
            num(m(|s| s.f1)),
            num(m(|s| s.fpr)),
            num(m(|s| s.auroc)),
        ]
    };
    let mut rows: Vec<Vec<String>> = regimes
        .iter()
        .map(|r| row(r, ensemble.iter().filter(|s| spec.cells[s.cell].regime() == *r).collect()))
        .collect();
    if !ensemble.is_empty() {
        rows.push(row("overall", ensemble.iter().collect()));
    }
    (header, rows)
}

/// One row per DGP with the mean threshold-mode FPR, then an overall row.
pub fn clean_fpr_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["dgp", "runs", "fpr"];
    let mut rows = Vec::new();
    let mut per_dgp = Vec::new();
    for s in result.summaries.iter().filter(|s| s.variant == ENSEMBLE) {
        rows.push(vec![spec.cells[s.cell].dgp.to_string(), s.runs.to_string(), num(s.fpr)]);
        per_dgp.push(s.fpr);
    }
    if !per_dgp.is_empty() {
        let runs: usize = result
            .summaries
            .iter()
            .filter(|s| s.variant == ENSEMBLE)
            .map(|s| s.runs)
            .sum();
        rows.push(vec!["overall".into(), runs.to_string(), num(mean_defined(per_dgp.into_iter()))]);
    }
    (header, rows)
}

/// Ensemble metrics by mechanism and horizon.
pub fn horizon_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["mechanism", "h", "runs", "precision", "recall", "f1", "fpr", "auroc"];
    let rows = result
        .summaries
        .iter()
        .filter(|s| s.variant == ENSEMBLE)
        .map(|s| {
            let c = &spec.cells[s.cell];
            vec![
                c.mechanism_name().to_string(),
                c.h.to_string(),
                s.runs.to_string(),
                num(s.precision),
                num(s.recall),
                num(s.f1),
                num(s.fpr),
                num(s.auroc),
            ]
        })
        .collect();
    (header, rows)
}

/// Mean sector match ratio per mechanism.
pub fn match_ratio_table(spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header = vec!["mechanism", "runs", "match_ratio", "f1"];
    let rows = result
        .summaries
        .iter()
        .filter(|s| s.variant == ENSEMBLE)
        .map(|s| {
            vec![
                spec.cells[s.cell].mechanism_name().to_string(),
                s.runs.to_string(),
                num(s.match_ratio),
                num(s.f1),
            ]
        })
        .collect();
    (header, rows)
}

/// Which suite-specific table accompanies the generic outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteTable {
    Overall,
    CleanFpr,
    Horizon,
    MatchRatio,
}

impl SuiteTable {
    pub fn file_name(self) -> &'static str {
        match self {
            SuiteTable::Overall => "overall.csv",
            SuiteTable::CleanFpr => "clean_fpr.csv",
            SuiteTable::Horizon => "horizon.csv",
            SuiteTable::MatchRatio => "match_ratio.csv",
        }
    }

    pub fn render(self, spec: &ExperimentSpec, result: &ExperimentResult) -> (Vec<&'static str>, Vec<Vec<String>>) {
        match self {
            SuiteTable::Overall => overall_table(spec, result),
            SuiteTable::CleanFpr => clean_fpr_table(spec, result),
            SuiteTable::Horizon => horizon_table(spec, result),
            SuiteTable::MatchRatio => match_ratio_table(spec, result),
        }
    }
}

fn write_tables(dir: &Path, spec: &ExperimentSpec, result: &ExperimentResult, extra: SuiteTable) -> Result<()> {
    for (name, (header, rows)) in [
        ("results.csv", results_table(spec, result)),
        ("runs.csv", runs_table(spec, result)),
        (extra.file_name(), extra.render(spec, result)),
    ] {
        write_atomic(&dir.join(name), &csv_bytes(&header, &rows)?)?;
    }
    let timing_rows: Vec<Vec<String>> = result
        .timings
        .iter()
        .map(|t| {
            vec![
                spec.cells[t.cell].id(),
                t.replication.to_string(),
                format!("{:.3}", t.seconds),
            ]
        })
        .collect();
    write_atomic(
        &dir.join("timings.csv"),
        &csv_bytes(&["cell", "replication", "seconds"], &timing_rows)?,
    )
}

/// Runs `spec` and keeps `dir` up to date after every cell: the manifest
/// lists each cell as pending, complete or failed, so an interrupted run is
/// visible as such.
pub fn run_experiment_to_dir(
    spec: &ExperimentSpec,
    dir: &Path,
    extra: SuiteTable,
    cancel: &CancelToken,
) -> Result<ExperimentResult> {
    crate::output::ensure_dir(dir)?;
    let empty = ExperimentResult {
        statuses: vec![CellStatus::Pending; spec.cells.len()],
        ..ExperimentResult::default()
    };
    write_json(&dir.join("manifest.json"), &manifest(spec, &empty))?;
    let result = run_experiment_with(spec, cancel, |partial| {
        write_tables(dir, spec, partial, extra)?;
        write_atomic(&dir.join("manifest.json"), &json_bytes(&manifest(spec, partial))?)
    })?;
    write_tables(dir, spec, &result, extra)?;
    write_json(&dir.join("manifest.json"), &manifest(spec, &result))?;
    Ok(result)
}

/// Clean-data false-alarm audit in threshold mode: one cell per DGP.
pub fn clean_fpr_audit(
    dgps: &[Dgp],
    pipeline: &PipelineConfig,
    t: usize,
    p: usize,
    replications: usize,
    master_seed: u64,
) -> Result<(ExperimentSpec, ExperimentResult)> {
    let spec = clean_fpr_spec(dgps, pipeline, t, p, replications, master_seed);
    let result = run_experiment(&spec)?;
    Ok((spec, result))
}

pub fn clean_fpr_spec(
    dgps: &[Dgp],
    pipeline: &PipelineConfig,
    t: usize,
    p: usize,
    replications: usize,
    master_seed: u64,
) -> ExperimentSpec {
    let mut pipeline = pipeline.clone();
    pipeline.decision.mode = DecisionMode::Threshold;
    ExperimentSpec {
        name: "clean_fpr".into(),
        t,
        p,
        cells: dgps.iter().map(|&d| Cell::clean(d, pipeline.h)).collect(),
        replications,
        master_seed,
        pipeline,
        variants: Vec::new(),
    }
}

/// Each cell of `spec` repeated once per horizon, horizon varying fastest.
pub fn horizon_sweep_spec(spec: &ExperimentSpec, horizons: &[usize]) -> ExperimentSpec {
    let cells = spec
        .cells
        .iter()
        .flat_map(|c| horizons.iter().map(move |&h| Cell { h, ..c.clone() }))
        .collect();
    ExperimentSpec {
        cells,
        ..spec.clone()
    }
}

pub fn horizon_sweep(spec: &ExperimentSpec, horizons: &[usize]) -> Result<(ExperimentSpec, ExperimentResult)> {
    let swept = horizon_sweep_spec(spec, horizons);
    let result = run_experiment(&swept)?;
    Ok((swept, result))
}
