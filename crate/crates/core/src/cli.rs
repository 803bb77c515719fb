//! Command-line entry points: simulate, detect, attribute, benchmark and
//! validate-recipes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::attribution::{
    baseline_deviation, factor_contribution, latent_sensitivity, AttributionBaseline, AttributionReport,
};
use crate::backbone::{from_bytes, to_bytes};
use crate::config::RunConfig;
use crate::data_gen::{generate_scenario, load_panel_csv, panel_csv_bytes, AnomalyGroundTruth, Panel};
use crate::decision::{DecisionMode, DetectionResult};
use crate::error::{Result, TadError};
use crate::eval::experiment::{run_experiment_to_dir, CancelToken};
use crate::eval::suites::suite_spec;
use crate::output::{csv_bytes, ensure_dir, fmt_f64, json_bytes, sha256_hex, ArtifactSet};
use crate::pipeline::{raw_window, run_pipeline, PipelineRun};
use crate::purify::PurifyReport;
use crate::recipes::{validate_recipes, RecipeScale};
use crate::windowing::NormStats;

pub const WORKERS_ENV: &str = "REGEN_TAD_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "regen-tad", version, about = "Generative ensemble anomaly detection for multivariate panels")]
pub struct Cli {
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat TOML configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured decision mode.
    #[arg(long, value_parser = ["rank", "threshold"])]
    pub mode: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a panel and its ground truth.
    Simulate(Common),
    /// Run the full pipeline on a panel (simulated from the config when no
    /// panel is given).
    Detect {
        #[command(flatten)]
        common: Common,
        /// Panel CSV with a header row.
        #[arg(long)]
        panel: Option<PathBuf>,
    },
    /// Recompute attribution from a saved detect run.
    Attribute {
        /// Output directory of an earlier `detect`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Panel CSV; required when the run did not simulate its panel.
        #[arg(long)]
        panel: Option<PathBuf>,
        /// Cumulative mass for subset selection; defaults to the run's value.
        #[arg(long)]
        mass: Option<f64>,
    },
    /// Run the configured experiment suites.
    Benchmark(Common),
    /// Check every recipe, optionally executing it.
    ValidateRecipes {
        #[arg(long, default_value = "recipes")]
        recipes: PathBuf,
        /// Execute recipes at this scale; without it only the layout is checked.
        #[arg(long, value_parser = ["smoke", "full"])]
        run: Option<String>,
        /// Scratch directory for executed recipes.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.scenario.seed = seed;
    }
    if let Some(mode) = &common.mode {
        cfg.pipeline.decision.mode = mode.parse()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize, Deserialize)]
struct SimulateManifest {
    command: String,
    version: String,
    seed: u64,
    panel_sha256: String,
    rows: usize,
    features: usize,
    config: RunConfig,
}

pub fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let (panel, truth) = generate_scenario(&cfg.scenario)?;
    let csv = panel_csv_bytes(&panel)?;
    let manifest = SimulateManifest {
        command: "simulate".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        panel_sha256: sha256_hex(&csv),
        rows: panel.t(),
        features: panel.p(),
        config: cfg,
    };
    ensure_dir(&common.out)?;
    let mut set = ArtifactSet::new();
    set.add(common.out.join("panel.csv"), csv);
    set.add(common.out.join("truth.json"), json_bytes(&truth)?);
    set.add(common.out.join("manifest.json"), json_bytes(&manifest)?);
    set.commit()
}

/// Where the detect run's panel came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelSource {
    Simulated,
    File(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub panel_source: PanelSource,
    pub panel_sha256: String,
    pub config: RunConfig,
    pub calibration_hash: String,
    pub tau: f64,
    pub medians: Vec<f64>,
    pub iqrs: Vec<f64>,
    pub splits: SplitSummary,
    pub purify: PurifyReport,
    pub train_loss: Vec<f64>,
    pub detection: DetectionSummary,
    pub norm: NormStats,
    pub attribution_baseline: AttributionBaseline,
    pub checkpoint_sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitSummary {
    pub t0: usize,
    pub t1: usize,
    pub train: (usize, usize),
    pub calibration: (usize, usize),
    pub test: (usize, usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub mode: DecisionMode,
    pub alpha: f64,
    pub cutoff: f64,
    pub test_windows: usize,
    pub flagged: usize,
    pub flagged_before_postprocess: usize,
    pub removed_by_filter: usize,
    pub added_by_dilation: usize,
}

fn span(v: &[usize]) -> (usize, usize) {
    (v[0], v[v.len() - 1])
}

/// One factor of a flagged window in `attribution.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorEntry {
    pub factor: String,
    pub delta: f64,
    pub gamma: f64,
    pub contribution: f64,
    pub rank: usize,
    pub selected: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindowAttribution {
    pub index: usize,
    pub mass: f64,
    pub degenerate: bool,
    pub selected: Vec<String>,
    pub factors: Vec<FactorEntry>,
}

pub fn attribution_document(reports: &[AttributionReport], names: &[String]) -> Vec<WindowAttribution> {
    reports
        .iter()
        .map(|r| {
            let mut rank = vec![0; r.ranking.len()];
            for (pos, &j) in r.ranking.iter().enumerate() {
                rank[j] = pos + 1;
            }
            WindowAttribution {
                index: r.t,
                mass: r.mass,
                degenerate: r.degenerate,
                selected: r.selected.iter().map(|&j| names[j].clone()).collect(),
                factors: (0..r.delta.len())
                    .map(|j| FactorEntry {
                        factor: names[j].clone(),
                        delta: r.delta[j],
                        gamma: r.gamma[j],
                        contribution: r.contribution[j],
                        rank: rank[j],
                        selected: r.selected.contains(&j),
                    })
                    .collect(),
            }
        })
        .collect()
}

fn detections_csv(run: &PipelineRun) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = run
        .scores
        .index
        .iter()
        .zip(&run.scores.smoothed)
        .zip(&run.detection.labels)
        .map(|((t, s), l)| vec![t.to_string(), fmt_f64(*s), u8::from(*l).to_string()])
        .collect();
    csv_bytes(&["index", "score", "label"], &rows)
}

fn detection_summary(d: &DetectionResult, alpha: f64) -> DetectionSummary {
    DetectionSummary {
        mode: d.mode,
        alpha,
        cutoff: d.cutoff,
        test_windows: d.labels.len(),
        flagged: d.flagged(),
        flagged_before_postprocess: d.flagged_before_postprocess,
        removed_by_filter: d.removed_by_filter,
        added_by_dilation: d.added_by_dilation,
    }
}

fn obtain_panel(cfg: &RunConfig, path: Option<&Path>) -> Result<(Panel, PanelSource, Option<AnomalyGroundTruth>)> {
    match path {
        Some(p) => Ok((load_panel_csv(p, true)?, PanelSource::File(p.display().to_string()), None)),
        None => {
            let (panel, truth) = generate_scenario(&cfg.scenario)?;
            Ok((panel, PanelSource::Simulated, Some(truth)))
        }
    }
}

pub fn cmd_detect(common: &Common, panel_path: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let (panel, source, _) = obtain_panel(&cfg, panel_path)?;
    let run = run_pipeline(&panel, &cfg.pipeline, cfg.seed)?;
    info!(
        "flagged {} of {} test windows in {:.1}s",
        run.detection.flagged(),
        run.detection.labels.len(),
        run.timings.total()
    );
    let checkpoint = to_bytes(&run.model);
    let manifest = DetectManifest {
        command: "detect".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        panel_source: source,
        panel_sha256: sha256_hex(&panel_csv_bytes(&panel)?),
        calibration_hash: run.calibration.content_hash(),
        tau: run.calibration.tau,
        medians: run.calibration.medians.to_vec(),
        iqrs: run.calibration.iqrs.to_vec(),
        splits: SplitSummary {
            t0: run.t0,
            t1: run.t1,
            train: span(&run.splits.train),
            calibration: span(&run.splits.calibration),
            test: span(&run.splits.test),
        },
        purify: run.purify.clone(),
        train_loss: run.train_trace.clone(),
        detection: detection_summary(&run.detection, cfg.pipeline.decision.alpha),
        norm: run.norm.clone(),
        attribution_baseline: run.attribution_baseline.clone(),
        checkpoint_sha256: sha256_hex(&checkpoint),
        config: cfg,
    };
    ensure_dir(&common.out)?;
    let mut set = ArtifactSet::new();
    set.add(
        common.out.join("scores.csv"),
        csv_bytes(&crate::scoring::ScoreSeries::csv_header(), &run.scores.csv_rows())?,
    );
    set.add(common.out.join("detections.csv"), detections_csv(&run)?);
    set.add(
        common.out.join("attribution.json"),
        json_bytes(&attribution_document(&run.attribution, &panel.names))?,
    );
    set.add(common.out.join("model.ckpt"), checkpoint);
    set.add(common.out.join("manifest.json"), json_bytes(&manifest)?);
    set.commit()
}

fn read_flagged(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| TadError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TadError::Data(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        if field(2) == "1" {
            out.push(
                field(0)
                    .parse()
                    .map_err(|_| TadError::Data(format!("{}: bad index '{}'", path.display(), field(0))))?,
            );
        }
    }
    Ok(out)
}

pub fn cmd_attribute(run_dir: &Path, out: &Path, panel_path: Option<&Path>, mass: Option<f64>) -> Result<()> {
    let manifest_path = run_dir.join("manifest.json");
    let text = std::fs::read(&manifest_path).map_err(|e| TadError::io(&manifest_path, e))?;
    let manifest: DetectManifest = serde_json::from_slice(&text)
        .map_err(|e| TadError::Data(format!("{}: {e}", manifest_path.display())))?;
    let ckpt_path = run_dir.join("model.ckpt");
    let ckpt = std::fs::read(&ckpt_path).map_err(|e| TadError::io(&ckpt_path, e))?;
    if sha256_hex(&ckpt) != manifest.checkpoint_sha256 {
        return Err(TadError::Data("model.ckpt does not match the run manifest".into()));
    }
    let model = from_bytes(&ckpt)?;
    let cfg = &manifest.config;
    let panel = match (panel_path, &manifest.panel_source) {
        (Some(p), _) => load_panel_csv(p, true)?,
        (None, PanelSource::Simulated) => generate_scenario(&cfg.scenario)?.0,
        (None, PanelSource::File(f)) => {
            return Err(TadError::Config(format!("the run read its panel from {f}; pass --panel")))
        }
    };
    if sha256_hex(&panel_csv_bytes(&panel)?) != manifest.panel_sha256 {
        return Err(TadError::Data("panel does not match the run manifest".into()));
    }
    let mass = mass.unwrap_or(cfg.pipeline.attribution_mass);
    if !(mass > 0.0 && mass <= 1.0) {
        return Err(TadError::Config(format!("mass {mass} must lie in (0, 1]")));
    }
    let l = cfg.pipeline.l;
    let normalized = manifest.norm.apply(&panel.data);
    let base = &manifest.attribution_baseline;
    let flagged = read_flagged(&run_dir.join("detections.csv"))?;
    let reports = flagged
        .iter()
        .map(|&t| {
            if t + 1 < l || t >= panel.t() {
                return Err(TadError::Data(format!("flagged index {t} outside the panel")));
            }
            let delta = baseline_deviation(&raw_window(&panel, t, l), base);
            let x = raw_window(
                &Panel {
                    data: normalized.clone(),
                    ..panel.clone()
                },
                t,
                l,
            );
            let gamma = latent_sensitivity(&model, &x, &base.mu_z)?;
            factor_contribution(t, delta, gamma, mass, true)
        })
        .collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    let mut set = ArtifactSet::new();
    set.add(
        out.join("attribution.json"),
        json_bytes(&attribution_document(&reports, &panel.names))?,
    );
    set.commit()
}

pub fn cmd_benchmark(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    ensure_dir(&common.out)?;
    let opts = cfg.suite_options();
    let cancel = CancelToken::new();
    let mut failures = 0;
    for &suite in &cfg.benchmark.suites {
        let spec = suite_spec(suite, &opts)?;
        info!("suite {suite}: {} cells x {} replications", spec.cells.len(), spec.replications);
        let result = run_experiment_to_dir(&spec, &common.out.join(suite.as_str()), suite.table(), &cancel)?;
        failures += result.failures();
    }
    if failures > 0 {
        log::warn!("{failures} replications failed; see runs.csv");
    }
    Ok(())
}

fn cmd_validate_recipes(dir: &Path, run: Option<&str>, out: Option<&Path>) -> Result<()> {
    let scale = match run {
        None => None,
        Some("full") => Some(RecipeScale::Full),
        Some(_) => Some(RecipeScale::Smoke),
    };
    let scratch;
    let work = match out {
        Some(p) => p.to_path_buf(),
        None => {
            scratch = tempfile::tempdir().map_err(|e| TadError::Other(format!("temporary directory: {e}")))?;
            scratch.path().to_path_buf()
        }
    };
    let reports = validate_recipes(dir, scale, &work)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!("{} {}", if r.ok() { "PASS" } else { "FAIL" }, r.name);
        for p in &r.problems {
            println!("    {p}");
        }
        if !r.ok() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(TadError::Other(format!("recipes failed: {}", failed.join(", "))))
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(TadError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| TadError::Other(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Detect { common, panel } => cmd_detect(common, panel.as_deref()),
        Command::Attribute { run, out, panel, mass } => cmd_attribute(run, out, panel.as_deref(), *mass),
        Command::Benchmark(c) => cmd_benchmark(c),
        Command::ValidateRecipes { recipes, run, out } => {
            cmd_validate_recipes(recipes, run.as_deref(), out.as_deref())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
