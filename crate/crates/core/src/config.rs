//! Run configuration: one flat TOML document of dotted keys.
//!
//! ```toml
//! seed = 7
//! scenario.dgp = "iid-gaussian"
//! backbone.preset = "desk"
//! decision.mode = "threshold"
//! ```
//!
//! Every key is optional; unknown keys are rejected by name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::backbone::BackboneConfig;
use crate::data_gen::{Dgp, Mechanism, Placement, ScenarioConfig};
use crate::error::{Result, TadError};
use crate::eval::suites::{Suite, SuiteOptions};
use crate::pipeline::PipelineConfig;
use crate::scoring::COMPONENTS;

/// Every accepted key, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "scenario.dgp",
    "scenario.mechanism",
    "scenario.t",
    "scenario.p",
    "scenario.gamma",
    "scenario.placement",
    "scenario.features",
    "scenario.sectors",
    "window.l",
    "window.h",
    "split.train_end",
    "split.cal_end",
    "backbone.preset",
    "backbone.conv_layers",
    "backbone.conv_filters",
    "backbone.conv_width",
    "backbone.embed_dim",
    "backbone.heads",
    "backbone.ff_width",
    "backbone.dropout",
    "backbone.lstm_hidden",
    "backbone.latent_dim",
    "backbone.refine_hidden",
    "backbone.loss_weights",
    "backbone.latent_penalty",
    "backbone.lr",
    "backbone.epochs",
    "backbone.batch_size",
    "purify.enabled",
    "purify.trim_quantile",
    "purify.max_removal",
    "purify.max_iterations",
    "scoring.weights",
    "scoring.knn_k",
    "scoring.latent_lag",
    "scoring.ewma_span",
    "decision.mode",
    "decision.alpha",
    "decision.min_run",
    "decision.dilation",
    "attribution.mass",
    "benchmark.suites",
    "benchmark.replications",
    "benchmark.t",
    "benchmark.p",
    "benchmark.mechanisms",
    "benchmark.gammas",
    "benchmark.placements",
    "benchmark.horizons",
    "benchmark.dgps",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub suites: Vec<Suite>,
    pub replications: usize,
    pub t: usize,
    pub p: usize,
    pub mechanisms: Vec<Mechanism>,
    pub gammas: Vec<f64>,
    pub placements: Vec<Placement>,
    pub horizons: Vec<usize>,
    pub dgps: Vec<Dgp>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        let o = SuiteOptions::default();
        Self {
            suites: Suite::ALL.to_vec(),
            replications: o.replications,
            t: o.t,
            p: o.p,
            mechanisms: Vec::new(),
            gammas: Vec::new(),
            placements: Vec::new(),
            horizons: Vec::new(),
            dgps: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub pipeline: PipelineConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioConfig::new(Dgp::IidGaussian, 500, 20, 0),
            pipeline: PipelineConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn bad(key: &str, want: &str, v: &Value) -> TadError {
    TadError::Config(format!("key '{key}': expected {want}, got {v}"))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_integer()
        .filter(|i| *i >= 0)
        .map(|i| i as usize)
        .ok_or_else(|| bad(key, "a non-negative integer", v))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| bad(key, "a number", v))
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| bad(key, "a string", v))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| bad(key, "a boolean", v))
}

fn as_list<T>(key: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T>) -> Result<Vec<T>> {
    v.as_array()
        .ok_or_else(|| bad(key, "an array", v))?
        .iter()
        .map(|x| item(key, x))
        .collect()
}

fn parse_str<T: std::str::FromStr<Err = TadError>>(key: &str, v: &Value) -> Result<T> {
    as_str(key, v)?
        .parse()
        .map_err(|e: TadError| TadError::Config(format!("key '{key}': {e}")))
}

fn fixed<const N: usize>(key: &str, v: &Value) -> Result<[f64; N]> {
    let list = as_list(key, v, as_f64)?;
    list.try_into()
        .map_err(|l: Vec<f64>| TadError::Config(format!("key '{key}': expected {N} numbers, got {}", l.len())))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_layers(&[text])
    }

    /// Later documents override earlier ones key by key.
    pub fn from_layers(layers: &[&str]) -> Result<Self> {
        let mut entries: Vec<(String, Value)> = Vec::new();
        for text in layers {
            let table: toml::Table = text
                .parse()
                .map_err(|e: toml::de::Error| TadError::Config(format!("malformed config: {}", e.message())))?;
            let mut layer = Vec::new();
            flatten("", &table, &mut layer);
            for (k, v) in layer {
                match entries.iter_mut().find(|(e, _)| *e == k) {
                    Some(slot) => slot.1 = v,
                    None => entries.push((k, v)),
                }
            }
        }
        let mut cfg = RunConfig::default();
        // The preset replaces every backbone width, so it goes first.
        if let Some((k, v)) = entries.iter().find(|(k, _)| k == "backbone.preset") {
            cfg.pipeline.backbone = match as_str(k, v)? {
                "full" => BackboneConfig::new(cfg.pipeline.l, cfg.pipeline.h, 1),
                "desk" => BackboneConfig::desk(cfg.pipeline.l, cfg.pipeline.h, 1),
                other => {
                    return Err(TadError::Config(format!(
                        "key 'backbone.preset': unknown preset '{other}' (full|desk)"
                    )))
                }
            };
        }
        for (key, v) in &entries {
            cfg.apply(key, v)?;
        }
        cfg.scenario.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TadError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn apply(&mut self, key: &str, v: &Value) -> Result<()> {
        let sc = &mut self.scenario;
        let pl = &mut self.pipeline;
        let bb = &mut pl.backbone;
        let bm = &mut self.benchmark;
        match key {
            "seed" => {
                self.seed = v
                    .as_integer()
                    .filter(|i| *i >= 0)
                    .ok_or_else(|| bad(key, "a non-negative integer", v))? as u64
            }
            "scenario.dgp" => sc.dgp = parse_str(key, v)?,
            "scenario.mechanism" => {
                sc.mechanism = match as_str(key, v)? {
                    "none" => None,
                    _ => Some(parse_str(key, v)?),
                }
            }
            "scenario.t" => sc.t = as_usize(key, v)?,
            "scenario.p" => sc.p = as_usize(key, v)?,
            "scenario.gamma" => sc.gamma = as_f64(key, v)?,
            "scenario.placement" => sc.placement = parse_str(key, v)?,
            "scenario.features" => sc.features = Some(as_list(key, v, as_usize)?),
            "scenario.sectors" => sc.sectors = Some(as_usize(key, v)?),
            "window.l" => pl.l = as_usize(key, v)?,
            "window.h" => pl.h = as_usize(key, v)?,
            "split.train_end" => pl.train_end = as_f64(key, v)?,
            "split.cal_end" => pl.cal_end = as_f64(key, v)?,
            "backbone.preset" => {}
            "backbone.conv_layers" => bb.conv_layers = as_usize(key, v)?,
            "backbone.conv_filters" => bb.conv_filters = as_usize(key, v)?,
            "backbone.conv_width" => bb.conv_width = as_usize(key, v)?,
            "backbone.embed_dim" => bb.embed_dim = as_usize(key, v)?,
            "backbone.heads" => bb.heads = as_usize(key, v)?,
            "backbone.ff_width" => bb.ff_width = as_usize(key, v)?,
            "backbone.dropout" => bb.dropout = as_f64(key, v)?,
            "backbone.lstm_hidden" => bb.lstm_hidden = as_usize(key, v)?,
            "backbone.latent_dim" => bb.latent_dim = as_usize(key, v)?,
            "backbone.refine_hidden" => bb.refine_hidden = as_usize(key, v)?,
            "backbone.loss_weights" => bb.loss_weights = fixed::<3>(key, v)?,
            "backbone.latent_penalty" => bb.latent_penalty = as_f64(key, v)?,
            "backbone.lr" => bb.lr = as_f64(key, v)?,
            "backbone.epochs" => bb.epochs = as_usize(key, v)?,
            "backbone.batch_size" => bb.batch_size = as_usize(key, v)?,
            "purify.enabled" => pl.purify_enabled = as_bool(key, v)?,
            "purify.trim_quantile" => pl.purify.trim_quantile = as_f64(key, v)?,
            "purify.max_removal" => pl.purify.max_removal = as_f64(key, v)?,
            "purify.max_iterations" => pl.purify.max_iterations = as_usize(key, v)?,
            "scoring.weights" => pl.weights = fixed::<COMPONENTS>(key, v)?,
            "scoring.knn_k" => pl.knn_k = as_usize(key, v)?,
            "scoring.latent_lag" => pl.latent_lag = as_usize(key, v)?,
            "scoring.ewma_span" => pl.ewma_span = as_usize(key, v)?,
            "decision.mode" => pl.decision.mode = parse_str(key, v)?,
            "decision.alpha" => pl.decision.alpha = as_f64(key, v)?,
            "decision.min_run" => pl.decision.min_run = as_usize(key, v)?,
            "decision.dilation" => pl.decision.dilation = as_usize(key, v)?,
            "attribution.mass" => pl.attribution_mass = as_f64(key, v)?,
            "benchmark.suites" => bm.suites = as_list(key, v, parse_str)?,
            "benchmark.replications" => bm.replications = as_usize(key, v)?,
            "benchmark.t" => bm.t = as_usize(key, v)?,
            "benchmark.p" => bm.p = as_usize(key, v)?,
            "benchmark.mechanisms" => bm.mechanisms = as_list(key, v, parse_str)?,
            "benchmark.gammas" => bm.gammas = as_list(key, v, as_f64)?,
            "benchmark.placements" => bm.placements = as_list(key, v, parse_str)?,
            "benchmark.horizons" => bm.horizons = as_list(key, v, as_usize)?,
            "benchmark.dgps" => bm.dgps = as_list(key, v, parse_str)?,
            _ => return Err(TadError::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.pipeline.validate()
    }

    /// Suite grid parameters for the benchmark command.
    pub fn suite_options(&self) -> SuiteOptions {
        let b = &self.benchmark;
        SuiteOptions {
            t: b.t,
            p: b.p,
            replications: b.replications,
            master_seed: self.seed,
            pipeline: self.pipeline.clone(),
            mechanisms: b.mechanisms.clone(),
            gammas: b.gammas.clone(),
            placements: b.placements.clone(),
            horizons: b.horizons.clone(),
            dgps: b.dgps.clone(),
        }
    }
}
