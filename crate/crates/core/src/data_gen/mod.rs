//! Synthetic panels, anomaly injection, and CSV ingestion.

mod baseline;
mod csv_io;
mod inject;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndnum::DenseArray;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TadError};

pub use baseline::generate_baseline;
pub use csv_io::{load_panel_csv, load_sector_csv, panel_csv_bytes, write_panel_csv};
pub use inject::{inject, inject_market_regime, inject_structural, segment_bounds};

/// Loadings and realized factors of a factor-model panel.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorStructure {
    /// `p×k`
    pub loadings: DenseArray,
    /// `T×k`
    pub factors: DenseArray,
}

/// A `T×p` observation matrix with feature metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub data: DenseArray,
    pub names: Vec<String>,
    pub sectors: Option<Vec<String>>,
    pub factors: Option<FactorStructure>,
}

impl Panel {
    pub fn new(data: DenseArray, names: Vec<String>) -> Result<Self> {
        let (_, p) = data.require_2d("panel")?;
        if names.len() != p {
            return Err(TadError::Data(format!(
                "{} feature names for {p} columns",
                names.len()
            )));
        }
        if !data.is_finite() {
            return Err(TadError::Data("panel contains non-finite values".into()));
        }
        Ok(Self {
            data,
            names,
            sectors: None,
            factors: None,
        })
    }

    /// Panel with names `f0..f{p-1}`.
    pub fn from_data(data: DenseArray) -> Result<Self> {
        let p = data.cols();
        Self::new(data, default_names(p))
    }

    pub fn with_sectors(mut self, sectors: Vec<String>) -> Result<Self> {
        if sectors.len() != self.p() {
            return Err(TadError::Data(format!(
                "{} sector labels for {} features",
                sectors.len(),
                self.p()
            )));
        }
        self.sectors = Some(sectors);
        Ok(self)
    }

    pub fn t(&self) -> usize {
        self.data.rows()
    }

    pub fn p(&self) -> usize {
        self.data.cols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.t()).map(|t| self.data.get(t, j)).collect()
    }

    /// Feature indices belonging to `sector`, in index order.
    pub fn sector_members(&self, sector: &str) -> Vec<usize> {
        self.sectors
            .as_ref()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .filter(|(_, name)| name.as_str() == sector)
                    .map(|(j, _)| j)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Distinct sector labels in first-appearance order.
    pub fn sector_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in self.sectors.iter().flatten() {
            if !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("f{j}")).collect()
}

/// Baseline data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dgp {
    Ar1CrossCov,
    IidGaussian,
    IidStudentT,
    Garch11,
    StaticFactor,
    FactorGarch,
    Var1,
    VolatilityDrift,
}

impl Dgp {
    pub const ALL: [Dgp; 8] = [
        Dgp::Ar1CrossCov,
        Dgp::IidGaussian,
        Dgp::IidStudentT,
        Dgp::Garch11,
        Dgp::StaticFactor,
        Dgp::FactorGarch,
        Dgp::Var1,
        Dgp::VolatilityDrift,
    ];

    /// The seven clean processes of the false-alarm audit.
    pub const CLEAN_AUDIT: [Dgp; 7] = [
        Dgp::IidGaussian,
        Dgp::IidStudentT,
        Dgp::Garch11,
        Dgp::StaticFactor,
        Dgp::FactorGarch,
        Dgp::Var1,
        Dgp::VolatilityDrift,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dgp::Ar1CrossCov => "ar1-cross-cov",
            Dgp::IidGaussian => "iid-gaussian",
            Dgp::IidStudentT => "iid-student-t",
            Dgp::Garch11 => "garch11",
            Dgp::StaticFactor => "static-factor",
            Dgp::FactorGarch => "factor-garch",
            Dgp::Var1 => "var1",
            Dgp::VolatilityDrift => "volatility-drift",
        }
    }
}

impl fmt::Display for Dgp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dgp {
    type Err = TadError;

    fn from_str(s: &str) -> Result<Self> {
        Dgp::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| TadError::Config(format!("unknown dgp '{s}'")))
    }
}

/// Injected anomaly mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    MeanShift,
    TrendShift,
    VarianceShift,
    Spike,
    Collective,
    Contextual,
    Bear,
    Bull,
    VolatilitySpike,
    LiquidityDryup,
    RegimeSwitch,
    CorrelationBreakdown,
    Contagion,
    MomentumCrash,
    TrendReversal,
    FlashCrash,
    FatTail,
    Microstructure,
    SectorShock,
}

impl Mechanism {
    pub const STRUCTURAL: [Mechanism; 6] = [
        Mechanism::MeanShift,
        Mechanism::TrendShift,
        Mechanism::VarianceShift,
        Mechanism::Spike,
        Mechanism::Collective,
        Mechanism::Contextual,
    ];

    pub const MARKET: [Mechanism; 13] = [
        Mechanism::Bear,
        Mechanism::Bull,
        Mechanism::VolatilitySpike,
        Mechanism::LiquidityDryup,
        Mechanism::RegimeSwitch,
        Mechanism::CorrelationBreakdown,
        Mechanism::Contagion,
        Mechanism::MomentumCrash,
        Mechanism::TrendReversal,
        Mechanism::FlashCrash,
        Mechanism::FatTail,
        Mechanism::Microstructure,
        Mechanism::SectorShock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::MeanShift => "mean-shift",
            Mechanism::TrendShift => "trend-shift",
            Mechanism::VarianceShift => "variance-shift",
            Mechanism::Spike => "spike",
            Mechanism::Collective => "collective",
            Mechanism::Contextual => "contextual",
            Mechanism::Bear => "bear",
            Mechanism::Bull => "bull",
            Mechanism::VolatilitySpike => "volatility-spike",
            Mechanism::LiquidityDryup => "liquidity-dryup",
            Mechanism::RegimeSwitch => "regime-switch",
            Mechanism::CorrelationBreakdown => "correlation-breakdown",
            Mechanism::Contagion => "contagion",
            Mechanism::MomentumCrash => "momentum-crash",
            Mechanism::TrendReversal => "trend-reversal",
            Mechanism::FlashCrash => "flash-crash",
            Mechanism::FatTail => "fat-tail",
            Mechanism::Microstructure => "microstructure",
            Mechanism::SectorShock => "sector-shock",
        }
    }

    pub fn is_structural(self) -> bool {
        Self::STRUCTURAL.contains(&self)
    }

    /// Mechanisms that only add an offset to the affected cells.
    pub fn is_additive(self) -> bool {
        matches!(
            self,
            Mechanism::MeanShift
                | Mechanism::TrendShift
                | Mechanism::Spike
                | Mechanism::Collective
                | Mechanism::Contextual
                | Mechanism::Bear
                | Mechanism::Bull
                | Mechanism::Contagion
                | Mechanism::MomentumCrash
                | Mechanism::TrendReversal
                | Mechanism::FlashCrash
                | Mechanism::Microstructure
                | Mechanism::SectorShock
        )
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mechanism {
    type Err = TadError;

    fn from_str(s: &str) -> Result<Self> {
        Self::STRUCTURAL
            .into_iter()
            .chain(Self::MARKET)
            .find(|m| m.as_str() == s)
            .ok_or_else(|| TadError::Config(format!("unknown mechanism '{s}'")))
    }
}

/// Where the anomalous segment sits in the sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Starts at `⌈0.1T⌉`.
    Early,
    /// Ends (exclusive) at `⌊0.9T⌋`.
    Late,
    /// Starts at the given 0-based row.
    Explicit(usize),
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Placement::Early => f.write_str("early"),
            Placement::Late => f.write_str("late"),
            Placement::Explicit(s) => write!(f, "start-{s}"),
        }
    }
}

impl FromStr for Placement {
    type Err = TadError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Placement::Early),
            "late" => Ok(Placement::Late),
            other => other
                .strip_prefix("start-")
                .and_then(|n| n.parse().ok())
                .map(Placement::Explicit)
                .ok_or_else(|| {
                    TadError::Config(format!(
                        "unknown placement '{other}' (expected early, late, or start-<row>)"
                    ))
                }),
        }
    }
}

/// One simulated scenario: baseline process plus an optional injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dgp: Dgp,
    pub mechanism: Option<Mechanism>,
    pub t: usize,
    pub p: usize,
    pub gamma: f64,
    pub placement: Placement,
    pub seed: u64,
    /// Explicit affected features; overrides the mechanism's default subset.
    pub features: Option<Vec<usize>>,
    /// Number of contiguous equal-size sectors to label features with.
    pub sectors: Option<usize>,
}

impl ScenarioConfig {
    pub fn new(dgp: Dgp, t: usize, p: usize, seed: u64) -> Self {
        Self {
            dgp,
            mechanism: None,
            t,
            p,
            gamma: 0.0,
            placement: Placement::Late,
            seed,
            features: None,
            sectors: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t == 0 || self.p == 0 {
            return Err(TadError::Config("scenario extents must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.gamma) {
            return Err(TadError::Config(format!(
                "gamma must lie in [0, 0.5), got {}",
                self.gamma
            )));
        }
        if let Some(s) = self.sectors {
            if s == 0 || s > self.p {
                return Err(TadError::Config(format!(
                    "sector count {s} must lie in 1..={}",
                    self.p
                )));
            }
        }
        Ok(())
    }
}

/// Exact record of what was injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyGroundTruth {
    pub time_mask: Vec<bool>,
    pub feature_mask: Vec<bool>,
    pub mechanism: Option<Mechanism>,
    pub params: BTreeMap<String, f64>,
    /// Half-open row range of the anomalous segment.
    pub segment: Option<(usize, usize)>,
}

impl AnomalyGroundTruth {
    pub fn clean(t: usize, p: usize) -> Self {
        Self {
            time_mask: vec![false; t],
            feature_mask: vec![false; p],
            mechanism: None,
            params: BTreeMap::new(),
            segment: None,
        }
    }

    pub fn affected_features(&self) -> Vec<usize> {
        mask_indices(&self.feature_mask)
    }

    pub fn anomalous_times(&self) -> Vec<usize> {
        mask_indices(&self.time_mask)
    }
}

fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}

/// Labels `p` features with `count` contiguous sectors `s0, s1, …`.
pub fn contiguous_sectors(p: usize, count: usize) -> Vec<String> {
    (0..p).map(|j| format!("s{}", j * count / p)).collect()
}

/// Baseline generation followed by the configured injection.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<(Panel, AnomalyGroundTruth)> {
    cfg.validate()?;
    let mut panel = generate_baseline(cfg)?;
    if let Some(count) = cfg.sectors {
        panel = panel.with_sectors(contiguous_sectors(cfg.p, count))?;
    }
    match cfg.mechanism {
        None => Ok((panel.clone(), AnomalyGroundTruth::clean(panel.t(), panel.p()))),
        Some(m) => inject(
            &panel,
            m,
            cfg.gamma,
            cfg.placement,
            cfg.features.as_deref(),
            cfg.seed,
        ),
    }
}
