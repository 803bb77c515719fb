//! The five experiment families as ready-made grids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data_gen::{Dgp, Mechanism, Placement};
use crate::error::{Result, TadError};
use crate::eval::experiment::{clean_fpr_spec, horizon_sweep_spec, Cell, ExperimentSpec, SuiteTable, Variant};
use crate::pipeline::PipelineConfig;

pub const LOW_GAMMAS: [f64; 3] = [0.01, 0.03, 0.05];
pub const HIGH_GAMMAS: [f64; 3] = [0.10, 0.12, 0.15];
pub const HORIZONS: [usize; 5] = [1, 3, 5, 10, 20];
pub const DESK_T: usize = 500;
pub const DESK_P: usize = 20;
pub const DESK_REPLICATIONS: usize = 10;
pub const SECTOR_COUNT: usize = 4;
/// Sector whose members receive the injection in the attribution suite.
pub const SHOCKED_SECTOR: usize = 1;
pub const SECTOR_GAMMA: f64 = 0.10;
pub const HORIZON_GAMMA: f64 = 0.05;
/// Reconstruction-only ablation reported next to the ensemble.
pub const RECON_ONLY: &str = "s2-only";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Structural,
    MarketRegime,
    HorizonSweep,
    CleanFpr,
    SectorAttribution,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Structural,
        Suite::MarketRegime,
        Suite::HorizonSweep,
        Suite::CleanFpr,
        Suite::SectorAttribution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Structural => "structural",
            Suite::MarketRegime => "market_regime",
            Suite::HorizonSweep => "horizon_sweep",
            Suite::CleanFpr => "clean_fpr",
            Suite::SectorAttribution => "sector_attribution",
        }
    }

    pub fn table(self) -> SuiteTable {
        match self {
            Suite::Structural | Suite::MarketRegime => SuiteTable::Overall,
            Suite::HorizonSweep => SuiteTable::Horizon,
            Suite::CleanFpr => SuiteTable::CleanFpr,
            Suite::SectorAttribution => SuiteTable::MatchRatio,
        }
    }

    /// Mechanisms of the suite when none are given explicitly.
    pub fn default_mechanisms(self) -> Vec<Mechanism> {
        match self {
            Suite::Structural => Mechanism::STRUCTURAL.to_vec(),
            Suite::MarketRegime => Mechanism::MARKET.to_vec(),
            Suite::HorizonSweep => vec![Mechanism::MeanShift],
            Suite::CleanFpr => Vec::new(),
            Suite::SectorAttribution => vec![
                Mechanism::MeanShift,
                Mechanism::VolatilitySpike,
                Mechanism::TrendShift,
                Mechanism::Spike,
            ],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Suite {
    type Err = TadError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| TadError::Config(format!("unknown suite '{s}'")))
    }
}

/// Grid parameters shared by the suites; empty lists mean the suite default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub t: usize,
    pub p: usize,
    pub replications: usize,
    pub master_seed: u64,
    pub pipeline: PipelineConfig,
    pub mechanisms: Vec<Mechanism>,
    pub gammas: Vec<f64>,
    pub placements: Vec<Placement>,
    pub horizons: Vec<usize>,
    pub dgps: Vec<Dgp>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            t: DESK_T,
            p: DESK_P,
            replications: DESK_REPLICATIONS,
            master_seed: 0,
            pipeline: PipelineConfig::desk(),
            mechanisms: Vec::new(),
            gammas: Vec::new(),
            placements: Vec::new(),
            horizons: Vec::new(),
            dgps: Vec::new(),
        }
    }
}

fn or_default<T: Clone>(given: &[T], default: &[T]) -> Vec<T> {
    if given.is_empty() {
        default.to_vec()
    } else {
        given.to_vec()
    }
}

fn grid(dgp: Dgp, mechanisms: &[Mechanism], gammas: &[f64], placements: &[Placement], h: usize) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &m in mechanisms {
        for &g in gammas {
            for &pl in placements {
                cells.push(Cell::injected(dgp, m, g, pl, h));
            }
        }
    }
    cells
}

pub fn suite_spec(suite: Suite, opts: &SuiteOptions) -> Result<ExperimentSpec> {
    let mechanisms = or_default(&opts.mechanisms, &suite.default_mechanisms());
    let all_gammas: Vec<f64> = LOW_GAMMAS.iter().chain(&HIGH_GAMMAS).copied().collect();
    let h = opts.pipeline.h;
    let base = |name: &str, cells: Vec<Cell>, variants: Vec<Variant>| ExperimentSpec {
        name: name.to_string(),
        t: opts.t,
        p: opts.p,
        cells,
        replications: opts.replications,
        master_seed: opts.master_seed,
        pipeline: opts.pipeline.clone(),
        variants,
    };
    let spec = match suite {
        Suite::Structural => {
            let dgp = opts.dgps.first().copied().unwrap_or(Dgp::Ar1CrossCov);
            let cells = grid(
                dgp,
                &mechanisms,
                &or_default(&opts.gammas, &all_gammas),
                &or_default(&opts.placements, &[Placement::Early, Placement::Late]),
                h,
            );
            base(suite.as_str(), cells, vec![Variant::single(RECON_ONLY, 1)])
        }
        Suite::MarketRegime => {
            let dgp = opts.dgps.first().copied().unwrap_or(Dgp::StaticFactor);
            let cells = grid(
                dgp,
                &mechanisms,
                &or_default(&opts.gammas, &all_gammas),
                &or_default(&opts.placements, &[Placement::Late]),
                h,
            )
            .into_iter()
            .map(|c| Cell {
                sectors: Some(SECTOR_COUNT.min(opts.p)),
                ..c
            })
            .collect();
            base(suite.as_str(), cells, Vec::new())
        }
        Suite::HorizonSweep => {
            let dgp = opts.dgps.first().copied().unwrap_or(Dgp::Ar1CrossCov);
            let cells = grid(
                dgp,
                &mechanisms,
                &or_default(&opts.gammas, &[HORIZON_GAMMA]),
                &or_default(&opts.placements, &[Placement::Late]),
                h,
            );
            horizon_sweep_spec(&base(suite.as_str(), cells, Vec::new()), &or_default(&opts.horizons, &HORIZONS))
        }
        Suite::CleanFpr => {
            let dgps = or_default(&opts.dgps, &Dgp::CLEAN_AUDIT);
            clean_fpr_spec(&dgps, &opts.pipeline, opts.t, opts.p, opts.replications, opts.master_seed)
        }
        Suite::SectorAttribution => {
            let dgp = opts.dgps.first().copied().unwrap_or(Dgp::StaticFactor);
            if opts.p < SECTOR_COUNT {
                return Err(TadError::Config(format!(
                    "sector attribution needs at least {SECTOR_COUNT} features, got {}",
                    opts.p
                )));
            }
            let members = sector_members(opts.p, SHOCKED_SECTOR);
            let cells = grid(
                dgp,
                &mechanisms,
                &or_default(&opts.gammas, &[SECTOR_GAMMA]),
                &or_default(&opts.placements, &[Placement::Late]),
                h,
            )
            .into_iter()
            .map(|c| Cell {
                features: Some(members.clone()),
                sectors: Some(SECTOR_COUNT),
                ..c
            })
            .collect();
            base(suite.as_str(), cells, Vec::new())
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Members of contiguous sector `s` out of [`SECTOR_COUNT`].
pub fn sector_members(p: usize, s: usize) -> Vec<usize> {
    (0..p).filter(|j| j * SECTOR_COUNT / p == s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        let opts = SuiteOptions::default();
        assert_eq!(suite_spec(Suite::Structural, &opts).unwrap().cells.len(), 6 * 6 * 2);
        assert_eq!(suite_spec(Suite::MarketRegime, &opts).unwrap().cells.len(), 13 * 6);
        assert_eq!(suite_spec(Suite::HorizonSweep, &opts).unwrap().cells.len(), 5);
        assert_eq!(suite_spec(Suite::CleanFpr, &opts).unwrap().cells.len(), 7);
        assert_eq!(suite_spec(Suite::SectorAttribution, &opts).unwrap().cells.len(), 4);
        assert_eq!(sector_members(20, 1), vec![5, 6, 7, 8, 9]);
    }

    #[test]
    fn names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
    }
}
