use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::{AnomalyGroundTruth, Mechanism, Panel, Placement};
use crate::error::{Result, TadError};
use crate::rng::{stream, Stream};
use crate::stats;

pub const MEAN_SHIFT_SIGMAS: f64 = 1.5;
pub const TREND_SLOPE_SIGMAS: f64 = 0.05;
pub const SPIKE_SIGMAS: f64 = 3.0;
pub const VARIANCE_FACTOR: f64 = 2.0;
pub const COLLECTIVE_FRACTION: f64 = 0.25;
pub const CONTEXTUAL_SIGMAS: f64 = 1.0;

pub const MARKET_FRACTION: f64 = 0.5;
pub const BULL_BEAR_SHIFT: f64 = 0.02;
pub const STRESS_CORRELATION: f64 = 0.6;
pub const REGIME_MEAN_SHIFT: f64 = 0.02;
pub const LOADING_NOISE_SD: f64 = 0.3;
pub const CONTAGION_FRACTION: f64 = 0.1;
pub const CONTAGION_SHIFT: f64 = 0.02;
pub const MOMENTUM_SLOPE: f64 = 0.01;
pub const FLASH_SHIFT: f64 = -0.05;
pub const FAT_TAIL_DOF: f64 = 3.0;
pub const MICRO_AMPLITUDE: f64 = 0.01;
pub const MICRO_FREQUENCY: f64 = 2.0 * std::f64::consts::PI / 5.0;

/// Half-open row range `[start, end)` of an anomalous segment of `round(γT)` rows.
pub fn segment_bounds(t: usize, gamma: f64, placement: Placement) -> Result<(usize, usize)> {
    let n = (gamma * t as f64).round() as usize;
    if n < 1 {
        return Err(TadError::Config(format!(
            "contamination {gamma} on {t} rows gives an anomaly shorter than one step"
        )));
    }
    let start = match placement {
        Placement::Early => (0.1 * t as f64).ceil() as usize,
        Placement::Late => ((0.9 * t as f64).floor() as usize).checked_sub(n).ok_or_else(|| {
            TadError::Config(format!("segment of {n} rows does not fit before row {}", 0.9 * t as f64))
        })?,
        Placement::Explicit(s) => s,
    };
    if start + n > t {
        return Err(TadError::Config(format!(
            "segment [{start}, {}) exceeds the {t}-row panel",
            start + n
        )));
    }
    Ok((start, start + n))
}

/// Default share of features a mechanism touches.
fn default_fraction(m: Mechanism) -> f64 {
    match m {
        Mechanism::Collective => COLLECTIVE_FRACTION,
        Mechanism::Contagion => CONTAGION_FRACTION,
        m if m.is_structural() => 1.0,
        Mechanism::RegimeSwitch => 1.0,
        _ => MARKET_FRACTION,
    }
}

pub fn inject_structural(
    panel: &Panel,
    mechanism: Mechanism,
    gamma: f64,
    placement: Placement,
    seed: u64,
) -> Result<(Panel, AnomalyGroundTruth)> {
    if !mechanism.is_structural() {
        return Err(TadError::Config(format!("{mechanism} is not a structural mechanism")));
    }
    inject(panel, mechanism, gamma, placement, None, seed)
}

pub fn inject_market_regime(
    panel: &Panel,
    mechanism: Mechanism,
    gamma: f64,
    placement: Placement,
    seed: u64,
) -> Result<(Panel, AnomalyGroundTruth)> {
    if mechanism.is_structural() {
        return Err(TadError::Config(format!("{mechanism} is not a market-regime mechanism")));
    }
    inject(panel, mechanism, gamma, placement, None, seed)
}

struct Ctx<'a> {
    clean: &'a Panel,
    out: Panel,
    rows: (usize, usize),
    features: Vec<usize>,
    sigma: Vec<f64>,
    mean: Vec<f64>,
    rng: ChaCha8Rng,
}

impl Ctx<'_> {
    fn add(&mut self, t: usize, j: usize, delta: f64) {
        let v = self.out.data.get(t, j) + delta;
        self.out.data.set(t, j, v);
    }

    fn segment(&self) -> std::ops::Range<usize> {
        self.rows.0..self.rows.1
    }

    /// `x ← μ̂ + √factor·(x − μ̂)` on the affected cells.
    fn inflate(&mut self, factor: f64) {
        let s = factor.sqrt();
        for t in self.segment() {
            for &j in &self.features {
                let x = self.clean.data.get(t, j);
                self.out.data.set(t, j, self.mean[j] + s * (x - self.mean[j]));
            }
        }
    }
}

/// Injects `mechanism` into a copy of `panel`.
///
/// `features` replaces the mechanism's default affected subset. The returned
/// ground truth records the exact anomalous rows and features.
pub fn inject(
    panel: &Panel,
    mechanism: Mechanism,
    gamma: f64,
    placement: Placement,
    features: Option<&[usize]>,
    seed: u64,
) -> Result<(Panel, AnomalyGroundTruth)> {
    let (t_len, p) = (panel.t(), panel.p());
    if gamma == 0.0 {
        let mut truth = AnomalyGroundTruth::clean(t_len, p);
        truth.mechanism = Some(mechanism);
        return Ok((panel.clone(), truth));
    }
    if !(0.0..0.5).contains(&gamma) {
        return Err(TadError::Config(format!("gamma must lie in [0, 0.5), got {gamma}")));
    }
    let rows = segment_bounds(t_len, gamma, placement)?;
    if mechanism == Mechanism::CorrelationBreakdown && panel.factors.is_none() {
        return Err(TadError::Config(
            "correlation-breakdown needs a factor-model baseline".into(),
        ));
    }

    let mut rng = stream(seed, Stream::Injection);
    let mut order: Vec<usize> = (0..p).collect();
    order.shuffle(&mut rng);
    let selected: Vec<usize> = match (features, mechanism) {
        (Some(f), _) => {
            if f.is_empty() || f.iter().any(|&j| j >= p) {
                return Err(TadError::Config(format!(
                    "affected features {f:?} must be non-empty indices below {p}"
                )));
            }
            let mut f = f.to_vec();
            f.sort_unstable();
            f.dedup();
            f
        }
        (None, Mechanism::SectorShock) => {
            let labels = panel.sector_labels();
            if labels.is_empty() {
                return Err(TadError::Config("sector-shock needs a sector map".into()));
            }
            let label = &labels[rng.gen_range(0..labels.len())];
            panel.sector_members(label)
        }
        (None, m) => {
            let k = ((default_fraction(m) * p as f64).ceil() as usize).clamp(1, p);
            let mut f = order[..k].to_vec();
            f.sort_unstable();
            f
        }
    };

    let sigma: Vec<f64> = (0..p).map(|j| stats::sample_std(&panel.column(j))).collect();
    let mean: Vec<f64> = (0..p).map(|j| stats::mean(&panel.column(j))).collect();
    let mut ctx = Ctx {
        clean: panel,
        out: panel.clone(),
        rows,
        features: selected,
        sigma,
        mean,
        rng,
    };
    let mut params = BTreeMap::new();
    let mut time_mask = vec![false; t_len];
    for t in ctx.segment() {
        time_mask[t] = true;
    }
    let mut feature_mask = vec![false; p];
    let (start, end) = rows;
    let n = end - start;

    match mechanism {
        Mechanism::MeanShift | Mechanism::Collective | Mechanism::SectorShock => {
            params.insert("delta_sigmas".into(), MEAN_SHIFT_SIGMAS);
            for t in start..end {
                for idx in 0..ctx.features.len() {
                    let j = ctx.features[idx];
                    ctx.add(t, j, MEAN_SHIFT_SIGMAS * ctx.sigma[j]);
                }
            }
        }
        Mechanism::TrendShift => {
            params.insert("slope_sigmas".into(), TREND_SLOPE_SIGMAS);
            for t in start..end {
                for idx in 0..ctx.features.len() {
                    let j = ctx.features[idx];
                    ctx.add(t, j, TREND_SLOPE_SIGMAS * ctx.sigma[j] * (t - start) as f64);
                }
            }
        }
        Mechanism::VarianceShift | Mechanism::VolatilitySpike => {
            params.insert("variance_factor".into(), VARIANCE_FACTOR);
            ctx.inflate(VARIANCE_FACTOR);
        }
        Mechanism::Spike => {
            params.insert("delta_sigmas".into(), SPIKE_SIGMAS);
            for idx in 0..ctx.features.len() {
                let j = ctx.features[idx];
                let t = ctx.rng.gen_range(start..end);
                ctx.add(t, j, SPIKE_SIGMAS * ctx.sigma[j]);
            }
        }
        Mechanism::Contextual => {
            params.insert("delta_sigmas".into(), CONTEXTUAL_SIGMAS);
            for t in start.max(1)..end {
                for idx in 0..ctx.features.len() {
                    let j = ctx.features[idx];
                    if panel.data.get(t - 1, j) > 0.0 {
                        ctx.add(t, j, CONTEXTUAL_SIGMAS * ctx.sigma[j]);
                    }
                }
            }
        }
        Mechanism::Bear | Mechanism::Bull => {
            let delta = if mechanism == Mechanism::Bull {
                BULL_BEAR_SHIFT
            } else {
                -BULL_BEAR_SHIFT
            };
            params.insert("delta".into(), delta);
            for t in start..end {
                for idx in 0..ctx.features.len() {
                    ctx.add(t, ctx.features[idx], delta);
                }
            }
        }
        Mechanism::LiquidityDryup => {
            params.insert("variance_factor".into(), VARIANCE_FACTOR);
            params.insert("correlation".into(), STRESS_CORRELATION);
            let keep = (1.0 - STRESS_CORRELATION).sqrt();
            let common = STRESS_CORRELATION.sqrt();
            let scale = VARIANCE_FACTOR.sqrt();
            for t in start..end {
                let c: f64 = StandardNormal.sample(&mut ctx.rng);
                for idx in 0..ctx.features.len() {
                    let j = ctx.features[idx];
                    let dev = panel.data.get(t, j) - ctx.mean[j];
                    let mixed = keep * dev + common * ctx.sigma[j] * c;
                    ctx.out.data.set(t, j, ctx.mean[j] + scale * mixed);
                }
            }
        }
        Mechanism::RegimeSwitch => {
            params.insert("mean_shift".into(), REGIME_MEAN_SHIFT);
            params.insert("variance_factor".into(), VARIANCE_FACTOR);
            ctx.inflate(VARIANCE_FACTOR);
            for t in start..end {
                for idx in 0..ctx.features.len() {
                    ctx.add(t, ctx.features[idx], REGIME_MEAN_SHIFT);
                }
            }
        }
        Mechanism::CorrelationBreakdown => {
            params.insert("loading_noise_sd".into(), LOADING_NOISE_SD);
            let fs = panel.factors.as_ref().expect("checked above");
            let k = fs.loadings.cols();
            for idx in 0..ctx.features.len() {
                let j = ctx.features[idx];
                let noise: Vec<f64> = (0..k)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut ctx.rng);
                        LOADING_NOISE_SD * z
                    })
                    .collect();
                for t in start..end {
                    let d: f64 = noise.iter().zip(fs.factors.row(t)).map(|(a, b)| a * b).sum();
                    ctx.add(t, j, d);
                }
            }
        }
        Mechanism::Contagion => {
            params.insert("delta".into(), CONTAGION_SHIFT);
            params.insert("initial_fraction".into(), CONTAGION_FRACTION);
            let step = ((CONTAGION_FRACTION * p as f64).ceil() as usize).max(1);
            let pool: Vec<usize> = match features {
                Some(_) => ctx.features.clone(),
                None => order.clone(),
            };
            let mut reached = Vec::new();
            for (k, t) in (start..end).enumerate() {
                let size = ((k + 1) * step).min(pool.len());
                for &j in &pool[..size] {
                    ctx.add(t, j, CONTAGION_SHIFT);
                }
                reached = pool[..size].to_vec();
            }
            reached.sort_unstable();
            ctx.features = reached;
        }
        Mechanism::MomentumCrash | Mechanism::TrendReversal => {
            params.insert("slope".into(), MOMENTUM_SLOPE);
            let k_star = n / 2;
            params.insert("k_star".into(), k_star as f64);
            for t in start..end {
                let k = (t - start) as f64;
                let ks = k_star as f64;
                let drift = if k < ks {
                    MOMENTUM_SLOPE * k
                } else if mechanism == Mechanism::MomentumCrash {
                    -MOMENTUM_SLOPE * (k - ks)
                } else {
                    MOMENTUM_SLOPE * ks - MOMENTUM_SLOPE * (k - ks)
                };
                for idx in 0..ctx.features.len() {
                    ctx.add(t, ctx.features[idx], drift);
                }
            }
        }
        Mechanism::FlashCrash => {
            params.insert("delta".into(), FLASH_SHIFT);
            let t = start + n / 2;
            time_mask.iter_mut().for_each(|m| *m = false);
            time_mask[t] = true;
            for idx in 0..ctx.features.len() {
                ctx.add(t, ctx.features[idx], FLASH_SHIFT);
            }
        }
        Mechanism::FatTail => {
            params.insert("dof".into(), FAT_TAIL_DOF);
            let dist = StudentT::new(FAT_TAIL_DOF).expect("positive degrees of freedom");
            for t in start..end {
                for idx in 0..ctx.features.len() {
                    let j = ctx.features[idx];
                    let draw: f64 = dist.sample(&mut ctx.rng);
                    ctx.out.data.set(t, j, ctx.mean[j] + ctx.sigma[j] * draw);
                }
            }
        }
        Mechanism::Microstructure => {
            params.insert("amplitude".into(), MICRO_AMPLITUDE);
            params.insert("frequency".into(), MICRO_FREQUENCY);
            for t in start..end {
                let wave = MICRO_AMPLITUDE * (MICRO_FREQUENCY * (t - start) as f64).sin();
                for idx in 0..ctx.features.len() {
                    ctx.add(t, ctx.features[idx], wave);
                }
            }
        }
    }

    for &j in &ctx.features {
        feature_mask[j] = true;
    }
    params.insert("gamma".into(), gamma);
    Ok((
        ctx.out,
        AnomalyGroundTruth {
            time_mask,
            feature_mask,
            mechanism: Some(mechanism),
            params,
            segment: Some(rows),
        },
    ))
}
