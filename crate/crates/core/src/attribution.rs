//! Factor-level decomposition of flagged windows: baseline deviation `Δ`,
//! latent-score sensitivity `Γ`, contribution `C = Δ·Γ`, cumulative-mass
//! selection, and the sector match ratio.

use ndnum::DenseArray;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Result, TadError};
use crate::windowing::STD_FLOOR;

pub const DEFAULT_MASS: f64 = 0.8;

/// Per-factor location and scale on the raw panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionBaseline {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu_z: Vec<f64>,
}

impl AttributionBaseline {
    /// Column means and population standard deviations of `rows` of `raw`.
    pub fn fit(raw: &DenseArray, rows: std::ops::Range<usize>, mu_z: Vec<f64>) -> Result<Self> {
        let (t, p) = raw.require_2d("attribution baseline")?;
        if rows.is_empty() || rows.end > t {
            return Err(TadError::Split(format!("baseline rows {rows:?} outside a panel of {t} rows")));
        }
        let n = rows.len() as f64;
        let mut mu = vec![0.0; p];
        for r in rows.clone() {
            for (m, v) in mu.iter_mut().zip(raw.row(r)) {
                *m += v;
            }
        }
        mu.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(raw.row(r)).zip(&mu) {
                *s += (v - m).powi(2);
            }
        }
        let sigma = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mu, sigma, mu_z })
    }
}

/// `Δ_j = |x̄_j − μ_j| / σ_j` over the rows of the raw window.
pub fn baseline_deviation(x_raw: &DenseArray, baseline: &AttributionBaseline) -> Vec<f64> {
    x_raw
        .column_means()
        .iter()
        .zip(&baseline.mu)
        .zip(&baseline.sigma)
        .map(|((m, mu), s)| (m - mu).abs() / s)
        .collect()
}

/// `Γ_j = (1/L) Σ_ℓ |∂𝒮/∂x_{ℓj}|` with `𝒮 = ‖z(X) − μ_z‖²` on the normalized window.
pub fn latent_sensitivity(model: &Backbone, x_norm: &DenseArray, mu_z: &[f64]) -> Result<Vec<f64>> {
    let (_, grad) = model.latent_score_gradient(x_norm, mu_z)?;
    Ok(column_abs_means(&grad))
}

fn column_abs_means(grad: &DenseArray) -> Vec<f64> {
    let (l, p) = (grad.rows(), grad.cols());
    let mut out = vec![0.0; p];
    for r in 0..l {
        for (o, g) in out.iter_mut().zip(grad.row(r)) {
            *o += g.abs();
        }
    }
    out.iter_mut().for_each(|o| *o /= l as f64);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub t: usize,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Normalized to sum 1 when requested and not degenerate.
    pub contribution: Vec<f64>,
    /// Factor indices by descending contribution, ties by index.
    pub ranking: Vec<usize>,
    /// Smallest ranking prefix whose mass reaches `mass`.
    pub selected: Vec<usize>,
    pub mass: f64,
    /// Every contribution was zero.
    pub degenerate: bool,
}

pub fn factor_contribution(t: usize, delta: Vec<f64>, gamma: Vec<f64>, mass: f64, normalize: bool) -> Result<AttributionReport> {
    if delta.len() != gamma.len() {
        return Err(TadError::Other(format!(
            "delta has {} factors, gamma has {}",
            delta.len(),
            gamma.len()
        )));
    }
    if delta.iter().chain(&gamma).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(TadError::Other("delta and gamma must be finite and non-negative".into()));
    }
    let raw: Vec<f64> = delta.iter().zip(&gamma).map(|(d, g)| d * g).collect();
    let total: f64 = raw.iter().sum();
    let degenerate = total <= 0.0;
    let contribution = if normalize && !degenerate {
        raw.iter().map(|c| c / total).collect()
    } else {
        raw
    };
    let mut ranking: Vec<usize> = (0..contribution.len()).collect();
    ranking.sort_by(|&a, &b| contribution[b].total_cmp(&contribution[a]).then(a.cmp(&b)));
    let mut selected = Vec::new();
    if !degenerate {
        let target = mass * contribution.iter().sum::<f64>() - 1e-12;
        let mut acc = 0.0;
        for &j in &ranking {
            if acc >= target || contribution[j] <= 0.0 {
                break;
            }
            acc += contribution[j];
            selected.push(j);
        }
    }
    Ok(AttributionReport {
        t,
        delta,
        gamma,
        contribution,
        ranking,
        selected,
        mass,
        degenerate,
    })
}

/// Fraction of `affected` among the `|affected|` top-ranked factors.
pub fn sector_match_ratio(report: &AttributionReport, affected: &[usize]) -> Result<f64> {
    let p = report.ranking.len();
    if affected.is_empty() || affected.len() > p {
        return Err(TadError::Other(format!(
            "affected set size {} must lie in 1..={p}",
            affected.len()
        )));
    }
    let top = &report.ranking[..affected.len()];
    let hits = affected.iter().filter(|j| top.contains(j)).count();
    Ok(hits as f64 / affected.len() as f64)
}
