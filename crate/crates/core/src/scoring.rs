//! Six diagnostic components, calibration-only robust statistics, weighted
//! aggregation and EWMA smoothing.

use log::warn;
use ndnum::linalg::spd_inverse;
use ndnum::DenseArray;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::error::{Result, TadError};
use crate::output::{fmt_f64, sha256_hex};
use crate::stats;
use crate::windowing::WindowPair;

pub const COMPONENTS: usize = 6;
pub const STANDARDIZE_EPS: f64 = 1e-6;
pub const KNN_K: usize = 20;
pub const LATENT_LAG: usize = 5;
pub const EWMA_SPAN: usize = 5;
pub const PRECISION_RIDGE: f64 = 1e-6;
pub const COMPONENT_NAMES: [&str; COMPONENTS] = ["s1", "s2", "s3", "s4", "s5", "s6"];

/// Raw component values `[s1, …, s6]`.
pub type DiagnosticVector = [f64; COMPONENTS];

/// Model-dependent quantities of one window that every component is built from.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowOutputs {
    pub t: usize,
    pub z: Vec<f64>,
    /// `‖F − F̂₂‖_F`
    pub forecast_residual: f64,
    /// `‖X − X̂‖_F`
    pub recon_residual: f64,
    /// Standard deviation of the `H·p` entries of `F − F̂₂`.
    pub residual_dispersion: f64,
}

/// Evaluates the frozen model on every window.
pub fn window_outputs(model: &Backbone, windows: &[WindowPair]) -> Result<Vec<WindowOutputs>> {
    windows
        .par_iter()
        .map_init(
            || model.evaluator(),
            |ev, w| {
                let out = ev.forward(&w.x, &w.f)?;
                let fr = w.f.zip_map(&out.f2, |a, b| a - b)?;
                let xr = w.x.zip_map(&out.x_hat, |a, b| a - b)?;
                Ok(WindowOutputs {
                    t: w.t,
                    z: out.z.into_data(),
                    forecast_residual: fr.sum_sq().sqrt(),
                    recon_residual: xr.sum_sq().sqrt(),
                    residual_dispersion: stats::pop_std(fr.data()),
                })
            },
        )
        .collect()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Latent-space reference fitted on calibration windows.
///
/// Bank windows that share input rows with the scored window (`|t − t_i| < exclusion`)
/// are left out of the kNN search, and calibration windows are scored against
/// a mean and precision fitted without their overlapping neighbours.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentBaseline {
    pub mu_z: Vec<f64>,
    /// Row-major `q×q` shrinkage precision.
    pub precision: Vec<f64>,
    pub shrinkage: f64,
    /// Calibration latents, one row per window.
    pub bank: Vec<Vec<f64>>,
    /// Window index of each bank row.
    pub bank_t: Vec<usize>,
    /// Calibration mean of `z_t − z_{t−lag}`.
    pub mu_delta: Vec<f64>,
    pub knn_k: usize,
    pub lag: usize,
    pub exclusion: usize,
}

impl LatentBaseline {
    /// `latents[i]` belongs to window `index[i]`; `predecessors[i]` is the latent
    /// `lag` steps earlier, when it exists. `exclusion` is normally `L`.
    pub fn fit(
        latents: &[Vec<f64>],
        index: &[usize],
        predecessors: &[Option<Vec<f64>>],
        knn_k: usize,
        lag: usize,
        exclusion: usize,
    ) -> Result<Self> {
        let n = latents.len();
        if n < 2 {
            return Err(TadError::Data(format!("calibration needs at least 2 windows, got {n}")));
        }
        if index.len() != n || predecessors.len() != n {
            return Err(TadError::Other("latent bank, index and predecessors differ in length".into()));
        }
        let q = latents[0].len();
        let mat = DenseArray::from_rows(latents)?;
        let mu_z = mat.column_means();
        let (precision, shrinkage) = ledoit_wolf_precision_with_intensity(&mat, PRECISION_RIDGE)?;
        let mut mu_delta = vec![0.0; q];
        let mut count = 0usize;
        for (z, prev) in latents.iter().zip(predecessors) {
            if let Some(prev) = prev {
                for k in 0..q {
                    mu_delta[k] += z[k] - prev[k];
                }
                count += 1;
            }
        }
        if count > 0 {
            mu_delta.iter_mut().for_each(|v| *v /= count as f64);
        }
        let mut k = knn_k;
        if k > n {
            warn!("kNN k = {knn_k} exceeds the calibration bank of {n}; clamped");
            k = n;
        }
        Ok(Self {
            mu_z,
            precision: precision.into_data(),
            shrinkage,
            bank: latents.to_vec(),
            bank_t: index.to_vec(),
            mu_delta,
            knn_k: k,
            lag,
            exclusion,
        })
    }

    fn overlaps(&self, i: usize, t: usize) -> bool {
        self.bank_t[i].abs_diff(t) < self.exclusion
    }

    /// Mean distance to the `k` nearest bank latents not overlapping window `t`.
    pub fn knn_score(&self, z: &[f64], t: usize) -> f64 {
        let mut d: Vec<f64> = self
            .bank
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.overlaps(*i, t))
            .map(|(_, b)| euclid(z, b))
            .collect();
        let k = self.knn_k.min(d.len());
        if k == 0 {
            return 0.0;
        }
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        d[..k].iter().sum::<f64>() / k as f64
    }

    /// `(z − μ)ᵀ P (z − μ)` under the full calibration fit.
    pub fn mahalanobis_sq(&self, z: &[f64]) -> f64 {
        quad_form(z, &self.mu_z, &self.precision)
    }

    /// Mahalanobis distance under a fit that leaves out bank windows overlapping
    /// `t`; falls back to the full fit when fewer than two windows remain.
    pub fn held_out_mahalanobis_sq(&self, z: &[f64], t: usize) -> Result<f64> {
        let rows: Vec<Vec<f64>> = (0..self.bank.len())
            .filter(|&i| !self.overlaps(i, t))
            .map(|i| self.bank[i].clone())
            .collect();
        if rows.len() < 2 {
            return Ok(self.mahalanobis_sq(z));
        }
        let mat = DenseArray::from_rows(&rows)?;
        let mu = mat.column_means();
        let (precision, _) = ledoit_wolf_precision_with_intensity(&mat, PRECISION_RIDGE)?;
        Ok(quad_form(z, &mu, precision.data()))
    }

    /// `‖(z − z_prev) − μ_Δ‖₂`; zero without a predecessor.
    pub fn dynamics_score(&self, z: &[f64], prev: Option<&[f64]>) -> f64 {
        match prev {
            None => 0.0,
            Some(prev) => z
                .iter()
                .zip(prev)
                .zip(&self.mu_delta)
                .map(|((a, b), m)| (a - b - m).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// All six raw components of one window. Calibration windows pass
    /// `held_out = true`.
    pub fn components(&self, out: &WindowOutputs, prev: Option<&[f64]>, held_out: bool) -> Result<DiagnosticVector> {
        let s5 = if held_out {
            self.held_out_mahalanobis_sq(&out.z, out.t)?
        } else {
            self.mahalanobis_sq(&out.z)
        };
        Ok([
            out.forecast_residual,
            out.recon_residual,
            self.knn_score(&out.z, out.t),
            self.dynamics_score(&out.z, prev),
            s5,
            out.residual_dispersion,
        ])
    }
}

fn quad_form(z: &[f64], mu: &[f64], precision: &[f64]) -> f64 {
    let q = mu.len();
    let c: Vec<f64> = z.iter().zip(mu).map(|(a, m)| a - m).collect();
    let mut s = 0.0;
    for i in 0..q {
        let row = &precision[i * q..(i + 1) * q];
        s += c[i] * row.iter().zip(&c).map(|(p, v)| p * v).sum::<f64>();
    }
    s.max(0.0)
}

/// Sample covariance (denominator `n − 1`) of the rows of `x`.
pub fn sample_covariance(x: &DenseArray) -> Result<DenseArray> {
    let (n, q) = x.require_2d("sample_covariance")?;
    if n < 2 {
        return Err(TadError::Data(format!("covariance needs at least 2 samples, got {n}")));
    }
    let mu = x.column_means();
    let mut s = DenseArray::zeros(&[q, q]);
    for r in 0..n {
        let row = x.row(r);
        for i in 0..q {
            let ci = row[i] - mu[i];
            for j in i..q {
                let v = s.get(i, j) + ci * (row[j] - mu[j]);
                s.set(i, j, v);
            }
        }
    }
    for i in 0..q {
        for j in i..q {
            let v = s.get(i, j) / (n - 1) as f64;
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Ledoit–Wolf shrunk covariance toward `(tr S / q)·I` and its intensity.
pub fn ledoit_wolf_covariance(x: &DenseArray) -> Result<(DenseArray, f64)> {
    let (n, q) = x.require_2d("ledoit_wolf")?;
    let s = sample_covariance(x)?;
    let mu = (0..q).map(|i| s.get(i, i)).sum::<f64>() / q as f64;
    let mut delta2 = 0.0;
    for i in 0..q {
        for j in 0..q {
            let target = if i == j { mu } else { 0.0 };
            delta2 += (s.get(i, j) - target).powi(2);
        }
    }
    delta2 /= q as f64;
    let means = x.column_means();
    let mut beta2 = 0.0;
    let mut c = vec![0.0; q];
    for r in 0..n {
        for (k, v) in c.iter_mut().enumerate() {
            *v = x.get(r, k) - means[k];
        }
        for i in 0..q {
            for j in 0..q {
                beta2 += (c[i] * c[j] - s.get(i, j)).powi(2);
            }
        }
    }
    beta2 /= (n * n) as f64 * q as f64;
    let rho = if delta2 > 0.0 { beta2.min(delta2) / delta2 } else { 1.0 };
    let mut shrunk = s.map(|v| (1.0 - rho) * v);
    for i in 0..q {
        let v = shrunk.get(i, i) + rho * mu;
        shrunk.set(i, i, v);
    }
    Ok((shrunk, rho))
}

/// `(Σ̂_shrunk + ridge·I)⁻¹`.
pub fn ledoit_wolf_precision(x: &DenseArray, ridge: f64) -> Result<DenseArray> {
    Ok(ledoit_wolf_precision_with_intensity(x, ridge)?.0)
}

fn ledoit_wolf_precision_with_intensity(x: &DenseArray, ridge: f64) -> Result<(DenseArray, f64)> {
    let (mut shrunk, rho) = ledoit_wolf_covariance(x)?;
    for i in 0..shrunk.rows() {
        let v = shrunk.get(i, i) + ridge;
        shrunk.set(i, i, v);
    }
    Ok((spd_inverse(&shrunk)?, rho))
}

/// Frozen calibration state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub medians: DiagnosticVector,
    pub iqrs: DiagnosticVector,
    pub weights: DiagnosticVector,
    pub latent: LatentBaseline,
    pub alpha: f64,
    pub ewma_span: usize,
    /// `(1 − α)`-quantile of the calibration aggregate.
    pub tau: f64,
}

pub fn validate_weights(weights: &DiagnosticVector) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(TadError::Config("component weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - COMPONENTS as f64).abs() > 1e-9 {
        return Err(TadError::Config(format!("component weights sum to {sum}, expected {COMPONENTS}")));
    }
    Ok(())
}

impl CalibrationStats {
    /// Fits medians, IQRs and `τ_α` from calibration components in time order.
    pub fn fit(
        components: &[DiagnosticVector],
        latent: LatentBaseline,
        weights: DiagnosticVector,
        alpha: f64,
        ewma_span: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(TadError::Data("empty calibration split".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(TadError::Config(format!("alpha {alpha} must lie in (0, 1)")));
        }
        validate_weights(&weights)?;
        let mut medians = [0.0; COMPONENTS];
        let mut iqrs = [0.0; COMPONENTS];
        for m in 0..COMPONENTS {
            let col: Vec<f64> = components.iter().map(|d| d[m]).collect();
            medians[m] = stats::median(&col);
            iqrs[m] = stats::iqr(&col);
        }
        let mut cal = Self {
            medians,
            iqrs,
            weights,
            latent,
            alpha,
            ewma_span,
            tau: 0.0,
        };
        let agg: Vec<f64> = components.iter().map(|d| cal.standardize(d).1).collect();
        cal.tau = stats::quantile(&agg, 1.0 - alpha);
        Ok(cal)
    }

    /// Robustly standardized components and their weighted mean.
    pub fn standardize(&self, d: &DiagnosticVector) -> (DiagnosticVector, f64) {
        standardize_and_aggregate(d, &self.medians, &self.iqrs, &self.weights)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn content_hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("calibration serializes"))
    }
}

/// `s̃_m = |s_m − med_m| / (IQR_m + ε)` and `S = (1/M) Σ w_m s̃_m`.
pub fn standardize_and_aggregate(
    d: &DiagnosticVector,
    medians: &DiagnosticVector,
    iqrs: &DiagnosticVector,
    weights: &DiagnosticVector,
) -> (DiagnosticVector, f64) {
    let mut s = [0.0; COMPONENTS];
    let mut agg = 0.0;
    for m in 0..COMPONENTS {
        s[m] = (d[m] - medians[m]).abs() / (iqrs[m] + STANDARDIZE_EPS);
        agg += weights[m] * s[m];
    }
    (s, agg / COMPONENTS as f64)
}

/// `y₀ = x₀`, `y_t = a·x_t + (1 − a)·y_{t−1}` with `a = 2/(span + 1)`.
pub fn ewma(series: &[f64], span: usize) -> Vec<f64> {
    assert!(span >= 1, "EWMA span must be at least 1");
    let a = 2.0 / (span as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut prev = None;
    for &x in series {
        let y = match prev {
            None => x,
            Some(p) => a * x + (1.0 - a) * p,
        };
        out.push(y);
        prev = Some(y);
    }
    out
}

/// Scores of consecutive windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub index: Vec<usize>,
    pub raw: Vec<DiagnosticVector>,
    pub standardized: Vec<DiagnosticVector>,
    pub aggregate: Vec<f64>,
    pub smoothed: Vec<f64>,
}

impl ScoreSeries {
    pub fn build(index: Vec<usize>, raw: Vec<DiagnosticVector>, cal: &CalibrationStats) -> Self {
        let (standardized, aggregate): (Vec<_>, Vec<_>) = raw.iter().map(|d| cal.standardize(d)).unzip();
        let smoothed = ewma(&aggregate, cal.ewma_span);
        Self {
            index,
            raw,
            standardized,
            aggregate,
            smoothed,
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn csv_header() -> Vec<&'static str> {
        let mut h = vec!["index", "s1", "s2", "s3", "s4", "s5", "s6"];
        h.extend(["s1_std", "s2_std", "s3_std", "s4_std", "s5_std", "s6_std", "S_raw", "S_smoothed"]);
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        (0..self.len())
            .map(|i| {
                let mut row = vec![self.index[i].to_string()];
                row.extend(self.raw[i].iter().map(|&v| fmt_f64(v)));
                row.extend(self.standardized[i].iter().map(|&v| fmt_f64(v)));
                row.push(fmt_f64(self.aggregate[i]));
                row.push(fmt_f64(self.smoothed[i]));
                row
            })
            .collect()
    }
}
