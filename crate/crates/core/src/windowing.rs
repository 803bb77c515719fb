//! Rolling window pairs, the train/calibration/test split, and training-only
//! input normalization.
//!
//! Window indices are 0-based panel rows: window `t` has input rows
//! `t−L+1..=t` and future rows `t+1..=t+H`.

use std::ops::Range;

use ndnum::DenseArray;
use serde::{Deserialize, Serialize};

use crate::data_gen::Panel;
use crate::error::{Result, TadError};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub t: usize,
    /// `L×p`
    pub x: DenseArray,
    /// `H×p`
    pub f: DenseArray,
}

fn rows(panel: &DenseArray, range: Range<usize>) -> DenseArray {
    let p = panel.cols();
    let n = range.len();
    let data = panel.data()[range.start * p..range.end * p].to_vec();
    DenseArray::new(vec![n, p], data).expect("non-empty row range")
}

/// Every window of the panel, in time order; `T−H−L+1` of them.
pub fn build_windows(panel: &Panel, l: usize, h: usize) -> Result<Vec<WindowPair>> {
    if l == 0 || h == 0 {
        return Err(TadError::Config("window length and horizon must be positive".into()));
    }
    let t_len = panel.t();
    if t_len < l + h {
        return Err(TadError::Data(format!(
            "panel has {t_len} rows; windows need at least L+H = {}",
            l + h
        )));
    }
    Ok((l - 1..t_len - h)
        .map(|t| WindowPair {
            t,
            x: rows(&panel.data, t + 1 - l..t + 1),
            f: rows(&panel.data, t + 1..t + 1 + h),
        })
        .collect())
}

/// Window-end rows of each split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partitions window ends given the training end `t0` and calibration end
/// `t1` (both counted in rows, so `t0` rows form the training period).
///
/// In 1-based terms: train `{L..T0−H}`, calibration `{T0−H+1..T1−H}`,
/// test `{T1−H+1..T−H}`.
pub fn split_indices(t: usize, l: usize, h: usize, t0: usize, t1: usize) -> Result<SplitIndices> {
    let ordered = t0 >= h && t1 >= h && l < t0 - h && t0 < t1 && t1 < t;
    if !ordered || l == 0 || h == 0 {
        return Err(TadError::Split(format!(
            "need L < T0−H < T1−H < T−H, got T={t}, L={l}, H={h}, T0={t0}, T1={t1}"
        )));
    }
    Ok(SplitIndices {
        train: (l - 1..t0 - h).collect(),
        calibration: (t0 - h..t1 - h).collect(),
        test: (t1 - h..t - h).collect(),
    })
}

/// Per-feature location and scale fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features whose scale was floored.
    pub floored: Vec<usize>,
}

impl NormStats {
    /// Fits on panel rows in `train_rows` only.
    pub fn fit(panel: &DenseArray, train_rows: Range<usize>) -> Result<Self> {
        if train_rows.is_empty() || train_rows.end > panel.rows() {
            return Err(TadError::Split(format!(
                "normalization rows {train_rows:?} are empty or exceed {} rows",
                panel.rows()
            )));
        }
        let p = panel.cols();
        let n = train_rows.len() as f64;
        let mut mean = vec![0.0; p];
        for t in train_rows.clone() {
            for (m, v) in mean.iter_mut().zip(panel.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; p];
        for t in train_rows {
            for ((s, v), m) in var.iter_mut().zip(panel.row(t)).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let mut floored = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / n).sqrt();
                if sd < STD_FLOOR {
                    floored.push(j);
                    STD_FLOOR
                } else {
                    sd
                }
            })
            .collect();
        if !floored.is_empty() {
            log::warn!("constant training features {floored:?}; scale floored at {STD_FLOOR}");
        }
        Ok(Self { mean, std, floored })
    }

    /// `(x − μ̂_j)/σ̂_j` applied to every row.
    pub fn apply(&self, a: &DenseArray) -> DenseArray {
        let mut out = a.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn apply_window(&self, w: &WindowPair) -> WindowPair {
        WindowPair {
            t: w.t,
            x: self.apply(&w.x),
            f: self.apply(&w.f),
        }
    }
}
