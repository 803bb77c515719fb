use ndnum::DenseArray;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use super::{Dgp, FactorStructure, Panel, ScenarioConfig};
use crate::error::Result;
use crate::rng::{stream, Stream};

pub const BURN_IN: usize = 200;

/// Return-scale volatility shared by the market-style processes.
pub const RETURN_SD: f64 = 0.01;

pub const AR1_PHI: f64 = 0.3;
pub const AR1_CROSS_CORR: f64 = 0.3;

pub const STUDENT_T_DOF: f64 = 5.0;

pub const GARCH_OMEGA: f64 = 1e-5;
pub const GARCH_ALPHA: f64 = 0.08;
pub const GARCH_BETA: f64 = 0.90;

pub const FACTOR_COUNT: usize = 3;
pub const FACTOR_LOADING_SD: f64 = 0.5;

pub const VAR1_SPECTRAL_RADIUS: f64 = 0.9;
pub const VAR1_MIN_EIGENVALUE: f64 = 0.5;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Generates the clean baseline panel named by `cfg.dgp`.
pub fn generate_baseline(cfg: &ScenarioConfig) -> Result<Panel> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Stream::Baseline);
    let (t, p) = (cfg.t, cfg.p);
    let mut factors = None;
    let data = match cfg.dgp {
        Dgp::IidGaussian => fill(t, p, |_, _| RETURN_SD * normal(&mut rng)),
        Dgp::IidStudentT => {
            let dist = StudentT::new(STUDENT_T_DOF).expect("positive degrees of freedom");
            let scale = RETURN_SD / (STUDENT_T_DOF / (STUDENT_T_DOF - 2.0)).sqrt();
            fill(t, p, |_, _| scale * dist.sample(&mut rng))
        }
        Dgp::VolatilityDrift => fill(t, p, |i, _| {
            let drift = if t > 1 { i as f64 / (t - 1) as f64 } else { 0.0 };
            RETURN_SD * (1.0 + drift) * normal(&mut rng)
        }),
        Dgp::Ar1CrossCov => ar1_cross_cov(t, p, &mut rng),
        Dgp::Garch11 => garch_matrix(t, p, &mut rng),
        Dgp::StaticFactor | Dgp::FactorGarch => {
            let k = FACTOR_COUNT;
            let loadings = fill(p, k, |_, _| FACTOR_LOADING_SD * normal(&mut rng));
            let f = fill(t, k, |_, _| RETURN_SD * normal(&mut rng));
            let idio = if cfg.dgp == Dgp::FactorGarch {
                garch_matrix(t, p, &mut rng)
            } else {
                fill(t, p, |_, _| RETURN_SD * normal(&mut rng))
            };
            let common = f.matmul(&loadings.transpose()?)?;
            let data = common.zip_map(&idio, |a, b| a + b)?;
            factors = Some(FactorStructure {
                loadings,
                factors: f,
            });
            data
        }
        Dgp::Var1 => var1(t, p, &mut rng)?,
    };
    let mut panel = Panel::from_data(data)?;
    panel.factors = factors;
    Ok(panel)
}

fn fill(r: usize, c: usize, mut f: impl FnMut(usize, usize) -> f64) -> DenseArray {
    let mut a = DenseArray::zeros(&[r, c]);
    for i in 0..r {
        for j in 0..c {
            a.set(i, j, f(i, j));
        }
    }
    a
}

/// AR(1) per column with equicorrelated unit-variance innovations.
fn ar1_cross_cov(t: usize, p: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let common_w = AR1_CROSS_CORR.sqrt();
    let idio_w = (1.0 - AR1_CROSS_CORR).sqrt();
    let mut state = vec![0.0; p];
    let mut out = DenseArray::zeros(&[t, p]);
    for step in 0..BURN_IN + t {
        let c = normal(rng);
        for (j, s) in state.iter_mut().enumerate() {
            let eps = common_w * c + idio_w * normal(rng);
            *s = AR1_PHI * *s + eps;
            if step >= BURN_IN {
                out.set(step - BURN_IN, j, *s);
            }
        }
    }
    out
}

/// Independent GARCH(1,1) columns with Gaussian shocks.
fn garch_matrix(t: usize, p: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let uncond = GARCH_OMEGA / (1.0 - GARCH_ALPHA - GARCH_BETA);
    let mut var = vec![uncond; p];
    let mut prev = vec![0.0; p];
    let mut out = DenseArray::zeros(&[t, p]);
    for step in 0..BURN_IN + t {
        for j in 0..p {
            var[j] = GARCH_OMEGA + GARCH_ALPHA * prev[j] * prev[j] + GARCH_BETA * var[j];
            let x = var[j].sqrt() * normal(rng);
            prev[j] = x;
            if step >= BURN_IN {
                out.set(step - BURN_IN, j, x);
            }
        }
    }
    out
}

/// Random orthogonal `n×n` matrix by Gram–Schmidt on Gaussian columns.
fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DenseArray {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        for q in &cols {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    fill(n, n, |i, j| cols[j][i])
}

/// Coefficient matrix `Q·D·Qᵀ` with eigenvalues in `[0.5, 0.9]` and the
/// largest pinned to the target spectral radius.
pub fn var1_coefficients(p: usize, rng: &mut ChaCha8Rng) -> Result<DenseArray> {
    let q = random_orthogonal(p, rng);
    let mut d = DenseArray::zeros(&[p, p]);
    for i in 0..p {
        let ev = if i == 0 {
            VAR1_SPECTRAL_RADIUS
        } else {
            rng.gen_range(VAR1_MIN_EIGENVALUE..VAR1_SPECTRAL_RADIUS)
        };
        d.set(i, i, ev);
    }
    Ok(q.matmul(&d)?.matmul(&q.transpose()?)?)
}

fn var1(t: usize, p: usize, rng: &mut ChaCha8Rng) -> Result<DenseArray> {
    let a = var1_coefficients(p, rng)?;
    let mut state = vec![0.0; p];
    let mut out = DenseArray::zeros(&[t, p]);
    for step in 0..BURN_IN + t {
        let next: Vec<f64> = (0..p)
            .map(|i| {
                let ar: f64 = a.row(i).iter().zip(&state).map(|(c, s)| c * s).sum();
                ar + RETURN_SD * normal(rng)
            })
            .collect();
        state = next;
        if step >= BURN_IN {
            out.row_mut(step - BURN_IN).copy_from_slice(&state);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_matrix_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(6, &mut rng);
        let qtq = q.transpose().unwrap().matmul(&q).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qtq.get(i, j) - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn var1_matrix_has_target_spectral_radius() {
        // Rayleigh quotient under power iteration; the spectrum is positive.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = var1_coefficients(8, &mut rng).unwrap();
        let mut v = DenseArray::full(&[8, 1], 1.0);
        for _ in 0..20000 {
            let w = a.matmul(&v).unwrap();
            let n = w.sum_sq().sqrt();
            v = w.map(|x| x / n);
        }
        let av = a.matmul(&v).unwrap();
        let lambda: f64 = av.data().iter().zip(v.data()).map(|(x, y)| x * y).sum();
        assert!((lambda - VAR1_SPECTRAL_RADIUS).abs() < 1e-4, "{lambda}");
        assert!(lambda <= VAR1_SPECTRAL_RADIUS + 1e-12);
    }
}
