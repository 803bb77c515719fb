//! Acceptance criteria A1 to A11, printed as PASS/FAIL lines.
//!
//! Run a subset with `cargo test --release --test acceptance -- A4 A7`.
//! Failures are reported but only turn into a nonzero exit status when
//! `REGEN_TAD_ACCEPTANCE_STRICT` is set; errors and panics always do.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndnum::layers::{self, AttentionVars, LstmVars};
use ndnum::{DenseArray, Graph, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regen_tad::attribution::{baseline_deviation, factor_contribution, sector_match_ratio, AttributionBaseline};
use regen_tad::backbone::{composite_loss, Backbone, BackboneConfig, ForwardOutput, Objective};
use regen_tad::data_gen::{generate_scenario, Dgp, Mechanism, Placement, ScenarioConfig};
use regen_tad::decision::{flag_count, rank_decision, DecisionMode};
use regen_tad::eval::experiment::clean_fpr_spec;
use regen_tad::eval::metrics::auroc;
use regen_tad::eval::suites::{suite_spec, Suite, SuiteOptions, RECON_ONLY};
use regen_tad::eval::{run_experiment, ENSEMBLE};
use regen_tad::pipeline::{run_pipeline, PipelineConfig};
use regen_tad::purify::{purify, PurifyConfig};
use regen_tad::scoring::{ewma, ledoit_wolf_covariance, sample_covariance, standardize_and_aggregate, COMPONENTS};
use regen_tad::windowing::{build_windows, NormStats, WindowPair};

type Check = Result<(bool, String), String>;

struct Criterion {
    id: &'static str,
    title: &'static str,
    run: fn() -> Check,
}

fn ensure(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> DenseArray {
    let mut a = DenseArray::zeros(shape);
    for v in a.data_mut() {
        *v = rng.gen_range(-scale..scale);
    }
    a
}

fn weighted_sum(g: &mut Graph, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, g.value(out).shape(), 1.0);
    let prod = g.mul_const(out, w).unwrap();
    g.sum(prod)
}

/// Largest elementwise relative error of reverse-mode against central
/// differences; inputs in `zero_grad` must have an exactly zero gradient.
fn max_rel_error(inputs: &[DenseArray], zero_grad: &[usize], build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let h = 1e-6;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|a| g.param(a.clone())).collect();
    let loss = build(&mut g, &vars);
    let grads = g.backward(loss).unwrap();
    let eval = |arrays: &[DenseArray]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = arrays.iter().map(|a| g.constant(a.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).data()[0]
    };
    let mut worst = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[idx]).cloned().unwrap_or_else(|| DenseArray::zeros(input.shape()));
        if zero_grad.contains(&idx) {
            if analytic.data().iter().any(|a| a.abs() > 1e-12) {
                return f64::INFINITY;
            }
            continue;
        }
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[idx].data_mut()[e] += h;
            let mut minus = inputs.to_vec();
            minus[idx].data_mut()[e] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[e];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    worst
}

fn tiny_backbone() -> BackboneConfig {
    BackboneConfig {
        conv_filters: 4,
        embed_dim: 8,
        heads: 2,
        ff_width: 6,
        lstm_hidden: 2,
        latent_dim: 4,
        refine_hidden: 5,
        latent_penalty: 0.1,
        ..BackboneConfig::new(6, 2, 3)
    }
}

fn a1_gradients() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut kernels: Vec<(&str, f64)> = Vec::new();

    let inputs = [random(&mut rng, &[5, 4], 1.0), random(&mut rng, &[4, 3], 1.0)];
    kernels.push(("matmul", max_rel_error(&inputs, &[], &|g, v| {
        let y = g.matmul(v[0], v[1]).unwrap();
        weighted_sum(g, y, 10)
    })));

    let inputs = [random(&mut rng, &[8, 2], 1.0), random(&mut rng, &[3, 2, 4], 1.0), random(&mut rng, &[4], 1.0)];
    kernels.push(("conv1d", max_rel_error(&inputs, &[], &|g, v| {
        let y = g.conv1d(v[0], v[1], v[2]).unwrap();
        weighted_sum(g, y, 11)
    })));

    let inputs = [random(&mut rng, &[4, 6], 1.0), random(&mut rng, &[6], 1.0), random(&mut rng, &[6], 1.0)];
    kernels.push(("layer_norm", max_rel_error(&inputs, &[], &|g, v| {
        let y = g.layer_norm_rows(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(g, y, 12)
    })));

    let inputs = [random(&mut rng, &[3, 5], 2.0)];
    kernels.push(("softmax", max_rel_error(&inputs, &[], &|g, v| {
        let y = g.softmax_rows(v[0]).unwrap();
        weighted_sum(g, y, 13)
    })));

    let inputs = [random(&mut rng, &[3, 5], 2.0)];
    kernels.push(("tanh/sigmoid", max_rel_error(&inputs, &[], &|g, v| {
        let a = g.tanh(v[0]);
        let b = g.sigmoid(v[0]);
        let y = g.mul(a, b).unwrap();
        weighted_sum(g, y, 14)
    })));

    let mut inputs = vec![random(&mut rng, &[6, 12], 1.0)];
    for _ in 0..4 {
        inputs.push(random(&mut rng, &[12, 12], 0.5));
        inputs.push(random(&mut rng, &[12], 0.1));
    }
    // The key bias shifts a whole score row, which softmax ignores.
    kernels.push(("attention", max_rel_error(&inputs, &[4], &|g, v| {
        let vars = AttentionVars {
            wq: v[1],
            bq: v[2],
            wk: v[3],
            bk: v[4],
            wv: v[5],
            bv: v[6],
            wo: v[7],
            bo: v[8],
        };
        let out = layers::multihead_attention(g, v[0], &vars, 3).unwrap();
        weighted_sum(g, out.output, 15)
    })));

    let (l, d, h) = (5, 4, 3);
    let mut inputs = vec![random(&mut rng, &[l, d], 1.0)];
    for _ in 0..2 {
        inputs.push(random(&mut rng, &[d, 4 * h], 0.6));
        inputs.push(random(&mut rng, &[h, 4 * h], 0.6));
        inputs.push(random(&mut rng, &[4 * h], 0.3));
    }
    kernels.push(("bilstm", max_rel_error(&inputs, &[], &|g, v| {
        let f = LstmVars {
            w_ih: v[1],
            w_hh: v[2],
            bias: v[3],
        };
        let b = LstmVars {
            w_ih: v[4],
            w_hh: v[5],
            bias: v[6],
        };
        let y = layers::bilstm(g, v[0], &f, &b).unwrap();
        weighted_sum(g, y, 16)
    })));

    let kernel_worst = kernels.iter().map(|k| k.1).fold(0.0, f64::max);

    let cfg = tiny_backbone();
    let model = Backbone::new(cfg.clone(), 9).map_err(err)?;
    let batch_owned: Vec<WindowPair> = (0..2)
        .map(|t| WindowPair {
            t,
            x: random(&mut rng, &[cfg.l, cfg.p], 1.5),
            f: random(&mut rng, &[cfg.h, cfg.p], 1.5),
        })
        .collect();
    let batch: Vec<&WindowPair> = batch_owned.iter().collect();
    let (_, grads) = model.loss_and_gradients(&batch, Objective::Composite).map_err(err)?;
    let names: Vec<String> = model.params().map(|(n, _)| n.to_string()).collect();
    let step = 1e-6;
    let mut model_worst = 0.0f64;
    for (block, name) in names.iter().enumerate() {
        let analytic = &grads[block];
        if name == "attn.k.b" {
            ensure(analytic.data().iter().all(|g| g.abs() < 1e-10), "key bias gradient is not zero")?;
            continue;
        }
        let mut numeric = DenseArray::zeros(analytic.shape());
        for e in 0..analytic.len() {
            let mut plus = model.clone();
            plus.param_mut(name).unwrap().data_mut()[e] += step;
            let mut minus = model.clone();
            minus.param_mut(name).unwrap().data_mut()[e] -= step;
            numeric.data_mut()[e] = (plus.loss(&batch, Objective::Composite).map_err(err)?
                - minus.loss(&batch, Objective::Composite).map_err(err)?)
                / (2.0 * step);
        }
        let diff = analytic.zip_map(&numeric, |a, b| a - b).map_err(err)?.sum_sq().sqrt();
        let scale = analytic.sum_sq().sqrt().max(numeric.sum_sq().sqrt()).max(1e-8);
        model_worst = model_worst.max(diff / scale);
    }
    let detail = format!(
        "kernels max rel err {kernel_worst:.2e} ({}); full model {model_worst:.2e} over {} blocks",
        kernels.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", "),
        names.len()
    );
    Ok((kernel_worst < 1e-4 && model_worst < 1e-3, detail))
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, format!("{what}: got {a}, expected {b}"))
}

fn a2_formulas() -> Check {
    // Positional encoding: sin on even, cos on odd columns.
    let pe = layers::positional_encoding(5, 8).map_err(err)?;
    for k in 0..4 {
        close(pe.get(0, 2 * k), 0.0, 0.0, "PE(0, 2k)")?;
        close(pe.get(0, 2 * k + 1), 1.0, 0.0, "PE(0, 2k+1)")?;
    }
    close(pe.get(1, 0), 1f64.sin(), 1e-15, "PE(1, 0)")?;
    close(pe.get(1, 1), 1f64.cos(), 1e-15, "PE(1, 1)")?;
    close(pe.get(2, 2), (2.0 / 10000f64.powf(2.0 / 8.0)).sin(), 1e-15, "PE(2, 2)")?;

    // Composite loss: forecast error of 1 everywhere under w1 = 0.2, w2 = 0.8.
    let x = DenseArray::full(&[4, 3], 0.5);
    let f = DenseArray::full(&[2, 3], -1.0);
    let perfect = ForwardOutput {
        z: DenseArray::zeros(&[3]),
        x_hat: x.clone(),
        f1: f.clone(),
        f2: f.clone(),
    };
    let w = [0.2, 0.8, 0.5];
    close(composite_loss(&perfect, &x, &f, w, 0.0).map_err(err)?, 0.0, 0.0, "loss at perfect fit")?;
    let off = ForwardOutput {
        f1: f.map(|v| v + 1.0),
        f2: f.map(|v| v + 1.0),
        x_hat: x.map(|v| v + 2.0),
        ..perfect.clone()
    };
    close(composite_loss(&off, &x, &f, w, 0.0).map_err(err)?, 0.2 * 6.0 + 0.8 * 6.0 + 0.5 * 48.0, 1e-12, "composite loss")?;

    // Robust standardization and aggregation with weights summing to M.
    let d = [3.0, 1.0, 2.0, 0.0, 5.0, 4.0];
    let med = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let iqr = [2.0, 1.0, 1.0, 0.5, 4.0, 2.0];
    let weights = [1.0; COMPONENTS];
    let (s, agg) = standardize_and_aggregate(&d, &med, &iqr, &weights);
    let expect: Vec<f64> = (0..COMPONENTS).map(|m| (d[m] - med[m]).abs() / (iqr[m] + 1e-6)).collect();
    for m in 0..COMPONENTS {
        close(s[m], expect[m], 0.0, "standardized component")?;
    }
    close(agg, expect.iter().sum::<f64>() / 6.0, 1e-15, "aggregate")?;
    let mut only2 = [0.0; COMPONENTS];
    only2[1] = 6.0;
    close(standardize_and_aggregate(&d, &med, &iqr, &only2).1, s[1], 1e-15, "single-weight aggregate")?;

    // EWMA with span 5 has smoothing weight 1/3.
    let y = ewma(&[3.0, 0.0, 6.0], 5);
    close(y[0], 3.0, 0.0, "ewma[0]")?;
    close(y[1], 2.0, 1e-15, "ewma[1]")?;
    close(y[2], 2.0 / 3.0 * 2.0 + 2.0, 1e-15, "ewma[2]")?;

    // Rank rule flags ceil(alpha N).
    for (n, want) in [(100, 5), (101, 6), (20, 1), (7, 1)] {
        ensure(flag_count(0.05, n) == want, format!("flag_count(0.05, {n}) != {want}"))?;
    }
    let scores: Vec<f64> = (0..40).map(|i| (i * 7 % 40) as f64).collect();
    let flags = rank_decision(&scores, 0.05);
    let picked: Vec<usize> = (0..40).filter(|&i| flags[i]).collect();
    ensure(picked.iter().all(|&i| scores[i] >= 38.0) && picked.len() == 2, "rank rule picked the wrong windows")?;

    // Attribution: Delta, C = Delta * Gamma, normalization and mass selection.
    let base = AttributionBaseline {
        mu: vec![0.0, 1.0, 0.0],
        sigma: vec![2.0, 1.0, 0.5],
        mu_z: vec![],
    };
    let xr = DenseArray::from_rows(&[vec![2.0, 1.0, 0.5], vec![4.0, 1.0, 1.5]]).map_err(err)?;
    let delta = baseline_deviation(&xr, &base);
    ensure(delta == vec![1.5, 0.0, 2.0], format!("delta {delta:?}"))?;
    let r = factor_contribution(0, delta, vec![2.0, 5.0, 1.0], 0.8, true).map_err(err)?;
    close(r.contribution[0], 0.6, 1e-15, "C_0")?;
    close(r.contribution[1], 0.0, 0.0, "C_1")?;
    close(r.contribution[2], 0.4, 1e-15, "C_2")?;
    ensure(r.selected == vec![0, 2], format!("selected {:?}", r.selected))?;

    // Match ratio: overlap of the top |S| contributors with S.
    let r = factor_contribution(0, vec![5.0, 4.0, 1.0, 0.5], vec![1.0; 4], 0.8, true).map_err(err)?;
    close(sector_match_ratio(&r, &[0, 3]).map_err(err)?, 0.5, 0.0, "match ratio")?;
    close(sector_match_ratio(&r, &[0, 1]).map_err(err)?, 1.0, 0.0, "match ratio")?;

    Ok((true, "positional encoding, loss, standardization, aggregation, EWMA, rank rule, attribution, match ratio".into()))
}

fn pairwise_auroc(scores: &[f64], truth: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if truth[i] && !truth[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn a3_auroc() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    let mut mismatches = 0;
    while checked < 200 {
        let n = rng.gen_range(2..=50);
        let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
        if truth.iter().all(|&t| t) || truth.iter().all(|&t| !t) {
            continue;
        }
        // Coarse integer scores force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
        if auroc(&scores, &truth) != pairwise_auroc(&scores, &truth) {
            mismatches += 1;
        }
        checked += 1;
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches over {checked} instances")))
}

fn frobenius(a: &DenseArray, b: &DenseArray) -> f64 {
    a.zip_map(b, |x, y| x - y).unwrap().sum_sq().sqrt()
}

/// Draws where the shrunk estimate is at least as close to `diag(var)` as the
/// sample covariance, in Frobenius norm.
fn ledoit_wolf_wins(var: &[f64], seed0: u64) -> Result<usize, String> {
    let (n, q) = (2000, var.len());
    let mut truth = DenseArray::zeros(&[q, q]);
    for (i, v) in var.iter().enumerate() {
        truth.set(i, i, *v);
    }
    let mut wins = 0;
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed0 + draw);
        let mut x = DenseArray::zeros(&[n, q]);
        for r in 0..n {
            for c in 0..q {
                let z: f64 = rng.sample(StandardNormal);
                x.set(r, c, var[c].sqrt() * z);
            }
        }
        let (shrunk, _) = ledoit_wolf_covariance(&x).map_err(err)?;
        let sample = sample_covariance(&x).map_err(err)?;
        if frobenius(&shrunk, &truth) <= frobenius(&sample, &truth) {
            wins += 1;
        }
    }
    Ok(wins)
}

fn a4_ledoit_wolf() -> Check {
    let graded = ledoit_wolf_wins(&[1.0, 2.0, 3.0, 4.0, 5.0], 400)?;
    let spherical = ledoit_wolf_wins(&[1.0; 5], 400)?;
    Ok((
        graded >= 45,
        format!("shrunk error <= sample error in {graded}/50 draws for diag(1..5); {spherical}/50 for the identity"),
    ))
}

fn a5_purification() -> Check {
    let pcfg = PurifyConfig::default();
    let bcfg = BackboneConfig::desk(36, 5, 20);
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..5u64 {
        let panel = generate_scenario(&ScenarioConfig::new(Dgp::IidGaussian, 300, 20, 500 + seed)).map_err(err)?.0;
        let norm = NormStats::fit(&panel.data, 0..panel.t()).map_err(err)?;
        let mut windows: Vec<WindowPair> =
            build_windows(&panel, 36, 5).map_err(err)?.iter().map(|w| norm.apply_window(w)).collect();
        let n = windows.len();
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut spiked: Vec<usize> = order[..n / 10].to_vec();
        spiked.sort_unstable();
        for &i in &spiked {
            let row = rng.gen_range(0..36);
            let sign = if rng.gen_bool(0.5) { 5.0 } else { -5.0 };
            for c in 0..20 {
                windows[i].x.set(row, c, sign);
            }
        }
        let spiked_t: Vec<usize> = spiked.iter().map(|&i| windows[i].t).collect();
        let (_, report) = purify(&windows, &bcfg, &pcfg, 700 + seed).map_err(err)?;
        let caught = spiked_t.iter().filter(|t| report.removed.binary_search(t).is_ok()).count();
        let recall = caught as f64 / spiked_t.len() as f64;
        let frac = report.removed_fraction();
        let cap_ok = report.removed.len() <= pcfg.removal_cap(n);
        ok &= recall >= 0.8 && frac <= 0.3 && cap_ok;
        lines.push(format!("seed {seed}: {caught}/{} caught, {:.3} removed", spiked_t.len(), frac));
    }
    Ok((ok, lines.join("; ")))
}

fn a6_rank_exactness() -> Check {
    let mut cfg = PipelineConfig::desk();
    cfg.decision.mode = DecisionMode::Rank;
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, dgp) in Dgp::CLEAN_AUDIT.iter().enumerate() {
        let panel = generate_scenario(&ScenarioConfig::new(*dgp, 500, 20, 800 + i as u64)).map_err(err)?.0;
        let run = run_pipeline(&panel, &cfg, 800 + i as u64).map_err(err)?;
        let n = run.scores.len();
        let want = flag_count(0.05, n);
        ok &= run.detection.flagged() == want;
        lines.push(format!("{dgp} {}/{n}", run.detection.flagged()));
    }
    Ok((ok, format!("flagged/N_test (ceil(0.05 N) = {}): {}", flag_count(0.05, 100), lines.join(", "))))
}

fn threshold_desk() -> PipelineConfig {
    let mut cfg = PipelineConfig::desk();
    cfg.decision.mode = DecisionMode::Threshold;
    cfg
}

fn a7_clean_fpr() -> Check {
    let spec = clean_fpr_spec(&[Dgp::IidGaussian], &threshold_desk(), 500, 20, 20, 0);
    let result = run_experiment(&spec).map_err(err)?;
    ensure(result.failures() == 0, "replications failed")?;
    let fpr = result.summary(0, ENSEMBLE).ok_or("no ensemble summary")?.fpr;
    Ok(((0.02..=0.09).contains(&fpr), format!("mean FPR {fpr:.4} over 20 seeds, target [0.02, 0.09]")))
}

fn a8_mean_shift() -> Check {
    let opts = SuiteOptions {
        replications: 10,
        pipeline: threshold_desk(),
        mechanisms: vec![Mechanism::MeanShift],
        gammas: vec![0.05],
        placements: vec![Placement::Late],
        ..SuiteOptions::default()
    };
    let spec = suite_spec(Suite::Structural, &opts).map_err(err)?;
    let result = run_experiment(&spec).map_err(err)?;
    ensure(result.failures() == 0, "replications failed")?;
    let ens = result.summary(0, ENSEMBLE).ok_or("no ensemble summary")?;
    let recon = result.summary(0, RECON_ONLY).ok_or("no ablation summary")?;
    let f1_ok = ens.f1 >= 0.5;
    let fpr_ok = ens.fpr <= 0.02;
    let beats = ens.f1 > recon.f1;
    Ok((
        f1_ok && fpr_ok && beats,
        format!(
            "F1 {:.3} (>= 0.5 {}), FPR {:.3} (<= 0.02 {}), ensemble F1 vs s2-only {:.3} ({})",
            ens.f1,
            verdict(f1_ok),
            ens.fpr,
            verdict(fpr_ok),
            recon.f1,
            verdict(beats)
        ),
    ))
}

fn a9_horizons() -> Check {
    let opts = SuiteOptions {
        replications: 5,
        pipeline: threshold_desk(),
        horizons: vec![1, 5, 20],
        ..SuiteOptions::default()
    };
    let spec = suite_spec(Suite::HorizonSweep, &opts).map_err(err)?;
    let result = run_experiment(&spec).map_err(err)?;
    ensure(result.failures() == 0, "replications failed")?;
    let mut f1 = Vec::new();
    let mut au = Vec::new();
    for (i, cell) in spec.cells.iter().enumerate() {
        let s = result.summary(i, ENSEMBLE).ok_or("missing summary")?;
        f1.push((cell.h, s.f1));
        au.push(s.auroc);
    }
    let spread = au.iter().copied().fold(f64::NEG_INFINITY, f64::max) - au.iter().copied().fold(f64::INFINITY, f64::min);
    let f1_of = |h| f1.iter().find(|(x, _)| *x == h).map(|p| p.1).unwrap_or(f64::NAN);
    let direction = f1_of(1) >= f1_of(20);
    Ok((
        direction && spread < 0.15,
        format!(
            "F1 by H {:?}; AUROC {:?}; spread {spread:.3}",
            f1.iter().map(|(h, v)| format!("{h}:{v:.3}")).collect::<Vec<_>>(),
            au.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
        ),
    ))
}

fn a10_attribution() -> Check {
    let opts = SuiteOptions {
        replications: 5,
        mechanisms: vec![Mechanism::MeanShift, Mechanism::Spike],
        ..SuiteOptions::default()
    };
    let spec = suite_spec(Suite::SectorAttribution, &opts).map_err(err)?;
    let result = run_experiment(&spec).map_err(err)?;
    ensure(result.failures() == 0, "replications failed")?;
    let mr = |i| result.summary(i, ENSEMBLE).map(|s| s.match_ratio).unwrap_or(f64::NAN);
    let (sustained, burst) = (mr(0), mr(1));
    Ok((
        sustained >= 0.5,
        format!("match ratio mean-shift {sustained:.3} (>= 0.5), spike {burst:.3} (no floor)"),
    ))
}

const SMALL_CONFIG: &str = r#"
seed = 5
scenario.dgp = "ar1-cross-cov"
scenario.mechanism = "mean-shift"
scenario.gamma = 0.1
scenario.t = 200
scenario.p = 4
window.l = 12
window.h = 3
backbone.conv_filters = 4
backbone.embed_dim = 8
backbone.heads = 2
backbone.ff_width = 8
backbone.lstm_hidden = 3
backbone.latent_dim = 4
backbone.refine_hidden = 8
backbone.epochs = 3
scoring.knn_k = 5
"#;

fn same_files(a: &Path, b: &Path) -> Result<usize, String> {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .map_err(err)?
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != "timings.csv")
        .collect();
    names.sort();
    for n in &names {
        let x = std::fs::read(a.join(n)).map_err(err)?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{n}: {e}"))?;
        ensure(x == y, format!("{n} differs between reruns"))?;
    }
    Ok(names.len())
}

fn a11_determinism_and_leakage() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let cfg = tmp.path().join("config.toml");
    std::fs::write(&cfg, SMALL_CONFIG).map_err(err)?;
    let mut compared = 0;
    for cmd in ["simulate", "detect"] {
        let dirs = [tmp.path().join(format!("{cmd}-a")), tmp.path().join(format!("{cmd}-b"))];
        for d in &dirs {
            let out = Command::new(env!("CARGO_BIN_EXE_regen-tad"))
                .env("REGEN_TAD_WORKERS", "1")
                .args([cmd, "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()])
                .output()
                .map_err(err)?;
            ensure(out.status.success(), format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr)))?;
        }
        compared += same_files(&dirs[0], &dirs[1])?;
    }

    let run_cfg = regen_tad::config::RunConfig::from_toml_str(SMALL_CONFIG).map_err(err)?;
    let panel = generate_scenario(&run_cfg.scenario).map_err(err)?.0;
    let base = run_pipeline(&panel, &run_cfg.pipeline, run_cfg.seed).map_err(err)?;
    let mut mutated = panel.clone();
    for r in base.t1..panel.t() {
        for c in 0..panel.p() {
            let v = mutated.data.get(r, c);
            mutated.data.set(r, c, 10.0 * v + 50.0);
        }
    }
    let other = run_pipeline(&mutated, &run_cfg.pipeline, run_cfg.seed).map_err(err)?;
    let hash_same = base.calibration.content_hash() == other.calibration.content_hash();
    let norm_same = base.norm == other.norm && base.attribution_baseline == other.attribution_baseline;
    let scores_moved = base.scores.raw != other.scores.raw;
    Ok((
        hash_same && norm_same && scores_moved,
        format!(
            "{compared} artifacts byte-identical across reruns; calibration hash unchanged under test-row mutation: {hash_same}; normalization unchanged: {norm_same}"
        ),
    ))
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

const CRITERIA: [Criterion; 11] = [
    Criterion { id: "A1", title: "autodiff gradients", run: a1_gradients },
    Criterion { id: "A2", title: "formula hand values", run: a2_formulas },
    Criterion { id: "A3", title: "AUROC oracle", run: a3_auroc },
    Criterion { id: "A4", title: "Ledoit-Wolf dominance", run: a4_ledoit_wolf },
    Criterion { id: "A5", title: "purification recovery", run: a5_purification },
    Criterion { id: "A6", title: "rank-mode flagged fraction", run: a6_rank_exactness },
    Criterion { id: "A7", title: "threshold-mode clean FPR", run: a7_clean_fpr },
    Criterion { id: "A8", title: "mean-shift detection power", run: a8_mean_shift },
    Criterion { id: "A9", title: "horizon direction", run: a9_horizons },
    Criterion { id: "A10", title: "attribution recovery", run: a10_attribution },
    Criterion { id: "A11", title: "determinism and leakage", run: a11_determinism_and_leakage },
];

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with('A')).collect();
    let strict = std::env::var_os("REGEN_TAD_ACCEPTANCE_STRICT").is_some();
    let (mut passed, mut failed, mut errored) = (0, 0, 0);
    for c in CRITERIA.iter().filter(|c| wanted.is_empty() || wanted.iter().any(|w| w == c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(Ok((true, d))) => {
                passed += 1;
                ("PASS", d)
            }
            Ok(Ok((false, d))) => {
                failed += 1;
                ("FAIL", d)
            }
            Ok(Err(e)) => {
                errored += 1;
                ("ERROR", e)
            }
            Err(_) => {
                errored += 1;
                ("ERROR", "panicked".to_string())
            }
        };
        println!("{tag} {} {} [{secs:.1} s]: {detail}", c.id, c.title);
    }
    println!("acceptance: {passed} passed, {failed} failed, {errored} errors");
    if errored > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
