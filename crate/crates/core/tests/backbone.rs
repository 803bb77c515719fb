use ndnum::DenseArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regen_tad::backbone::{
    composite_loss, from_bytes, to_bytes, Backbone, BackboneConfig, ForwardOutput, Objective,
};
use regen_tad::stats;
use regen_tad::windowing::WindowPair;
use regen_tad::TadError;
use rand_distr::StandardNormal;

fn noise(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseArray {
    let mut a = DenseArray::zeros(&[r, c]);
    for v in a.data_mut() {
        *v = rng.sample(StandardNormal);
    }
    a
}

fn windows(cfg: &BackboneConfig, n: usize, seed: u64) -> Vec<WindowPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|t| WindowPair {
            t,
            x: noise(&mut rng, cfg.l, cfg.p),
            f: noise(&mut rng, cfg.h, cfg.p),
        })
        .collect()
}

fn tiny() -> BackboneConfig {
    BackboneConfig {
        conv_filters: 4,
        embed_dim: 8,
        heads: 2,
        ff_width: 6,
        lstm_hidden: 2,
        latent_dim: 4,
        refine_hidden: 5,
        ..BackboneConfig::new(6, 2, 3)
    }
}

#[test]
fn default_shapes() {
    let cfg = BackboneConfig::new(36, 5, 20);
    let model = Backbone::new(cfg.clone(), 1).unwrap();
    let w = &windows(&cfg, 1, 2)[0];
    let out = model.forward(&w.x, &w.f).unwrap();
    assert_eq!(out.z.shape(), &[128]);
    assert_eq!(out.x_hat.shape(), &[36, 20]);
    assert_eq!(out.f1.shape(), &[5, 20]);
    assert_eq!(out.f2.shape(), &[5, 20]);
}

#[test]
fn eval_is_deterministic_and_train_mode_is_not() {
    let cfg = BackboneConfig::desk(12, 3, 5);
    let mut model = Backbone::new(cfg.clone(), 3).unwrap();
    let w = &windows(&cfg, 1, 4)[0];
    assert_eq!(model.forward(&w.x, &w.f).unwrap(), model.forward(&w.x, &w.f).unwrap());
    let a = model.forward_train(&w.x, &w.f).unwrap();
    let b = model.forward_train(&w.x, &w.f).unwrap();
    assert_ne!(a, b);
}

#[test]
fn fresh_reconstruction_error_near_input_variance() {
    let cfg = BackboneConfig::desk(36, 5, 20);
    for seed in 0..3 {
        let model = Backbone::new(cfg.clone(), seed).unwrap();
        let ws = windows(&cfg, 20, 100 + seed);
        let mut ev = model.evaluator();
        let mut mse = 0.0;
        for w in &ws {
            let (_, x_hat) = ev.reconstruct(&w.x).unwrap();
            mse += w.x.zip_map(&x_hat, |a, b| a - b).unwrap().sum_sq() / w.x.len() as f64;
        }
        mse /= ws.len() as f64;
        assert!((0.5..1.5).contains(&mse), "seed {seed}: mse {mse}");
    }
}

fn perfect(x: &DenseArray, f: &DenseArray, q: usize) -> ForwardOutput {
    ForwardOutput {
        z: DenseArray::zeros(&[q]),
        x_hat: x.clone(),
        f1: f.clone(),
        f2: f.clone(),
    }
}

#[test]
fn composite_loss_hand_values() {
    let x = DenseArray::full(&[4, 3], 0.5);
    let f = DenseArray::full(&[2, 3], -1.0);
    let w = [0.2, 0.8, 0.5];
    assert_eq!(composite_loss(&perfect(&x, &f, 3), &x, &f, w, 0.0).unwrap(), 0.0);

    let mut off = perfect(&x, &f, 3);
    off.f1 = f.map(|v| v + 1.0);
    assert!((composite_loss(&off, &x, &f, w, 0.0).unwrap() - 1.2).abs() < 1e-12);

    let mut latent = perfect(&x, &f, 3);
    latent.z = DenseArray::vector(vec![1.0, 0.0, 0.0]).unwrap();
    assert_eq!(composite_loss(&latent, &x, &f, w, 1.0).unwrap(), 1.0);
}

#[test]
fn loss_weights_are_linear() {
    let cfg = tiny();
    let model = Backbone::new(cfg.clone(), 5).unwrap();
    let w = &windows(&cfg, 1, 6)[0];
    let out = model.forward(&w.x, &w.f).unwrap();
    let base = composite_loss(&out, &w.x, &w.f, [0.2, 0.8, 0.5], 0.3).unwrap();
    for a in [0.5, 2.0, 7.25] {
        let scaled = composite_loss(&out, &w.x, &w.f, [0.2 * a, 0.8 * a, 0.5 * a], 0.3 * a).unwrap();
        assert!((scaled - a * base).abs() < 1e-10 * scaled.abs().max(1.0));
    }
}

#[test]
fn zero_refinement_leaves_first_pass_forecast() {
    let cfg = tiny();
    let mut model = Backbone::new(cfg.clone(), 7).unwrap();
    for name in ["refine2.w", "refine2.b"] {
        model.param_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let w = &windows(&cfg, 1, 8)[0];
    let out = model.forward(&w.x, &w.f).unwrap();
    assert_eq!(out.f1, out.f2);
    let first = composite_loss(&out, &w.x, &w.f, [1.0, 0.0, 0.0], 0.0).unwrap();
    let second = composite_loss(&out, &w.x, &w.f, [0.0, 1.0, 0.0], 0.0).unwrap();
    assert_eq!(first, second);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = BackboneConfig {
        latent_penalty: 0.1,
        ..tiny()
    };
    let model = Backbone::new(cfg.clone(), 9).unwrap();
    let ws = windows(&cfg, 2, 10);
    let batch: Vec<&WindowPair> = ws.iter().collect();
    let (_, grads) = model.loss_and_gradients(&batch, Objective::Composite).unwrap();
    let names: Vec<String> = model.params().map(|(n, _)| n.to_string()).collect();
    let h = 1e-6;
    for (block, name) in names.iter().enumerate() {
        let analytic = &grads[block];
        if name == "attn.k.b" {
            // A shared key offset shifts every score of a row equally.
            assert!(analytic.data().iter().all(|g| g.abs() < 1e-10), "{name}");
            continue;
        }
        let mut numeric = DenseArray::zeros(analytic.shape());
        for e in 0..analytic.len() {
            let mut plus = model.clone();
            plus.param_mut(name).unwrap().data_mut()[e] += h;
            let mut minus = model.clone();
            minus.param_mut(name).unwrap().data_mut()[e] -= h;
            let d = (plus.loss(&batch, Objective::Composite).unwrap()
                - minus.loss(&batch, Objective::Composite).unwrap())
                / (2.0 * h);
            numeric.data_mut()[e] = d;
        }
        let diff = analytic.zip_map(&numeric, |a, b| a - b).unwrap().sum_sq().sqrt();
        let scale = analytic.sum_sq().sqrt().max(numeric.sum_sq().sqrt()).max(1e-8);
        assert!(diff / scale < 1e-3, "{name}: relative error {}", diff / scale);
    }
}

#[test]
fn overfits_a_single_window() {
    let cfg = BackboneConfig {
        dropout: 0.0,
        batch_size: 1,
        ..tiny()
    };
    let mut model = Backbone::new(cfg.clone(), 11).unwrap();
    let ws = windows(&cfg, 1, 12);
    let batch: Vec<&WindowPair> = ws.iter().collect();
    let initial = model.loss(&batch, Objective::Composite).unwrap();
    model.train_epochs(&ws, Objective::Composite, 500).unwrap();
    let fin = model.loss(&batch, Objective::Composite).unwrap();
    assert!(fin < 0.01 * initial, "initial {initial}, final {fin}");
}

#[test]
fn loss_trace_decreases_on_average() {
    let cfg = BackboneConfig {
        epochs: 12,
        ..BackboneConfig::desk(12, 3, 6)
    };
    let mut model = Backbone::new(cfg.clone(), 13).unwrap();
    // Smooth sinusoid panel windows so there is structure to learn.
    let ws: Vec<WindowPair> = (0..64)
        .map(|t| {
            let mut x = DenseArray::zeros(&[12, 6]);
            let mut f = DenseArray::zeros(&[3, 6]);
            for i in 0..15 {
                for j in 0..6 {
                    let v = ((t + i) as f64 * 0.3 + j as f64).sin();
                    if i < 12 {
                        x.set(i, j, v);
                    } else {
                        f.set(i - 12, j, v);
                    }
                }
            }
            WindowPair { t, x, f }
        })
        .collect();
    let trace = model.train(&ws, Objective::Composite).unwrap();
    assert_eq!(trace.len(), 12);
    let first = stats::mean(&trace[..5]);
    let last = stats::mean(&trace[trace.len() - 5..]);
    assert!(last < first, "{trace:?}");
}

#[test]
fn zero_epochs_is_identity() {
    let cfg = BackboneConfig {
        epochs: 0,
        ..tiny()
    };
    let mut model = Backbone::new(cfg.clone(), 14).unwrap();
    let before = model.clone();
    let ws = windows(&cfg, 4, 15);
    assert!(model.train(&ws, Objective::Composite).unwrap().is_empty());
    assert!(model.train(&ws, Objective::ReconOnly).unwrap().is_empty());
    assert_eq!(model, before);
}

#[test]
fn recon_only_leaves_forecast_heads_out_of_the_graph() {
    let cfg = tiny();
    let model = Backbone::new(cfg.clone(), 16).unwrap();
    let ws = windows(&cfg, 3, 17);
    let batch: Vec<&WindowPair> = ws.iter().collect();
    let (_, grads) = model.loss_and_gradients(&batch, Objective::ReconOnly).unwrap();
    for ((name, _), g) in model.params().zip(&grads) {
        let head = name.starts_with("forecast") || name.starts_with("refine");
        if head {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let mut trained = model.clone();
    trained.train_epochs(&ws, Objective::ReconOnly, 3).unwrap();
    for name in ["forecast.w", "refine1.w", "refine2.b"] {
        assert_eq!(trained.param(name), model.param(name));
    }
    assert_ne!(trained.param("recon.w"), model.param("recon.w"));
}

#[test]
fn spiked_window_reconstructs_worse_after_training() {
    let cfg = BackboneConfig {
        epochs: 15,
        ..BackboneConfig::desk(16, 2, 8)
    };
    let mut model = Backbone::new(cfg.clone(), 18).unwrap();
    let ws = windows(&cfg, 120, 19);
    model.train(&ws, Objective::ReconOnly).unwrap();
    let mut ev = model.evaluator();
    let err = |ev: &mut regen_tad::backbone::Evaluator, x: &DenseArray| {
        let (_, x_hat) = ev.reconstruct(x).unwrap();
        x.zip_map(&x_hat, |a, b| a - b).unwrap().sum_sq()
    };
    let clean: Vec<f64> = ws.iter().map(|w| err(&mut ev, &w.x)).collect();
    let mut spiked = ws[0].x.clone();
    for j in 0..cfg.p {
        spiked.set(7, j, spiked.get(7, j) + 5.0);
    }
    assert!(err(&mut ev, &spiked) > stats::median(&clean));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = BackboneConfig {
        epochs: 2,
        ..tiny()
    };
    let mut model = Backbone::new(cfg.clone(), 20).unwrap();
    let ws = windows(&cfg, 8, 21);
    model.train(&ws, Objective::Composite).unwrap();
    let restored = from_bytes(&to_bytes(&model)).unwrap();
    assert_eq!(restored, model);
    let w = &ws[3];
    let a = model.forward(&w.x, &w.f).unwrap();
    let b = restored.forward(&w.x, &w.f).unwrap();
    for (u, v) in [(&a.z, &b.z), (&a.x_hat, &b.x_hat), (&a.f2, &b.f2)] {
        assert!(u.data().iter().zip(v.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    regen_tad::backbone::save_checkpoint(&model, &path).unwrap();
    assert_eq!(regen_tad::backbone::load_checkpoint(&path).unwrap(), model);
}

#[test]
fn corrupted_checkpoint_is_rejected() {
    let model = Backbone::new(tiny(), 22).unwrap();
    let mut bytes = to_bytes(&model);
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    // Flip a byte inside the config document so its hash no longer matches.
    let idx = bytes.windows(4).position(|w| w == b"\"l\":").unwrap() + 4;
    bytes[idx] = if bytes[idx] == b'7' { b'8' } else { b'7' };
    assert!(from_bytes(&bytes).is_err());
    assert!(from_bytes(b"garbage").is_err());
}

#[test]
fn non_finite_parameters_report_the_layer() {
    let cfg = tiny();
    let mut model = Backbone::new(cfg.clone(), 23).unwrap();
    model.param_mut("latent.b").unwrap().data_mut()[0] = f64::NAN;
    let w = &windows(&cfg, 1, 24)[0];
    match model.forward(&w.x, &w.f) {
        Err(TadError::Divergence { stage, .. }) => assert_eq!(stage, "latent"),
        other => panic!("expected divergence, got {other:?}"),
    }
}
