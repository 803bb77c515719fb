use std::collections::BTreeMap;

use ndnum::layers::{self, AttentionVars, LstmVars};
use ndnum::{DenseArray, Graph, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::BackboneConfig;
use crate::error::{Result, TadError};
use crate::rng::{stream, Stream};
use crate::windowing::WindowPair;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const FORGET_BIAS: f64 = 1.0;

/// Which terms enter the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Weighted forecast, refined-forecast, reconstruction, and latent terms.
    Composite,
    /// Reconstruction error alone; forecast and refinement heads stay out of
    /// the graph.
    ReconOnly,
}

/// Outputs of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    /// Length `q`.
    pub z: DenseArray,
    /// `L×p`
    pub x_hat: DenseArray,
    /// `H×p`
    pub f1: DenseArray,
    /// `H×p`
    pub f2: DenseArray,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct AdamState {
    pub step: u64,
    pub m: Vec<DenseArray>,
    pub v: Vec<DenseArray>,
}

/// Trainable parameters, optimizer moments, and the dropout/shuffle stream.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    names: Vec<String>,
    values: Vec<DenseArray>,
    index: BTreeMap<String, usize>,
    pos: DenseArray,
    pub(crate) adam: AdamState,
    pub(crate) rng: ChaCha8Rng,
}

impl PartialEq for Backbone {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.names == other.names
            && self.values == other.values
            && self.adam == other.adam
            && self.rng == other.rng
    }
}

struct Traced {
    z: Var,
    x_hat: Var,
    f1: Option<Var>,
    f2: Option<Var>,
}

fn check(g: &Graph, v: Var, layer: &str) -> Result<()> {
    if g.value(v).is_finite() {
        Ok(())
    } else {
        Err(TadError::divergence(layer, "non-finite activations"))
    }
}

/// Squared Frobenius norm of `target − v`.
fn sq_error(g: &mut Graph, v: Var, target: &DenseArray) -> Result<Var> {
    let neg = g.scale(v, -1.0);
    let diff = g.add_const(neg, target)?;
    Ok(g.sum_sq(diff))
}

impl Backbone {
    /// Fresh parameters drawn from the model-initialization stream of `seed`.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut init = stream(seed, Stream::ModelInit);
        let mut specs: Vec<(String, Vec<usize>, Init)> = Vec::new();
        let mut c_in = c.p;
        for i in 0..c.conv_layers {
            let fan = (c.conv_width * c_in, c.conv_width * c.conv_filters);
            specs.push((format!("conv{i}.kernel"), vec![c.conv_width, c_in, c.conv_filters], Init::Glorot(fan)));
            specs.push((format!("conv{i}.bias"), vec![c.conv_filters], Init::Zero));
            c_in = c.conv_filters;
        }
        let d = c.embed_dim;
        let mut dense = |name: &str, i: usize, o: usize| {
            specs.push((format!("{name}.w"), vec![i, o], Init::Glorot((i, o))));
            specs.push((format!("{name}.b"), vec![o], Init::Zero));
        };
        dense("proj", c_in, d);
        dense("attn.q", d, d);
        dense("attn.k", d, d);
        dense("attn.v", d, d);
        dense("attn.o", d, d);
        dense("ff1", d, c.ff_width);
        dense("ff2", c.ff_width, d);
        let pooled = d + 2 * c.lstm_hidden;
        dense("latent", pooled, c.latent_dim);
        dense("recon", c.latent_dim, c.l * c.p);
        dense("forecast", c.latent_dim, c.h * c.p);
        dense("refine1", c.h * c.p + c.latent_dim, c.refine_hidden);
        dense("refine2", c.refine_hidden, c.h * c.p);
        for ln in ["ln1", "ln2"] {
            specs.push((format!("{ln}.gamma"), vec![d], Init::One));
            specs.push((format!("{ln}.beta"), vec![d], Init::Zero));
        }
        let hid = c.lstm_hidden;
        for dir in ["lstm_fwd", "lstm_bwd"] {
            specs.push((format!("{dir}.w_ih"), vec![d, 4 * hid], Init::Glorot((d, 4 * hid))));
            specs.push((format!("{dir}.w_hh"), vec![hid, 4 * hid], Init::Glorot((hid, 4 * hid))));
            specs.push((format!("{dir}.bias"), vec![4 * hid], Init::ForgetBias(hid)));
        }

        let mut names = Vec::with_capacity(specs.len());
        let mut values = Vec::with_capacity(specs.len());
        for (name, shape, kind) in specs {
            let mut a = DenseArray::zeros(&shape);
            match kind {
                Init::Zero => {}
                Init::One => a.data_mut().iter_mut().for_each(|v| *v = 1.0),
                Init::Glorot((fi, fo)) => {
                    let bound = (6.0 / (fi + fo) as f64).sqrt();
                    a.data_mut()
                        .iter_mut()
                        .for_each(|v| *v = init.gen_range(-bound..bound));
                }
                Init::ForgetBias(h) => a.data_mut()[h..2 * h]
                    .iter_mut()
                    .for_each(|v| *v = FORGET_BIAS),
            }
            names.push(name);
            values.push(a);
        }
        Self::assemble(config, names, values, None, stream(seed, Stream::Training))
    }

    pub(crate) fn assemble(
        config: BackboneConfig,
        names: Vec<String>,
        values: Vec<DenseArray>,
        adam: Option<AdamState>,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let pos = layers::positional_encoding(config.l, config.embed_dim)?;
        let adam = adam.unwrap_or_else(|| AdamState {
            step: 0,
            m: values.iter().map(|v| DenseArray::zeros(v.shape())).collect(),
            v: values.iter().map(|v| DenseArray::zeros(v.shape())).collect(),
        });
        Ok(Self {
            config,
            names,
            values,
            index,
            pos,
            adam,
            rng,
        })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Named parameter arrays in registration order.
    pub fn params(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn param(&self, name: &str) -> Option<&DenseArray> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(DenseArray::len).sum()
    }

    pub(crate) fn parts(&self) -> (&[String], &[DenseArray]) {
        (&self.names, &self.values)
    }

    fn v(&self, vars: &[Var], name: &str) -> Var {
        vars[self.index[name]]
    }

    fn dense(&self, g: &mut Graph, vars: &[Var], x: Var, name: &str) -> Result<Var> {
        let w = self.v(vars, &format!("{name}.w"));
        let b = self.v(vars, &format!("{name}.b"));
        Ok(layers::linear(g, x, w, b)?)
    }

    fn dropout(&self, g: &mut Graph, v: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Result<Var> {
        match rng {
            Some(r) if self.config.dropout > 0.0 => {
                let mask = layers::dropout_mask(g.value(v).shape(), self.config.dropout, || r.gen::<f64>());
                Ok(g.mul_const(v, mask)?)
            }
            _ => Ok(v),
        }
    }

    /// Records one window's forward pass. `future` enables the forecast and
    /// refinement heads; `rng` enables dropout.
    fn trace(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        future: Option<&DenseArray>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Traced> {
        let c = &self.config;
        let mut h = x;
        for i in 0..c.conv_layers {
            let k = self.v(vars, &format!("conv{i}.kernel"));
            let b = self.v(vars, &format!("conv{i}.bias"));
            let conv = g.conv1d(h, k, b)?;
            h = g.relu(conv);
            check(g, h, "conv")?;
        }
        let proj = self.dense(g, vars, h, "proj")?;
        let emb = g.add_const(proj, &self.pos)?;
        check(g, emb, "projection")?;

        let ln1 = g.layer_norm_rows(emb, self.v(vars, "ln1.gamma"), self.v(vars, "ln1.beta"), LAYER_NORM_EPS)?;
        let attn = AttentionVars {
            wq: self.v(vars, "attn.q.w"),
            bq: self.v(vars, "attn.q.b"),
            wk: self.v(vars, "attn.k.w"),
            bk: self.v(vars, "attn.k.b"),
            wv: self.v(vars, "attn.v.w"),
            bv: self.v(vars, "attn.v.b"),
            wo: self.v(vars, "attn.o.w"),
            bo: self.v(vars, "attn.o.b"),
        };
        let a = layers::multihead_attention(g, ln1, &attn, c.heads)?.output;
        let a = self.dropout(g, a, &mut rng)?;
        let u = g.add(emb, a)?;
        let ln2 = g.layer_norm_rows(u, self.v(vars, "ln2.gamma"), self.v(vars, "ln2.beta"), LAYER_NORM_EPS)?;
        let ff = self.dense(g, vars, ln2, "ff1")?;
        let ff = g.relu(ff);
        let ff = self.dense(g, vars, ff, "ff2")?;
        let ff = self.dropout(g, ff, &mut rng)?;
        let enc = g.add(u, ff)?;
        check(g, enc, "attention")?;
        let h_attn = g.mean_rows(enc)?;

        let fwd = LstmVars {
            w_ih: self.v(vars, "lstm_fwd.w_ih"),
            w_hh: self.v(vars, "lstm_fwd.w_hh"),
            bias: self.v(vars, "lstm_fwd.bias"),
        };
        let bwd = LstmVars {
            w_ih: self.v(vars, "lstm_bwd.w_ih"),
            w_hh: self.v(vars, "lstm_bwd.w_hh"),
            bias: self.v(vars, "lstm_bwd.bias"),
        };
        let rec = layers::bilstm(g, emb, &fwd, &bwd)?;
        check(g, rec, "bilstm")?;
        let h_rnn = g.mean_rows(rec)?;

        let pooled = g.concat_cols(&[h_attn, h_rnn])?;
        let z = self.dense(g, vars, pooled, "latent")?;
        check(g, z, "latent")?;
        let x_hat = self.dense(g, vars, z, "recon")?;
        let x_hat = g.reshape(x_hat, vec![c.l, c.p])?;
        check(g, x_hat, "reconstruction head")?;

        let (f1, f2) = match future {
            None => (None, None),
            Some(f) => {
                let f1 = self.dense(g, vars, z, "forecast")?;
                let f1 = g.reshape(f1, vec![c.h, c.p])?;
                check(g, f1, "forecast head")?;
                let neg = g.scale(f1, -1.0);
                let resid = g.add_const(neg, f)?;
                let resid = g.reshape(resid, vec![1, c.h * c.p])?;
                let input = g.concat_cols(&[resid, z])?;
                let hidden = self.dense(g, vars, input, "refine1")?;
                let hidden = g.relu(hidden);
                let corr = self.dense(g, vars, hidden, "refine2")?;
                let corr = g.reshape(corr, vec![c.h, c.p])?;
                let f2 = g.add(f1, corr)?;
                check(g, f2, "refinement")?;
                (Some(f1), Some(f2))
            }
        };
        Ok(Traced { z, x_hat, f1, f2 })
    }

    fn loss_var(
        &self,
        g: &mut Graph,
        t: &Traced,
        w: &WindowPair,
        objective: Objective,
    ) -> Result<Var> {
        let recon = sq_error(g, t.x_hat, &w.x)?;
        if objective == Objective::ReconOnly {
            return Ok(recon);
        }
        let [w1, w2, wr] = self.config.loss_weights;
        let (f1, f2) = (t.f1.expect("forecast traced"), t.f2.expect("forecast traced"));
        let e1 = sq_error(g, f1, &w.f)?;
        let e2 = sq_error(g, f2, &w.f)?;
        let a = g.scale(e1, w1);
        let b = g.scale(e2, w2);
        let r = g.scale(recon, wr);
        let mut total = g.add(a, b)?;
        total = g.add(total, r)?;
        if self.config.latent_penalty != 0.0 {
            let zz = g.sum_sq(t.z);
            let zz = g.scale(zz, self.config.latent_penalty);
            total = g.add(total, zz)?;
        }
        Ok(total)
    }

    /// Mean loss over `batch` recorded on `g`, whose leaves are `vars`.
    fn batch_loss(
        &self,
        g: &mut Graph,
        vars: &[Var],
        batch: &[&WindowPair],
        objective: Objective,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut total: Option<Var> = None;
        for w in batch {
            let x = g.constant(w.x.clone());
            let future = (objective == Objective::Composite).then_some(&w.f);
            let t = self.trace(g, vars, x, future, rng.as_deref_mut())?;
            let l = self.loss_var(g, &t, w, objective)?;
            total = Some(match total {
                None => l,
                Some(acc) => g.add(acc, l)?,
            });
        }
        let total = total.ok_or_else(|| TadError::Other("empty batch".into()))?;
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    /// Mean loss over `batch` without dropout.
    pub fn loss(&self, batch: &[&WindowPair], objective: Objective) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.constant(v.clone())).collect();
        let l = self.batch_loss(&mut g, &vars, batch, objective, None)?;
        Ok(g.value(l).data()[0])
    }

    /// Mean loss and its gradient for every parameter (zeros for parameters
    /// outside the loss graph), without dropout.
    pub fn loss_and_gradients(
        &self,
        batch: &[&WindowPair],
        objective: Objective,
    ) -> Result<(f64, Vec<DenseArray>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.param(v.clone())).collect();
        let l = self.batch_loss(&mut g, &vars, batch, objective, None)?;
        let mut grads = g.backward(l)?;
        let out = vars
            .iter()
            .zip(&self.values)
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| DenseArray::zeros(p.shape())))
            .collect();
        Ok((g.value(l).data()[0], out))
    }

    fn step(&mut self, batch: &[&WindowPair], objective: Objective) -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.param(v.clone())).collect();
        let mut rng = self.rng.clone();
        let loss = self.batch_loss(&mut g, &vars, batch, objective, Some(&mut rng))?;
        self.rng = rng;
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TadError::divergence("training", format!("loss is {value}")));
        }
        let grads = g.backward(loss)?;
        self.adam.step += 1;
        let t = self.adam.step as f64;
        let c1 = 1.0 - ADAM_BETA1.powf(t);
        let c2 = 1.0 - ADAM_BETA2.powf(t);
        let lr = self.config.lr;
        for (i, &v) in vars.iter().enumerate() {
            let Some(grad) = grads.get(v) else { continue };
            let m = self.adam.m[i].data_mut();
            let s = self.adam.v[i].data_mut();
            let p = self.values[i].data_mut();
            for k in 0..p.len() {
                let gk = grad.data()[k];
                m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * gk;
                s[k] = ADAM_BETA2 * s[k] + (1.0 - ADAM_BETA2) * gk * gk;
                p[k] -= lr * (m[k] / c1) / ((s[k] / c2).sqrt() + ADAM_EPS);
            }
        }
        Ok(value)
    }

    /// Adam over shuffled mini-batches for `config.epochs` epochs; returns the
    /// mean training loss of each epoch.
    pub fn train(&mut self, windows: &[WindowPair], objective: Objective) -> Result<Vec<f64>> {
        self.train_epochs(windows, objective, self.config.epochs)
    }

    pub fn train_epochs(
        &mut self,
        windows: &[WindowPair],
        objective: Objective,
        epochs: usize,
    ) -> Result<Vec<f64>> {
        if epochs == 0 {
            return Ok(Vec::new());
        }
        if windows.is_empty() {
            return Err(TadError::Data("no training windows".into()));
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut trace = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut self.rng);
            let mut sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&WindowPair> = chunk.iter().map(|&i| &windows[i]).collect();
                let loss = self.step(&batch, objective).map_err(|e| match e {
                    TadError::Divergence { stage, detail } => {
                        TadError::divergence(stage, format!("{detail} at epoch {epoch}"))
                    }
                    other => other,
                })?;
                sum += loss * batch.len() as f64;
            }
            trace.push(sum / windows.len() as f64);
        }
        Ok(trace)
    }

    /// Evaluation-mode pass with all heads.
    pub fn forward(&self, x: &DenseArray, f: &DenseArray) -> Result<ForwardOutput> {
        self.evaluator().forward(x, f)
    }

    /// Training-mode pass (dropout active), drawing masks from the state's stream.
    pub fn forward_train(&mut self, x: &DenseArray, f: &DenseArray) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.constant(v.clone())).collect();
        let xv = g.constant(x.clone());
        let mut rng = self.rng.clone();
        let t = self.trace(&mut g, &vars, xv, Some(f), Some(&mut rng))?;
        self.rng = rng;
        Ok(collect(&g, &t))
    }

    /// Reusable evaluation context holding the parameters on one tape.
    pub fn evaluator(&self) -> Evaluator<'_> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.constant(v.clone())).collect();
        let base = g.len();
        Evaluator {
            model: self,
            g,
            vars,
            base,
        }
    }

    /// `𝒮(X) = ‖z(X) − μ_z‖²` and its gradient with respect to every input cell.
    pub fn latent_score_gradient(&self, x: &DenseArray, mu_z: &[f64]) -> Result<(f64, DenseArray)> {
        if mu_z.len() != self.config.latent_dim {
            return Err(TadError::Other(format!(
                "latent center has {} entries, model latent width is {}",
                mu_z.len(),
                self.config.latent_dim
            )));
        }
        let mut g = Graph::new();
        let vars: Vec<Var> = self.values.iter().map(|v| g.constant(v.clone())).collect();
        let xv = g.leaf(x.clone(), true);
        let t = self.trace(&mut g, &vars, xv, None, None)?;
        let center = DenseArray::new(vec![1, mu_z.len()], mu_z.iter().map(|m| -m).collect())?;
        let d = g.add_const(t.z, &center)?;
        let s = g.sum_sq(d);
        let grads = g.backward(s)?;
        let grad = grads
            .get(xv)
            .cloned()
            .ok_or_else(|| TadError::Other("input gradient unavailable".into()))?;
        Ok((g.value(s).data()[0], grad))
    }
}

fn collect(g: &Graph, t: &Traced) -> ForwardOutput {
    let z = g.value(t.z).clone();
    let q = z.len();
    ForwardOutput {
        z: z.reshape(vec![q]).expect("latent is non-empty"),
        x_hat: g.value(t.x_hat).clone(),
        f1: g.value(t.f1.expect("forecast traced")).clone(),
        f2: g.value(t.f2.expect("forecast traced")).clone(),
    }
}

enum Init {
    Zero,
    One,
    Glorot((usize, usize)),
    ForgetBias(usize),
}

/// Evaluation passes that reuse one tape; see [`Backbone::evaluator`].
pub struct Evaluator<'a> {
    model: &'a Backbone,
    g: Graph,
    vars: Vec<Var>,
    base: usize,
}

impl Evaluator<'_> {
    pub fn forward(&mut self, x: &DenseArray, f: &DenseArray) -> Result<ForwardOutput> {
        self.g.truncate(self.base);
        let xv = self.g.constant(x.clone());
        let t = self.model.trace(&mut self.g, &self.vars, xv, Some(f), None)?;
        Ok(collect(&self.g, &t))
    }

    /// Latent and reconstruction only.
    pub fn reconstruct(&mut self, x: &DenseArray) -> Result<(DenseArray, DenseArray)> {
        self.g.truncate(self.base);
        let xv = self.g.constant(x.clone());
        let t = self.model.trace(&mut self.g, &self.vars, xv, None, None)?;
        let z = self.g.value(t.z).clone();
        let q = z.len();
        Ok((z.reshape(vec![q])?, self.g.value(t.x_hat).clone()))
    }
}

/// `w1‖F−F̂₁‖² + w2‖F−F̂₂‖² + wr‖X−X̂‖² + λ‖z‖²`.
pub fn composite_loss(
    out: &ForwardOutput,
    x: &DenseArray,
    f: &DenseArray,
    weights: [f64; 3],
    latent_penalty: f64,
) -> Result<f64> {
    let sq = |a: &DenseArray, b: &DenseArray| -> Result<f64> {
        Ok(a.zip_map(b, |u, v| u - v)?.sum_sq())
    };
    Ok(weights[0] * sq(f, &out.f1)?
        + weights[1] * sq(f, &out.f2)?
        + weights[2] * sq(x, &out.x_hat)?
        + latent_penalty * out.z.sum_sq())
}
