//! Scaled-down acoustic model: frame stacking, tanh projection, a single GRU
//! layer, a ReLU feed-forward layer with inverted dropout and a linear
//! output over `alphabet_size + 1` classes (blank last).
//!
//! Parameters live in one flat [`ParamVector`] so that agents can exchange
//! and average them as plain vectors. Backpropagation is hand-written and
//! exact; `tests/gradients.rs` checks it against finite differences.

use crate::ctc::{self, LogitMatrix};
use crate::data::{FeatureSequence, Transcript};
use crate::matrix::{affine, matvec_acc, matvec_t_acc, outer_acc, Matrix};
use crate::par::map_nested;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("divergence detected at optimizer step {step}")]
    Divergence { step: u64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Ctc(#[from] ctc::CtcError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_features: usize,
    /// Frames concatenated per model step.
    pub stack: usize,
    pub hidden: usize,
    pub ff_dim: usize,
    /// Symbols excluding blank.
    pub alphabet_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_features: 16,
            stack: 2,
            hidden: 32,
            ff_dim: 32,
            alphabet_size: 5,
            dropout_rate: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [
            ("input_features", self.input_features),
            ("stack", self.stack),
            ("hidden", self.hidden),
            ("ff_dim", self.ff_dim),
            ("alphabet_size", self.alphabet_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        self.alphabet_size + 1
    }

    /// Model steps produced from `valid_len` input frames.
    pub fn downsampled_len(&self, valid_len: usize) -> usize {
        valid_len.div_ceil(self.stack)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered registry of named tensors inside a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    entries: Vec<ParamShape>,
    total: usize,
}

impl ParamLayout {
    pub fn push(&mut self, name: &str, dims: &[usize]) -> std::ops::Range<usize> {
        let shape = ParamShape { name: name.to_owned(), dims: dims.to_vec(), offset: self.total };
        self.total += shape.len();
        let range = shape.range();
        self.entries.push(shape);
        range
    }

    pub fn entries(&self) -> &[ParamShape] {
        &self.entries
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamShape> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Flat parameters plus their shape registry.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self, NnError> {
        if values.len() != layout.total() {
            return Err(NnError::Dimension {
                what: "parameter vector",
                expected: layout.total(),
                got: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self { values: vec![0.0; layout.total()], layout }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn view(&self, name: &str) -> Option<&[f64]> {
        self.layout.get(name).map(|s| &self.values[s.range()])
    }

    /// Splits into one owned buffer per registered tensor.
    pub fn unflatten(&self) -> Vec<(String, Vec<f64>)> {
        self.layout
            .entries()
            .iter()
            .map(|s| (s.name.clone(), self.values[s.range()].to_vec()))
            .collect()
    }

    /// Inverse of [`ParamVector::unflatten`]; tensors must match the layout order.
    pub fn flatten(layout: Arc<ParamLayout>, parts: &[(String, Vec<f64>)]) -> Result<Self, NnError> {
        let mut values = Vec::with_capacity(layout.total());
        for (shape, (name, data)) in layout.entries().iter().zip(parts) {
            if *name != shape.name || data.len() != shape.len() {
                return Err(NnError::Dimension {
                    what: "parameter tensor",
                    expected: shape.len(),
                    got: data.len(),
                });
            }
            values.extend_from_slice(data);
        }
        Self::new(layout, values)
    }
}

#[derive(Debug, Clone)]
struct Offsets {
    in_w: std::ops::Range<usize>,
    in_b: std::ops::Range<usize>,
    wz: std::ops::Range<usize>,
    uz: std::ops::Range<usize>,
    bz: std::ops::Range<usize>,
    wr: std::ops::Range<usize>,
    ur: std::ops::Range<usize>,
    br: std::ops::Range<usize>,
    wn: std::ops::Range<usize>,
    un: std::ops::Range<usize>,
    bn: std::ops::Range<usize>,
    ff_w: std::ops::Range<usize>,
    ff_b: std::ops::Range<usize>,
    out_w: std::ops::Range<usize>,
    out_b: std::ops::Range<usize>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct Tape {
    steps: usize,
    stacked: Vec<f64>,
    proj: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    ff: Vec<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)); `None` when inactive.
    mask: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

impl Tape {
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// GRU hidden state after step `t`.
    pub fn hidden(&self, t: usize) -> &[f64] {
        let h = self.h.len() / self.steps;
        &self.h[t * h..(t + 1) * h]
    }
}

/// The acoustic model's architecture; parameters are passed separately.
#[derive(Debug, Clone)]
pub struct AcousticModel {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
    off: Offsets,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl AcousticModel {
    pub fn new(config: ModelConfig) -> Result<Self, NnError> {
        config.validate()?;
        let (f, h, d, c) =
            (config.input_features * config.stack, config.hidden, config.ff_dim, config.output_width());
        let mut l = ParamLayout::default();
        let off = Offsets {
            in_w: l.push("proj.weight", &[h, f]),
            in_b: l.push("proj.bias", &[h]),
            wz: l.push("gru.update.input_weight", &[h, h]),
            uz: l.push("gru.update.recurrent_weight", &[h, h]),
            bz: l.push("gru.update.bias", &[h]),
            wr: l.push("gru.reset.input_weight", &[h, h]),
            ur: l.push("gru.reset.recurrent_weight", &[h, h]),
            br: l.push("gru.reset.bias", &[h]),
            wn: l.push("gru.candidate.input_weight", &[h, h]),
            un: l.push("gru.candidate.recurrent_weight", &[h, h]),
            bn: l.push("gru.candidate.bias", &[h]),
            ff_w: l.push("ff.weight", &[d, h]),
            ff_b: l.push("ff.bias", &[d]),
            out_w: l.push("out.weight", &[c, d]),
            out_b: l.push("out.bias", &[c]),
        };
        Ok(Self { config, layout: Arc::new(l), off })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = vec![0.0; self.layout.total()];
        for shape in self.layout.entries() {
            if let [fan_out, fan_in] = shape.dims[..] {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut values[shape.range()] {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        ParamVector { values, layout: self.layout.clone() }
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.layout.total() {
            return Err(NnError::Dimension {
                what: "parameter vector",
                expected: self.layout.total(),
                got: params.len(),
            });
        }
        Ok(())
    }

    /// Runs the model over the valid frames of `features`.
    ///
    /// Dropout is active only when `dropout_rng` is given and the configured
    /// rate is positive; otherwise the pass is a pure function of
    /// `(params, features)`.
    pub fn forward(
        &self,
        params: &[f64],
        features: &FeatureSequence,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<(LogitMatrix, Tape), NnError> {
        self.check_params(params)?;
        let cfg = &self.config;
        let fdim = cfg.input_features;
        if features.feature_dim() != fdim {
            return Err(NnError::Dimension {
                what: "feature columns",
                expected: fdim,
                got: features.feature_dim(),
            });
        }
        let valid = features.valid_len();
        if valid == 0 {
            return Err(NnError::Dimension { what: "valid frames", expected: 1, got: 0 });
        }
        let (s, h, d, c) = (cfg.stack, cfg.hidden, cfg.ff_dim, cfg.output_width());
        let sf = s * fdim;
        let steps = cfg.downsampled_len(valid);
        let o = &self.off;
        let p = |r: &std::ops::Range<usize>| &params[r.clone()];

        let mut stacked = vec![0.0; steps * sf];
        for t in 0..steps {
            for k in 0..s {
                let frame = t * s + k;
                if frame < valid {
                    stacked[t * sf + k * fdim..t * sf + (k + 1) * fdim]
                        .copy_from_slice(features.frame(frame));
                }
            }
        }

        let mut proj = vec![0.0; steps * h];
        for t in 0..steps {
            let out = &mut proj[t * h..(t + 1) * h];
            affine(p(&o.in_w), p(&o.in_b), &stacked[t * sf..(t + 1) * sf], out);
            out.iter_mut().for_each(|v| *v = v.tanh());
        }

        let mut z = vec![0.0; steps * h];
        let mut r = vec![0.0; steps * h];
        let mut n = vec![0.0; steps * h];
        let mut hs = vec![0.0; steps * h];
        let zero = vec![0.0; h];
        let mut rh = vec![0.0; h];
        for t in 0..steps {
            let x = &proj[t * h..(t + 1) * h];
            let prev: Vec<f64> = if t == 0 { zero.clone() } else { hs[(t - 1) * h..t * h].to_vec() };
            let zt = &mut z[t * h..(t + 1) * h];
            affine(p(&o.wz), p(&o.bz), x, zt);
            matvec_acc(p(&o.uz), &prev, zt);
            zt.iter_mut().for_each(|v| *v = sigmoid(*v));
            let rt = &mut r[t * h..(t + 1) * h];
            affine(p(&o.wr), p(&o.br), x, rt);
            matvec_acc(p(&o.ur), &prev, rt);
            rt.iter_mut().for_each(|v| *v = sigmoid(*v));
            for i in 0..h {
                rh[i] = rt[i] * prev[i];
            }
            let nt = &mut n[t * h..(t + 1) * h];
            affine(p(&o.wn), p(&o.bn), x, nt);
            matvec_acc(p(&o.un), &rh, nt);
            nt.iter_mut().for_each(|v| *v = v.tanh());
            let zt = &z[t * h..(t + 1) * h];
            let nt = &n[t * h..(t + 1) * h];
            for i in 0..h {
                hs[t * h + i] = zt[i] * prev[i] + (1.0 - zt[i]) * nt[i];
            }
        }

        let mut ff = vec![0.0; steps * d];
        for t in 0..steps {
            let out = &mut ff[t * d..(t + 1) * d];
            affine(p(&o.ff_w), p(&o.ff_b), &hs[t * h..(t + 1) * h], out);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }

        let mask = match dropout_rng {
            Some(rng) if cfg.dropout_rate > 0.0 => {
                let keep = 1.0 - cfg.dropout_rate;
                let scale = 1.0 / keep;
                Some(
                    (0..steps * d)
                        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };
        let dropped = match &mask {
            Some(m) => ff.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => ff.clone(),
        };

        let mut logits = Matrix::zeros(steps, c);
        for t in 0..steps {
            affine(p(&o.out_w), p(&o.out_b), &dropped[t * d..(t + 1) * d], logits.row_mut(t));
        }

        let tape = Tape { steps, stacked, proj, z, r, n, h: hs, ff, mask, dropped };
        Ok((LogitMatrix::new(logits, steps), tape))
    }

    /// Exact gradient of a scalar loss with respect to every parameter,
    /// given that loss's gradient with respect to the logits.
    pub fn backward(&self, params: &[f64], tape: &Tape, logit_grad: &Matrix) -> Result<Vec<f64>, NnError> {
        self.check_params(params)?;
        let cfg = &self.config;
        let (h, d, c) = (cfg.hidden, cfg.ff_dim, cfg.output_width());
        let sf = cfg.stack * cfg.input_features;
        let steps = tape.steps;
        if logit_grad.rows() != steps || logit_grad.cols() != c {
            return Err(NnError::Dimension {
                what: "logit gradient",
                expected: steps * c,
                got: logit_grad.rows() * logit_grad.cols(),
            });
        }
        let o = &self.off;
        let p = |r: &std::ops::Range<usize>| &params[r.clone()];
        let mut grad = vec![0.0; params.len()];

        let mut dh_all = vec![0.0; steps * h];
        let mut dd = vec![0.0; d];
        for t in 0..steps {
            let dy = logit_grad.row(t);
            outer_acc(&mut grad[o.out_w.clone()], dy, &tape.dropped[t * d..(t + 1) * d]);
            grad[o.out_b.clone()].iter_mut().zip(dy).for_each(|(g, v)| *g += v);
            dd.fill(0.0);
            matvec_t_acc(p(&o.out_w), dy, &mut dd);
            for i in 0..d {
                let m = tape.mask.as_ref().map_or(1.0, |m| m[t * d + i]);
                let active = tape.ff[t * d + i] > 0.0;
                dd[i] = if active { dd[i] * m } else { 0.0 };
            }
            outer_acc(&mut grad[o.ff_w.clone()], &dd, &tape.h[t * h..(t + 1) * h]);
            grad[o.ff_b.clone()].iter_mut().zip(&dd).for_each(|(g, v)| *g += v);
            matvec_t_acc(p(&o.ff_w), &dd, &mut dh_all[t * h..(t + 1) * h]);
        }

        let zero = vec![0.0; h];
        let mut dh_next = vec![0.0; h];
        let mut dproj = vec![0.0; steps * h];
        let (mut dn_pre, mut dz_pre, mut dr_pre) = (vec![0.0; h], vec![0.0; h], vec![0.0; h]);
        let (mut d_rh, mut rh) = (vec![0.0; h], vec![0.0; h]);
        for t in (0..steps).rev() {
            let prev = if t == 0 { &zero[..] } else { &tape.h[(t - 1) * h..t * h] };
            let zt = &tape.z[t * h..(t + 1) * h];
            let rt = &tape.r[t * h..(t + 1) * h];
            let nt = &tape.n[t * h..(t + 1) * h];
            let x = &tape.proj[t * h..(t + 1) * h];
            let mut dh_prev = vec![0.0; h];
            for i in 0..h {
                let dh = dh_all[t * h + i] + dh_next[i];
                dn_pre[i] = dh * (1.0 - zt[i]) * (1.0 - nt[i] * nt[i]);
                dz_pre[i] = dh * (prev[i] - nt[i]) * zt[i] * (1.0 - zt[i]);
                dh_prev[i] = dh * zt[i];
                rh[i] = rt[i] * prev[i];
            }
            d_rh.fill(0.0);
            matvec_t_acc(p(&o.un), &dn_pre, &mut d_rh);
            for i in 0..h {
                dr_pre[i] = d_rh[i] * prev[i] * rt[i] * (1.0 - rt[i]);
                dh_prev[i] += d_rh[i] * rt[i];
            }
            outer_acc(&mut grad[o.wn.clone()], &dn_pre, x);
            outer_acc(&mut grad[o.un.clone()], &dn_pre, &rh);
            grad[o.bn.clone()].iter_mut().zip(&dn_pre).for_each(|(g, v)| *g += v);
            outer_acc(&mut grad[o.wz.clone()], &dz_pre, x);
            outer_acc(&mut grad[o.uz.clone()], &dz_pre, prev);
            grad[o.bz.clone()].iter_mut().zip(&dz_pre).for_each(|(g, v)| *g += v);
            outer_acc(&mut grad[o.wr.clone()], &dr_pre, x);
            outer_acc(&mut grad[o.ur.clone()], &dr_pre, prev);
            grad[o.br.clone()].iter_mut().zip(&dr_pre).for_each(|(g, v)| *g += v);
            matvec_t_acc(p(&o.uz), &dz_pre, &mut dh_prev);
            matvec_t_acc(p(&o.ur), &dr_pre, &mut dh_prev);
            let dx = &mut dproj[t * h..(t + 1) * h];
            matvec_t_acc(p(&o.wn), &dn_pre, dx);
            matvec_t_acc(p(&o.wz), &dz_pre, dx);
            matvec_t_acc(p(&o.wr), &dr_pre, dx);
            dh_next = dh_prev;
        }

        for t in 0..steps {
            let a = &tape.proj[t * h..(t + 1) * h];
            let da: Vec<f64> =
                dproj[t * h..(t + 1) * h].iter().zip(a).map(|(g, a)| g * (1.0 - a * a)).collect();
            outer_acc(&mut grad[o.in_w.clone()], &da, &tape.stacked[t * sf..(t + 1) * sf]);
            grad[o.in_b.clone()].iter_mut().zip(&da).for_each(|(g, v)| *g += v);
        }
        Ok(grad)
    }

    /// CTC loss and parameter gradient for one utterance.
    pub fn sample_gradient(
        &self,
        params: &[f64],
        features: &FeatureSequence,
        transcript: &Transcript,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<SampleGradient, NnError> {
        let (logits, tape) = self.forward(params, features, dropout_rng)?;
        let log_probs = ctc::log_softmax(&logits.values)?;
        let out = ctc::ctc_grad(&log_probs, logits.valid_len, transcript.label(), self.config.alphabet_size)?;
        if !out.is_feasible() {
            return Ok(SampleGradient { loss: f64::INFINITY, grad: None });
        }
        let grad = self.backward(params, &tape, &out.grad)?;
        Ok(SampleGradient { loss: out.loss.value, grad: Some(grad) })
    }

    /// Eval-mode CTC loss; `+inf` when the label cannot be aligned.
    pub fn loss(&self, params: &[f64], features: &FeatureSequence, transcript: &Transcript) -> Result<f64, NnError> {
        let (logits, _) = self.forward(params, features, None)?;
        let log_probs = ctc::log_softmax(&logits.values)?;
        Ok(ctc::ctc_loss(&log_probs, logits.valid_len, transcript.label(), self.config.alphabet_size)?.value)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleGradient {
    pub loss: f64,
    /// `None` for an infeasible alignment.
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(5.0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, cfg: &OptimConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }
}

/// Bias-corrected Adam. Leaves everything untouched if `grad` has a
/// non-finite entry.
pub fn adam_step(params: &mut [f64], grad: &[f64], state: &mut AdamState) -> Result<(), NnError> {
    if grad.len() != params.len() || state.m.len() != params.len() {
        return Err(NnError::Dimension { what: "adam step", expected: params.len(), got: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(NnError::Divergence { step: state.t + 1 });
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutcome {
    /// Mean loss over feasible samples; `None` when every sample was skipped.
    pub loss: Option<f64>,
    pub skipped: usize,
    pub stepped: bool,
}

/// One optimizer step on the mean gradient of the batch's feasible samples.
pub fn train_batch<R: Rng + ?Sized>(
    model: &AcousticModel,
    params: &mut [f64],
    adam: &mut AdamState,
    optim: &OptimConfig,
    batch: &[(&FeatureSequence, &Transcript)],
    rng: &mut R,
) -> Result<BatchOutcome, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let dropout = model.config().dropout_rate > 0.0;
    // one seed per sample keeps dropout masks independent of evaluation order
    let seeded: Vec<(u64, &(&FeatureSequence, &Transcript))> =
        batch.iter().map(|s| (rng.random::<u64>(), s)).collect();
    let frozen: &[f64] = params;
    let results = map_nested(&seeded, |(seed, (features, transcript))| {
        let mut sample_rng = ChaCha8Rng::seed_from_u64(*seed);
        let dropout_rng: Option<&mut dyn RngCore> = dropout.then_some(&mut sample_rng as &mut dyn RngCore);
        model.sample_gradient(frozen, features, transcript, dropout_rng)
    });

    let mut sum = vec![0.0; params.len()];
    let mut loss_sum = 0.0;
    let mut feasible = 0usize;
    for res in results {
        let sample = res?;
        if let Some(g) = sample.grad {
            sum.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            loss_sum += sample.loss;
            feasible += 1;
        }
    }
    let skipped = batch.len() - feasible;
    if feasible == 0 {
        return Ok(BatchOutcome { loss: None, skipped, stepped: false });
    }
    let inv = 1.0 / feasible as f64;
    sum.iter_mut().for_each(|g| *g *= inv);
    if let Some(max) = optim.clip_norm {
        clip_global_norm(&mut sum, max);
    }
    adam_step(params, &sum, adam)?;
    Ok(BatchOutcome { loss: Some(loss_sum * inv), skipped, stepped: true })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { input_features: 3, stack: 2, hidden: 4, ff_dim: 8, alphabet_size: 2, ..Default::default() }
    }

    #[test]
    fn param_count_by_hand() {
        // proj 4x6+4, gru 3*(4x4 + 4x4 + 4), ff 8x4+8, out 3x8+3
        let m = AcousticModel::new(tiny()).unwrap();
        assert_eq!(m.param_count(), 28 + 108 + 40 + 27);
        let sum: usize = m.layout().entries().iter().map(|e| e.dims.iter().product::<usize>()).sum();
        assert_eq!(sum, m.param_count());
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let m = AcousticModel::new(tiny()).unwrap();
        let a = m.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        let b = m.init_params(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        for e in m.layout().entries().iter().filter(|e| e.dims.len() == 1) {
            assert!(a.view(&e.name).unwrap().iter().all(|&v| v == 0.0), "{}", e.name);
        }
        let w = a.view("proj.weight").unwrap();
        let limit = (6.0f64 / 10.0).sqrt();
        assert!(w.iter().all(|v| v.abs() < limit));
        assert!(w.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn downsampled_length() {
        let cfg = tiny();
        assert_eq!(cfg.downsampled_len(10), 5);
        assert_eq!(cfg.downsampled_len(9), 5);
    }

    #[test]
    fn config_validation() {
        let mut c = tiny();
        c.hidden = 0;
        assert!(AcousticModel::new(c).is_err());
        let mut c = tiny();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, &OptimConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3, &OptimConfig::default());
        adam_step(&mut p, &[0.3, -7.0, 1e-3], &mut s).unwrap();
        let lr = s.lr;
        assert!((p[0] + lr).abs() < lr * 1e-6);
        assert!((p[1] - lr).abs() < lr * 1e-6);
        assert!((p[2] + lr).abs() < lr * 1e-4);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2, &OptimConfig::default());
        s.t = 41;
        let err = adam_step(&mut p, &[f64::NAN, 1.0], &mut s).unwrap_err();
        assert_eq!(err, NnError::Divergence { step: 42 });
        assert_eq!(s.t, 41);
        assert_eq!(p, vec![0.0, 0.0]);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = vec![0.5, 0.25];
            let mut s = AdamState::new(2, &OptimConfig::default());
            for _ in 0..3 {
                adam_step(&mut p, &[0.1, -0.2], &mut s).unwrap();
            }
            (p, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.3, 0.4];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }

    #[test]
    fn flatten_round_trip() {
        let m = AcousticModel::new(tiny()).unwrap();
        let p = m.init_params(&mut ChaCha8Rng::seed_from_u64(1));
        let back = ParamVector::flatten(m.layout().clone(), &p.unflatten()).unwrap();
        assert_eq!(back.values, p.values);
        let mut parts = p.unflatten();
        parts[0].1.pop();
        assert!(ParamVector::flatten(m.layout().clone(), &parts).is_err());
    }
}
