//! Minimal next-token model with a standard language-modeling head.
//!
//! The context embedding (mean of the context rows of the input table) is
//! optionally passed through one `tanh` layer to give the final hidden state
//! `h`. Logits are `lᵢ = uᵢ·h`, where `uᵢ` is row `i` of the output table,
//! which is the embedding table itself when weights are tied.

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Example;
use crate::linalg::{dot, Matrix};
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("token index {index} out of range for vocabulary of size {vocab}")]
    IndexOutOfRange { index: usize, vocab: usize },
    #[error("empty context")]
    EmptyContext,
    #[error("non-finite value produced in {stage}")]
    NonFinite { stage: &'static str },
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("finite-difference step {0} outside [1e-7, 1e-3]")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub hidden_layer: bool,
    pub tie_weights: bool,
    pub head_only_grad: bool,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            hidden_dim: 2,
            hidden_layer: true,
            tie_weights: true,
            head_only_grad: false,
            init_std: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// H×H, applied as `W·x`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// V×H input table; doubles as the output table when tied.
    pub embeddings: Matrix,
    /// Separate V×H output table, `None` when weights are tied.
    pub unembedding: Option<Matrix>,
    pub hidden: Option<HiddenLayer>,
    /// Restrict gradient flow to the LM-head contribution.
    pub head_only_grad: bool,
}

impl ModelParams {
    /// Gaussian init with `init_std` for every table and weight, zero biases.
    pub fn init(cfg: &ModelConfig, rng: &mut SplitMix64) -> Result<Self, ModelError> {
        if cfg.vocab_size < 1 || cfg.hidden_dim < 1 {
            return Err(ModelError::Config(format!("V = {}, H = {}", cfg.vocab_size, cfg.hidden_dim)));
        }
        if !(cfg.init_std.is_finite() && cfg.init_std >= 0.0) {
            return Err(ModelError::Config(format!("init_std {}", cfg.init_std)));
        }
        let (v, h, std) = (cfg.vocab_size, cfg.hidden_dim, cfg.init_std);
        let mut gauss = |rows, cols| Matrix::from_fn(rows, cols, |_, _| std * rng.normal());
        let embeddings = gauss(v, h);
        let unembedding = (!cfg.tie_weights).then(|| gauss(v, h));
        let hidden = cfg.hidden_layer.then(|| HiddenLayer { weight: gauss(h, h), bias: vec![0.0; h] });
        Ok(Self { embeddings, unembedding, hidden, head_only_grad: cfg.head_only_grad })
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn tied(&self) -> bool {
        self.unembedding.is_none()
    }

    pub fn output_table(&self) -> &Matrix {
        self.unembedding.as_ref().unwrap_or(&self.embeddings)
    }

    /// All scalar parameters, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![("embeddings", self.embeddings.as_slice())];
        if let Some(u) = &self.unembedding {
            out.push(("unembedding", u.as_slice()));
        }
        if let Some(hl) = &self.hidden {
            out.push(("hidden_weight", hl.weight.as_slice()));
            out.push(("hidden_bias", &hl.bias));
        }
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = vec![("embeddings", self.embeddings.as_mut_slice())];
        if let Some(u) = &mut self.unembedding {
            out.push(("unembedding", u.as_mut_slice()));
        }
        if let Some(hl) = &mut self.hidden {
            out.push(("hidden_weight", hl.weight.as_mut_slice()));
            out.push(("hidden_bias", &mut hl.bias[..]));
        }
        out
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (name, t) in self.tensors() {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite { stage: name });
            }
        }
        Ok(())
    }

    /// SHA-256 over the bit patterns of every parameter, hex encoded.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, t) in self.tensors() {
            hasher.update(name.as_bytes());
            for x in t {
                hasher.update(x.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub context: Vec<usize>,
    /// Mean of the context embedding rows.
    pub input: Vec<f64>,
    /// Final hidden state.
    pub h: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub target: usize,
    pub loss: f64,
}

fn check_index(index: usize, vocab: usize) -> Result<(), ModelError> {
    if index >= vocab {
        return Err(ModelError::IndexOutOfRange { index, vocab });
    }
    Ok(())
}

fn all_finite(xs: &[f64], stage: &'static str) -> Result<(), ModelError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite { stage })
    }
}

/// Max-shifted softmax; returns the probabilities and `log Σ exp(lⱼ)`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    (probs, max + sum.ln())
}

pub(crate) fn hidden_state(params: &ModelParams, context: &[usize]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let v = params.vocab_size();
    if context.is_empty() {
        return Err(ModelError::EmptyContext);
    }
    let mut input = vec![0.0; params.hidden_dim()];
    for &c in context {
        check_index(c, v)?;
        for (x, e) in input.iter_mut().zip(params.embeddings.row(c)) {
            *x += e;
        }
    }
    if context.len() > 1 {
        let w = context.len() as f64;
        input.iter_mut().for_each(|x| *x /= w);
    }
    all_finite(&input, "embedding lookup")?;
    let h = match &params.hidden {
        None => input.clone(),
        Some(layer) => {
            let h: Vec<f64> = layer
                .weight
                .row_iter()
                .zip(&layer.bias)
                .map(|(w, b)| (dot(w, &input) + b).tanh())
                .collect();
            all_finite(&h, "hidden transform")?;
            h
        }
    };
    Ok((input, h))
}

/// Loss and probabilities for a fixed hidden state.
pub(crate) fn head(out: &Matrix, h: &[f64], target: usize) -> Result<(Vec<f64>, Vec<f64>, f64), ModelError> {
    let logits: Vec<f64> = out.row_iter().map(|u| dot(u, h)).collect();
    all_finite(&logits, "logits")?;
    let (probs, lse) = softmax(&logits);
    let loss = lse - logits[target];
    if !loss.is_finite() || probs.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::NonFinite { stage: "softmax" });
    }
    Ok((logits, probs, loss.max(0.0)))
}

pub fn forward(params: &ModelParams, context: &[usize], target: usize) -> Result<ForwardTrace, ModelError> {
    check_index(target, params.vocab_size())?;
    let (input, h) = hidden_state(params, context)?;
    let (logits, probs, loss) = head(params.output_table(), &h, target)?;
    Ok(ForwardTrace { context: context.to_vec(), input, h, logits, probs, target, loss })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Rows `gᵢ`. For tied weights this carries the head contribution plus,
    /// unless head-only, the input-side contribution.
    pub d_embeddings: Matrix,
    pub d_unembedding: Option<Matrix>,
    pub d_hidden: Option<HiddenGrads>,
    /// `∂𝓛/∂h`, from the most recent accumulated trace.
    pub d_h: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let (v, h) = (params.vocab_size(), params.hidden_dim());
        Self {
            d_embeddings: Matrix::zeros(v, h),
            d_unembedding: params.unembedding.as_ref().map(|_| Matrix::zeros(v, h)),
            d_hidden: params.hidden.as_ref().map(|_| HiddenGrads { weight: Matrix::zeros(h, h), bias: vec![0.0; h] }),
            d_h: vec![0.0; h],
        }
    }

    pub fn reset(&mut self) {
        for t in self.tensors_mut() {
            t.1.iter_mut().for_each(|x| *x = 0.0);
        }
        self.d_h.iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out = vec![("embeddings", self.d_embeddings.as_slice())];
        if let Some(u) = &self.d_unembedding {
            out.push(("unembedding", u.as_slice()));
        }
        if let Some(hl) = &self.d_hidden {
            out.push(("hidden_weight", hl.weight.as_slice()));
            out.push(("hidden_bias", &hl.bias));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out = vec![("embeddings", self.d_embeddings.as_mut_slice())];
        if let Some(u) = &mut self.d_unembedding {
            out.push(("unembedding", u.as_mut_slice()));
        }
        if let Some(hl) = &mut self.d_hidden {
            out.push(("hidden_weight", hl.weight.as_mut_slice()));
            out.push(("hidden_bias", &mut hl.bias[..]));
        }
        out
    }

    /// The gradient of the output table, i.e. the rows obeying `Σᵢ gᵢ = 0`
    /// under head-only flow.
    pub fn output_rows(&self) -> &Matrix {
        self.d_unembedding.as_ref().unwrap_or(&self.d_embeddings)
    }
}

pub fn backward(params: &ModelParams, trace: &ForwardTrace) -> Result<Gradients, ModelError> {
    let mut grads = Gradients::zeros_like(params);
    backward_accumulate(params, trace, 1.0, &mut grads)?;
    Ok(grads)
}

/// Adds `weight · ∇𝓛` for one trace into `grads`.
pub fn backward_accumulate(
    params: &ModelParams,
    trace: &ForwardTrace,
    weight: f64,
    grads: &mut Gradients,
) -> Result<(), ModelError> {
    let (v, hd) = (params.vocab_size(), params.hidden_dim());
    if trace.probs.len() != v || trace.h.len() != hd || trace.input.len() != hd || trace.target >= v {
        return Err(ModelError::TraceMismatch(format!(
            "trace has V = {}, H = {}; params have V = {v}, H = {hd}",
            trace.probs.len(),
            trace.h.len()
        )));
    }
    if grads.d_embeddings.shape() != (v, hd) || grads.d_unembedding.is_some() != params.unembedding.is_some() {
        return Err(ModelError::TraceMismatch("gradient buffers do not match parameters".into()));
    }
    if let Some(&c) = trace.context.iter().find(|&&c| c >= v) {
        return Err(ModelError::IndexOutOfRange { index: c, vocab: v });
    }

    // head: gᵢ = (pᵢ - δᵢₜ)·h,  ∂𝓛/∂h = Σᵢ (pᵢ - δᵢₜ)·uᵢ
    let out = params.output_table();
    let mut d_h = vec![0.0; hd];
    {
        let d_out = grads.d_unembedding.as_mut().unwrap_or(&mut grads.d_embeddings);
        for i in 0..v {
            let dl = trace.probs[i] - if i == trace.target { 1.0 } else { 0.0 };
            let scaled = weight * dl;
            for (g, hj) in d_out.row_mut(i).iter_mut().zip(&trace.h) {
                *g += scaled * hj;
            }
            for (dh, uj) in d_h.iter_mut().zip(out.row(i)) {
                *dh += dl * uj;
            }
        }
    }
    grads.d_h.copy_from_slice(&d_h);
    if params.head_only_grad {
        return Ok(());
    }

    let d_input: Vec<f64> = match (&params.hidden, &mut grads.d_hidden) {
        (Some(layer), Some(dg)) => {
            let dz: Vec<f64> = d_h.iter().zip(&trace.h).map(|(g, h)| g * (1.0 - h * h)).collect();
            for (r, &dzr) in dz.iter().enumerate() {
                dg.bias[r] += weight * dzr;
                for (w, x) in dg.weight.row_mut(r).iter_mut().zip(&trace.input) {
                    *w += weight * dzr * x;
                }
            }
            (0..hd).map(|c| (0..hd).map(|r| layer.weight[(r, c)] * dz[r]).sum()).collect()
        }
        (None, None) => d_h,
        _ => return Err(ModelError::TraceMismatch("hidden layer presence differs".into())),
    };
    let share = weight / trace.context.len() as f64;
    for &c in &trace.context {
        for (g, d) in grads.d_embeddings.row_mut(c).iter_mut().zip(&d_input) {
            *g += share * d;
        }
    }
    Ok(())
}

/// Mean loss and mean gradients over a batch. `grads` is overwritten.
pub fn batch_loss_and_grads(
    params: &ModelParams,
    batch: &[Example<'_>],
    grads: &mut Gradients,
) -> Result<f64, ModelError> {
    grads.reset();
    let w = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let trace = forward(params, ex.context, ex.target)?;
        loss += trace.loss;
        backward_accumulate(params, &trace, w, grads)?;
    }
    Ok(loss * w)
}
