//! SGD with momentum, Adam, Coupled Adam and Scaled Coupled Adam, plus the
//! learning-rate schedule and a per-model optimizer that routes each
//! parameter group to the right rule.
//!
//! Embedding tables (the input table and, when untied, the output table) use
//! the selected rule and never receive weight decay. The optional hidden
//! layer always uses AdamW, with decay on its weight matrix only.

mod adam;
mod sgd;

pub use adam::{
    adam_effective_lr, adam_step, coupled_adam_step, coupled_effective_lr, scaled_coupled_adam_step, AdamHyper,
    AdamState,
};
pub use sgd::{sgd_step, SgdState};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::model::{Gradients, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("shape mismatch: param {param}, grad {grad}, state {state}")]
    ShapeMismatch { param: usize, grad: usize, state: usize },
    #[error("step counter overflow")]
    StepOverflow,
    #[error("embedding group has no rows")]
    EmptyEmbedding,
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("optimizer state does not match model layout")]
    LayoutMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Coupled,
    ScaledCoupled,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [Self::Sgd, Self::Adam, Self::Coupled, Self::ScaledCoupled];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adam => "adam",
            Self::Coupled => "coupled",
            Self::ScaledCoupled => "scaled-coupled",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = OptimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| OptimError::Config(format!("unknown optimizer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Peak learning rate `η`.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// SGD momentum `γ`.
    pub momentum: f64,
    /// SGD learning-rate factor `f` for embedding groups.
    pub sgd_lr_factor: f64,
    /// Scaled Coupled Adam exponent `n`; `ν̂` is multiplied by `2⁻ⁿ`.
    pub scale_exponent: i32,
    /// Decoupled weight decay for non-embedding weight matrices.
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Final learning rate as a fraction of `lr`.
    pub lr_floor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            epsilon: 1e-8,
            momentum: 0.9,
            sgd_lr_factor: 1.0,
            scale_exponent: 0,
            weight_decay: 0.1,
            warmup_steps: 0,
            lr_floor: 0.1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |what: &str, x: f64| Err(OptimError::Config(format!("{what} = {x}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", self.lr);
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&b) {
                return bad(name, b);
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon", self.epsilon);
        }
        if !(self.sgd_lr_factor.is_finite() && self.sgd_lr_factor > 0.0) {
            return bad("sgd_lr_factor", self.sgd_lr_factor);
        }
        if !(-5..=5).contains(&self.scale_exponent) {
            return bad("scale_exponent", self.scale_exponent as f64);
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", self.weight_decay);
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return bad("lr_floor", self.lr_floor);
        }
        Ok(())
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }
}

/// Linear warmup from 0 over `warmup_steps`, then cosine decay from `lr` to
/// `lr_floor·lr` at `total_steps`. Steps past the end stay at the floor.
pub fn schedule_lr(cfg: &OptimConfig, step: u64, total_steps: u64) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * step as f64 / cfg.warmup_steps as f64;
    }
    let progress = if total_steps > cfg.warmup_steps {
        ((step - cfg.warmup_steps) as f64 / (total_steps - cfg.warmup_steps) as f64).min(1.0)
    } else {
        1.0
    };
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * cosine)
}

/// Per-step diagnostics for the output embedding table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    /// `Σᵢ uᵢ`, an H-vector.
    pub update_sum: Vec<f64>,
    /// Largest over hidden dimensions of `maxᵢ ηᵢ / minᵢ ηᵢ`.
    pub effective_lr_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingState {
    Sgd(SgdState),
    Adam(AdamState),
}

impl EmbeddingState {
    pub fn adam(&self) -> Option<&AdamState> {
        match self {
            Self::Adam(s) => Some(s),
            Self::Sgd(_) => None,
        }
    }
}

/// Optimizer state for a whole [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptimizer {
    pub kind: OptimizerKind,
    pub cfg: OptimConfig,
    pub embeddings: EmbeddingState,
    pub unembedding: Option<EmbeddingState>,
    pub hidden_weight: Option<AdamState>,
    pub hidden_bias: Option<AdamState>,
}

impl ModelOptimizer {
    pub fn new(kind: OptimizerKind, cfg: OptimConfig, params: &ModelParams) -> Result<Self, OptimError> {
        cfg.validate()?;
        if params.vocab_size() < 1 {
            return Err(OptimError::EmptyEmbedding);
        }
        let table = |m: &Matrix| match kind {
            OptimizerKind::Sgd => EmbeddingState::Sgd(SgdState::new(m.as_slice().len())),
            _ => EmbeddingState::Adam(AdamState::new(m.as_slice().len())),
        };
        Ok(Self {
            kind,
            cfg,
            embeddings: table(&params.embeddings),
            unembedding: params.unembedding.as_ref().map(table),
            hidden_weight: params.hidden.as_ref().map(|l| AdamState::new(l.weight.as_slice().len())),
            hidden_bias: params.hidden.as_ref().map(|l| AdamState::new(l.bias.len())),
        })
    }

    /// Step counter of the Adam-family state of the output table, 0 for SGD.
    pub fn step_count(&self) -> u64 {
        self.output_state().adam().map_or(0, |s| s.step)
    }

    /// State of the table that produces the logits.
    pub fn output_state(&self) -> &EmbeddingState {
        self.unembedding.as_ref().unwrap_or(&self.embeddings)
    }

    fn scale_exponent(&self) -> i32 {
        match self.kind {
            OptimizerKind::ScaledCoupled => self.cfg.scale_exponent,
            _ => 0,
        }
    }

    fn step_table(
        &self,
        state: &mut EmbeddingState,
        param: &mut Matrix,
        grad: &Matrix,
        lr: f64,
        update_sum: Option<&mut [f64]>,
    ) -> Result<(), OptimError> {
        let hp = self.cfg.adam_hyper();
        match (self.kind, state) {
            (OptimizerKind::Sgd, EmbeddingState::Sgd(s)) => sgd_step(
                param.as_mut_slice(),
                grad.as_slice(),
                s,
                lr * self.cfg.sgd_lr_factor,
                self.cfg.momentum,
                update_sum,
            ),
            (OptimizerKind::Adam, EmbeddingState::Adam(s)) => {
                adam_step(param.as_mut_slice(), grad.as_slice(), s, &hp, lr, update_sum)
            }
            (OptimizerKind::Coupled | OptimizerKind::ScaledCoupled, EmbeddingState::Adam(s)) => {
                scaled_coupled_adam_step(param, grad, s, &hp, lr, self.scale_exponent(), update_sum)
            }
            _ => Err(OptimError::LayoutMismatch),
        }
    }

    /// Effective per-element learning rates of the output table at `lr`;
    /// `None` before the first Adam-family step.
    pub fn effective_lr(&self, params: &ModelParams, lr: f64) -> Option<Matrix> {
        let (v, h) = (params.vocab_size(), params.hidden_dim());
        let hp = self.cfg.adam_hyper();
        match (self.kind, self.output_state()) {
            (OptimizerKind::Sgd, _) => Some(Matrix::from_fn(v, h, |_, _| lr * self.cfg.sgd_lr_factor)),
            (OptimizerKind::Adam, EmbeddingState::Adam(s)) => adam_effective_lr(s, v, h, &hp, lr),
            (_, EmbeddingState::Adam(s)) => coupled_effective_lr(s, v, h, &hp, lr, self.scale_exponent()),
            _ => None,
        }
    }

    /// Applies one update with learning rate `lr`. With `diagnostics` set,
    /// returns the update record of the output table.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        lr: f64,
        diagnostics: bool,
    ) -> Result<Option<UpdateRecord>, OptimError> {
        if grads.d_unembedding.is_some() != params.unembedding.is_some()
            || self.unembedding.is_some() != params.unembedding.is_some()
            || self.hidden_weight.is_some() != params.hidden.is_some()
            || grads.d_hidden.is_some() != params.hidden.is_some()
        {
            return Err(OptimError::LayoutMismatch);
        }
        let h = params.hidden_dim();
        let mut sum = diagnostics.then(|| vec![0.0; h]);
        let tied = params.unembedding.is_none();

        let mut emb = std::mem::replace(&mut self.embeddings, EmbeddingState::Sgd(SgdState::new(0)));
        let res = self.step_table(
            &mut emb,
            &mut params.embeddings,
            &grads.d_embeddings,
            lr,
            if tied { sum.as_deref_mut() } else { None },
        );
        self.embeddings = emb;
        res?;

        if let (Some(mut state), Some(param), Some(grad)) =
            (self.unembedding.take(), params.unembedding.as_mut(), grads.d_unembedding.as_ref())
        {
            let res = self.step_table(&mut state, param, grad, lr, sum.as_deref_mut());
            self.unembedding = Some(state);
            res?;
        }

        if let (Some(layer), Some(dg), Some(ws), Some(bs)) = (
            params.hidden.as_mut(),
            grads.d_hidden.as_ref(),
            self.hidden_weight.as_mut(),
            self.hidden_bias.as_mut(),
        ) {
            let hp = self.cfg.adam_hyper();
            let decay = 1.0 - lr * self.cfg.weight_decay;
            layer.weight.as_mut_slice().iter_mut().for_each(|w| *w *= decay);
            adam_step(layer.weight.as_mut_slice(), dg.weight.as_slice(), ws, &hp, lr, None)?;
            adam_step(&mut layer.bias, &dg.bias, bs, &hp, lr, None)?;
        }

        Ok(sum.map(|update_sum| UpdateRecord {
            update_sum,
            effective_lr_spread: self.effective_lr(params, lr).map_or(1.0, |m| lr_spread(&m)),
        }))
    }
}

/// `max_j (maxᵢ ηᵢⱼ / minᵢ ηᵢⱼ)`.
pub fn lr_spread(eff: &Matrix) -> f64 {
    let mut worst = 1.0f64;
    for j in 0..eff.cols() {
        let (lo, hi) = (0..eff.rows())
            .map(|i| eff[(i, j)])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo > 0.0 {
            worst = worst.max(hi / lo);
        }
    }
    worst
}
