//! Forward-only measurement of the conditional quantities that link Adam's
//! second moment to token frequency.
//!
//! For every token `i` the probe estimates
//!
//! ```text
//! X_true(i)  = E[(1 − pᵢ)² | i = t]
//! X_false(i) = E[pᵢ²       | i ≠ t]
//! S          = E[h²]                (elementwise)
//! E[gᵢ²]     = E[(pᵢ − δᵢₜ)² h²]    (measured directly)
//! ```
//!
//! Under independence of `h²` from the probabilities,
//! `E[gᵢ²] = S·[P(i=t)·X_true(i) + (1 − P(i=t))·X_false(i)]`. Vector
//! quantities are reduced to one scalar per token by the mean over H.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{BatchSampler, TokenStream};
use crate::linalg::{fit_through_origin, FitResult, LinalgError};
use crate::model::{forward, ModelError, ModelParams};
use crate::optim::AdamState;
use crate::rng::SplitMix64;

/// Minimum number of tokens with observations for the fits.
pub const MIN_FIT_TOKENS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("internal fault: parameters changed during a forward-only probe")]
    ParamsMutated,
    #[error("probe needs at least one batch")]
    NoBatches,
    #[error("only {got} tokens have observations, need {need}")]
    TooFewTokens { got: usize, need: usize },
    #[error("second moment is undefined before the first optimizer step")]
    ZeroStep,
    #[error("length mismatch: {0}")]
    Length(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// Examples seen.
    pub examples: u64,
    /// Times each token was the target.
    pub target_count: Vec<u64>,
    /// `None` for tokens never observed as the target.
    pub x_true: Vec<Option<f64>>,
    /// `None` for tokens that were the target in every example.
    pub x_false: Vec<Option<f64>>,
    /// `E[h²]`, an H-vector.
    pub s_vector: Vec<f64>,
    /// Directly measured `E[gᵢ²]`, mean over H.
    pub g2: Vec<f64>,
    pub fit_true: Option<FitResult>,
    pub fit_false: Option<FitResult>,
    pub fit_v: Option<FitResult>,
    /// Slope of `fit_v`.
    pub a: Option<f64>,
}

impl ProbeReport {
    pub fn vocab_size(&self) -> usize {
        self.target_count.len()
    }

    /// Empirical `P(i = t)` over the probed examples.
    pub fn target_freq(&self) -> Vec<f64> {
        self.target_count.iter().map(|&c| c as f64 / self.examples as f64).collect()
    }

    /// `mean(S)·[P(i=t)·X_true + (1 − P(i=t))·X_false]`, or `None` where a
    /// conditional is missing.
    pub fn predicted_g2(&self) -> Vec<Option<f64>> {
        let s = self.s_vector.iter().sum::<f64>() / self.s_vector.len() as f64;
        self.target_freq()
            .iter()
            .zip(self.x_true.iter().zip(&self.x_false))
            .map(|(&q, (xt, xf))| match (xt, xf) {
                (Some(xt), Some(xf)) => Some(s * (q * xt + (1.0 - q) * xf)),
                (None, Some(xf)) if q == 0.0 => Some(s * xf),
                _ => None,
            })
            .collect()
    }

    /// CSV `index,prob,x_true,x_false,vhat_mean,target_count`; missing values
    /// are empty fields.
    pub fn write_csv<W: Write>(&self, probs: &[f64], vhat_mean: Option<&[f64]>, out: W) -> csv::Result<()> {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:?}")).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "prob", "x_true", "x_false", "vhat_mean", "target_count"])?;
        for i in 0..self.vocab_size() {
            w.write_record([
                i.to_string(),
                format!("{:?}", probs[i]),
                opt(self.x_true[i]),
                opt(self.x_false[i]),
                opt(vhat_mean.map(|v| v[i])),
                self.target_count[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Streaming accumulator, exposed so that callers can feed examples from
/// any source.
#[derive(Debug, Clone)]
pub struct ConditionalAccumulator {
    examples: u64,
    true_sum: Vec<f64>,
    true_count: Vec<u64>,
    false_sum: Vec<f64>,
    false_count: Vec<u64>,
    s_sum: Vec<f64>,
    g2_sum: Vec<f64>,
}

impl ConditionalAccumulator {
    pub fn new(vocab_size: usize, hidden_dim: usize) -> Self {
        Self {
            examples: 0,
            true_sum: vec![0.0; vocab_size],
            true_count: vec![0; vocab_size],
            false_sum: vec![0.0; vocab_size],
            false_count: vec![0; vocab_size],
            s_sum: vec![0.0; hidden_dim],
            g2_sum: vec![0.0; vocab_size],
        }
    }

    pub fn add(&mut self, probs: &[f64], h: &[f64], target: usize) {
        self.examples += 1;
        let h2_mean = h.iter().map(|x| x * x).sum::<f64>() / h.len() as f64;
        for (s, x) in self.s_sum.iter_mut().zip(h) {
            *s += x * x;
        }
        for (i, &p) in probs.iter().enumerate() {
            if i == target {
                let q = (1.0 - p) * (1.0 - p);
                self.true_sum[i] += q;
                self.true_count[i] += 1;
                self.g2_sum[i] += q * h2_mean;
            } else {
                let q = p * p;
                self.false_sum[i] += q;
                self.false_count[i] += 1;
                self.g2_sum[i] += q * h2_mean;
            }
        }
    }

    pub fn finish(self) -> ProbeReport {
        let n = self.examples as f64;
        let cond = |sum: &[f64], count: &[u64]| -> Vec<Option<f64>> {
            sum.iter().zip(count).map(|(&s, &c)| (c > 0).then(|| s / c as f64)).collect()
        };
        ProbeReport {
            examples: self.examples,
            x_true: cond(&self.true_sum, &self.true_count),
            x_false: cond(&self.false_sum, &self.false_count),
            target_count: self.true_count,
            s_vector: self.s_sum.iter().map(|s| s / n).collect(),
            g2: self.g2_sum.iter().map(|g| g / n).collect(),
            fit_true: None,
            fit_false: None,
            fit_v: None,
            a: None,
        }
    }
}

/// Runs `num_batches` seeded batches through the model without touching the
/// parameters and accumulates the conditional statistics.
pub fn measure_conditionals(
    params: &ModelParams,
    stream: &TokenStream,
    batch_size: usize,
    num_batches: usize,
    rng: SplitMix64,
) -> Result<ProbeReport, ProbeError> {
    if num_batches == 0 {
        return Err(ProbeError::NoBatches);
    }
    if stream.vocab_size() != params.vocab_size() {
        return Err(ProbeError::Length(format!(
            "stream vocabulary {} vs model {}",
            stream.vocab_size(),
            params.vocab_size()
        )));
    }
    let before = params.checksum();
    let mut acc = ConditionalAccumulator::new(params.vocab_size(), params.hidden_dim());
    let mut sampler = BatchSampler::with_rng(stream, batch_size, rng);
    for _ in 0..num_batches {
        for ex in sampler.next_batch() {
            let trace = forward(params, ex.context, ex.target)?;
            acc.add(&trace.probs, &trace.h, trace.target);
        }
    }
    if params.checksum() != before {
        return Err(ProbeError::ParamsMutated);
    }
    Ok(acc.finish())
}

fn fit_observed(x: &[f64], y: &[Option<f64>]) -> Result<FitResult, ProbeError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = x.iter().zip(y).filter_map(|(&a, b)| b.map(|b| (a, b))).unzip();
    if xs.len() < MIN_FIT_TOKENS {
        return Err(ProbeError::TooFewTokens { got: xs.len(), need: MIN_FIT_TOKENS });
    }
    Ok(fit_through_origin(&xs, &ys)?)
}

/// Fits `X_true`, `X_false` and, when given, the per-token mean second
/// moment against the unigram probabilities through the origin.
pub fn fit_probe(mut report: ProbeReport, probs: &[f64], vhat_mean: Option<&[f64]>) -> Result<ProbeReport, ProbeError> {
    if probs.len() != report.vocab_size() {
        return Err(ProbeError::Length(format!("{} probabilities for {} tokens", probs.len(), report.vocab_size())));
    }
    report.fit_true = Some(fit_observed(probs, &report.x_true)?);
    report.fit_false = Some(fit_observed(probs, &report.x_false)?);
    if let Some(v) = vhat_mean {
        if v.len() != probs.len() {
            return Err(ProbeError::Length(format!("{} second moments for {} tokens", v.len(), probs.len())));
        }
        let fit = fit_observed(probs, &v.iter().map(|&x| Some(x)).collect::<Vec<_>>())?;
        report.a = Some(fit.slope_a);
        report.fit_v = Some(fit);
    }
    Ok(report)
}

/// Bias-corrected `v̂ᵢ` of a V×H table, averaged over H per row.
pub fn second_moment_snapshot(state: &AdamState, hidden_dim: usize, beta2: f64) -> Result<Vec<f64>, ProbeError> {
    if hidden_dim == 0 || !state.len().is_multiple_of(hidden_dim) {
        return Err(ProbeError::Length(format!("state of {} values is not a multiple of H = {hidden_dim}", state.len())));
    }
    let v_hat = state.v_hat(beta2).ok_or(ProbeError::ZeroStep)?;
    Ok(v_hat.chunks(hidden_dim).map(|row| row.iter().sum::<f64>() / hidden_dim as f64).collect())
}
