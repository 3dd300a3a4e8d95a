use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::corpus::{ingest, unigram, BatchSampler, TokenStream, UnigramDistribution, Vocabulary, ZipfCorpus};
use crate::linalg::norm2;
use crate::metrics::{mean_embedding, rbar, MetricsReport, SimilarityBenchmark};
use crate::model::{batch_loss_and_grads, forward, Gradients, ModelError, ModelParams};
use crate::optim::{schedule_lr, ModelOptimizer};
use crate::probe::second_moment_snapshot;
use crate::rng::SplitMix64;

/// RNG stream ids used with [`SplitMix64::derive`].
pub const STREAM_INIT: u64 = 0;
pub const STREAM_BATCHES: u64 = 1;
pub const STREAM_PROBE: u64 = 2;

const CHECKPOINT_VERSION: u32 = 1;
/// Held-out examples scored for the final loss.
const MAX_EVAL_EXAMPLES: usize = 10_000;

/// Tokenized corpus shared by every seed of an experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    /// Full token stream, before the held-out split.
    pub full: TokenStream,
    pub train: TokenStream,
    pub test: Option<TokenStream>,
    /// Unigram distribution of the training split.
    pub unigram: UnigramDistribution,
    pub benchmarks: Vec<SimilarityBenchmark>,
}

impl Dataset {
    pub fn corpus_text(cfg: &ExperimentConfig) -> Result<String, HarnessError> {
        match &cfg.corpus_path {
            Some(path) => std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("cannot read corpus {}: {e}", path.display()))),
            None => Ok(ZipfCorpus::new(cfg.zipf_types, cfg.zipf_exponent, cfg.zipf_seed)?.generate_text(cfg.zipf_tokens)),
        }
    }

    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let text = Self::corpus_text(cfg)?;
        let (vocab, full) = ingest(&text, cfg.tokenizer, cfg.vocab_cap, cfg.context_length)?;
        let (train, test) = full.split_tail(cfg.test_fraction);
        let unigram = unigram(&train);
        let mut benchmarks = Vec::new();
        for path in &cfg.benchmarks {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("cannot read benchmark {}: {e}", path.display())))?;
            let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            benchmarks.push(SimilarityBenchmark::parse_tsv(&name, &text)?);
        }
        Ok(Self { vocab, full, train, test, unigram, benchmarks })
    }

    /// Metrics panel of the logit-producing table.
    pub fn metrics(&self, params: &ModelParams) -> Result<MetricsReport, HarnessError> {
        let table = params.output_table();
        let r = if self.benchmarks.is_empty() {
            None
        } else {
            Some(rbar(table, &self.vocab, &self.benchmarks)?.rbar)
        };
        Ok(MetricsReport::compute(table, &self.unigram.probs, r)?)
    }

    /// Mean loss over (a prefix of) the held-out split, or the training
    /// split when nothing is held out.
    pub fn eval_loss(&self, params: &ModelParams) -> Result<f64, ModelError> {
        let stream = self.test.as_ref().unwrap_or(&self.train);
        let n = stream.num_examples().min(MAX_EVAL_EXAMPLES);
        let mut total = 0.0;
        for k in 0..n {
            let ex = stream.example(k);
            total += forward(params, ex.context, ex.target)?.loss;
        }
        Ok(total / n as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    pub lr: f64,
    /// Training loss of the batch used at this step.
    pub loss: f64,
    /// `‖μ − μ₀‖` of the output table.
    pub mu_drift: f64,
    /// `‖Σᵢ uᵢ‖` of this step's update.
    pub update_sum_norm: f64,
    pub effective_lr_spread: f64,
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub params: ModelParams,
    pub optimizer: ModelOptimizer,
    pub batch_rng: SplitMix64,
    pub mu0: Vec<f64>,
    pub initial_metrics: MetricsReport,
    pub snapshots: Vec<Snapshot>,
    /// Running sum of the per-token mean `v̂ᵢ` after warmup.
    pub vhat_sum: Vec<f64>,
    pub vhat_count: u64,
    pub aborted_at: Option<u64>,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Self, HarnessError> {
        let mut init_rng = SplitMix64::derive(seed, STREAM_INIT);
        let params = ModelParams::init(&cfg.model_config(data.vocab.len()), &mut init_rng)?;
        let optimizer = ModelOptimizer::new(cfg.optimizer, cfg.optim_config(), &params)?;
        let initial_metrics = data.metrics(&params)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config_hash: cfg.hash(),
            seed,
            step: 0,
            mu0: mean_embedding(params.output_table()),
            params,
            optimizer,
            batch_rng: SplitMix64::derive(seed, STREAM_BATCHES),
            initial_metrics,
            snapshots: Vec::new(),
            vhat_sum: vec![0.0; data.vocab.len()],
            vhat_count: 0,
            aborted_at: None,
        })
    }

    pub fn load(path: &Path, cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let state: Self = serde_json::from_str(&text)?;
        if state.version != CHECKPOINT_VERSION {
            return Err(HarnessError::Config(format!("checkpoint version {} unsupported", state.version)));
        }
        if state.config_hash != cfg.hash() {
            return Err(HarnessError::Config("checkpoint was written by a different config".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// `E[v̂ᵢ]` over the accumulated steps.
    pub fn vhat_mean(&self) -> Option<Vec<f64>> {
        (self.vhat_count > 0).then(|| self.vhat_sum.iter().map(|v| v / self.vhat_count as f64).collect())
    }

    pub fn mu_drift(&self) -> f64 {
        let mu = mean_embedding(self.params.output_table());
        norm2(&mu.iter().zip(&self.mu0).map(|(a, b)| a - b).collect::<Vec<_>>())
    }
}

pub fn snapshot_interval(steps: u64) -> u64 {
    (steps / 50).max(1)
}

/// Trains until `until` steps are done (or the configured total, whichever
/// is smaller). A non-finite loss stops the run and records the step.
pub fn advance(cfg: &ExperimentConfig, data: &Dataset, state: &mut TrainState, until: u64) -> Result<(), HarnessError> {
    let end = until.min(cfg.steps);
    let interval = snapshot_interval(cfg.steps);
    let ocfg = cfg.optim_config();
    let mut grads = Gradients::zeros_like(&state.params);
    let mut sampler = BatchSampler::with_rng(&data.train, cfg.batch_size, state.batch_rng);
    while state.step < end && state.aborted_at.is_none() {
        let tau = state.step + 1;
        let batch = sampler.next_batch();
        let loss = match batch_loss_and_grads(&state.params, &batch, &mut grads) {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(ModelError::NonFinite { .. }) => {
                log::warn!("seed {}: non-finite loss at step {tau}, aborting", state.seed);
                state.aborted_at = Some(tau);
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let lr = schedule_lr(&ocfg, tau, cfg.steps);
        let snap = tau.is_multiple_of(interval) || tau == cfg.steps;
        let record = state.optimizer.step(&mut state.params, &grads, lr, snap)?;
        if tau > cfg.warmup_steps {
            if let Some(adam) = state.optimizer.output_state().adam() {
                let v = second_moment_snapshot(adam, cfg.hidden_dim, cfg.beta2)?;
                state.vhat_sum.iter_mut().zip(&v).for_each(|(s, x)| *s += x);
                state.vhat_count += 1;
            }
        }
        state.step = tau;
        if let Some(rec) = record {
            state.snapshots.push(Snapshot {
                step: tau,
                lr,
                loss,
                mu_drift: state.mu_drift(),
                update_sum_norm: norm2(&rec.update_sum),
                effective_lr_spread: rec.effective_lr_spread,
            });
        }
    }
    state.batch_rng = sampler.rng();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub variant: String,
    pub steps_completed: u64,
    pub aborted_at: Option<u64>,
    pub snapshots: Vec<Snapshot>,
    pub initial_metrics: MetricsReport,
    pub final_metrics: Option<MetricsReport>,
    /// Mean held-out loss after training.
    pub final_loss: Option<f64>,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn from_state(cfg: &ExperimentConfig, data: &Dataset, state: &TrainState, wall_time_secs: f64) -> Result<Self, HarnessError> {
        let finite = state.params.check_finite().is_ok();
        let final_metrics = if finite {
            data.metrics(&state.params)
                .map_err(|e| log::warn!("seed {}: final metrics unavailable: {e}", state.seed))
                .ok()
        } else {
            None
        };
        let final_loss = if finite { data.eval_loss(&state.params).ok().filter(|l| l.is_finite()) } else { None };
        Ok(Self {
            config_hash: state.config_hash.clone(),
            seed: state.seed,
            variant: cfg.variant_name(),
            steps_completed: state.step,
            aborted_at: state.aborted_at,
            snapshots: state.snapshots.clone(),
            initial_metrics: state.initial_metrics,
            final_metrics,
            final_loss,
            wall_time_secs,
        })
    }

    /// Copy with the wall time zeroed, for determinism comparisons.
    pub fn without_wall_time(&self) -> Self {
        Self { wall_time_secs: 0.0, ..self.clone() }
    }

    /// Comparable scalar results: the final loss and the final metrics.
    pub fn results(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        if let Some(l) = self.final_loss {
            out.push(("loss", l));
        }
        if let Some(m) = &self.final_metrics {
            out.extend(m.values());
        }
        out
    }

    pub fn write_snapshots_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "lr", "loss", "mu_drift", "update_sum_norm", "effective_lr_spread"])?;
        for s in &self.snapshots {
            w.write_record([
                s.step.to_string(),
                format!("{:?}", s.lr),
                format!("{:?}", s.loss),
                format!("{:?}", s.mu_drift),
                format!("{:?}", s.update_sum_norm),
                format!("{:?}", s.effective_lr_spread),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one seed from scratch (or from `resume`) to completion.
pub fn run_seed(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    resume: Option<TrainState>,
    stop_at: Option<u64>,
) -> Result<(RunManifest, TrainState), HarnessError> {
    let start = Instant::now();
    let mut state = match resume {
        Some(s) => s,
        None => TrainState::new(cfg, data, seed)?,
    };
    advance(cfg, data, &mut state, stop_at.unwrap_or(cfg.steps))?;
    let manifest = RunManifest::from_state(cfg, data, &state, start.elapsed().as_secs_f64())?;
    Ok((manifest, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    fn small(kind: OptimizerKind) -> ExperimentConfig {
        ExperimentConfig {
            zipf_types: 40,
            zipf_tokens: 3000,
            vocab_cap: 64,
            hidden_dim: 4,
            optimizer: kind,
            steps: 60,
            warmup_steps: 5,
            batch_size: 4,
            seeds: vec![3],
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_keeps_initial_metrics() {
        let cfg = ExperimentConfig { steps: 0, ..small(OptimizerKind::Adam) };
        let data = Dataset::prepare(&cfg).unwrap();
        let (m, _) = run_seed(&cfg, &data, 3, None, None).unwrap();
        assert_eq!(m.final_metrics, Some(m.initial_metrics));
        assert!(m.snapshots.is_empty());
    }

    #[test]
    fn resume_is_bit_exact() {
        for kind in OptimizerKind::ALL {
            let cfg = small(kind);
            let data = Dataset::prepare(&cfg).unwrap();
            let (full, _) = run_seed(&cfg, &data, 3, None, None).unwrap();
            let (_, half) = run_seed(&cfg, &data, 3, None, Some(25)).unwrap();
            let text = serde_json::to_string(&half).unwrap();
            let reloaded: TrainState = serde_json::from_str(&text).unwrap();
            assert_eq!(reloaded, half);
            let (resumed, _) = run_seed(&cfg, &data, 3, Some(reloaded), None).unwrap();
            assert_eq!(resumed.without_wall_time(), full.without_wall_time(), "{kind}");
        }
    }

    #[test]
    fn snapshots_every_interval() {
        let cfg = small(OptimizerKind::Coupled);
        let data = Dataset::prepare(&cfg).unwrap();
        let (m, state) = run_seed(&cfg, &data, 3, None, None).unwrap();
        assert_eq!(snapshot_interval(60), 1);
        assert_eq!(m.snapshots.len(), 60);
        assert!(m.snapshots.iter().all(|s| s.effective_lr_spread == 1.0));
        assert_eq!(state.vhat_count, 55);
        assert_eq!(snapshot_interval(5000), 100);
    }

    #[test]
    fn divergence_is_recorded() {
        let cfg = ExperimentConfig { lr: 1e300, optimizer: OptimizerKind::Sgd, init_std: 1.0, ..small(OptimizerKind::Sgd) };
        let data = Dataset::prepare(&cfg).unwrap();
        let (m, _) = run_seed(&cfg, &data, 3, None, None).unwrap();
        assert!(m.aborted_at.is_some());
        assert!(m.steps_completed < 60);
    }
}
