use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::corpus::TokenizerMode;
use crate::model::ModelConfig;
use crate::optim::{OptimConfig, OptimizerKind};

/// One experiment as a flat JSON document. Every field has a default;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Plain UTF-8 text; when absent a Zipfian corpus is generated.
    pub corpus_path: Option<PathBuf>,
    pub zipf_types: usize,
    pub zipf_tokens: usize,
    pub zipf_exponent: f64,
    pub zipf_seed: u64,

    pub tokenizer: TokenizerMode,
    pub vocab_cap: usize,
    pub context_length: usize,
    /// Trailing fraction of the stream held out for the final loss.
    pub test_fraction: f64,

    pub hidden_dim: usize,
    pub hidden_layer: bool,
    pub tie_weights: bool,
    pub head_only_grad: bool,
    pub init_std: f64,

    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub momentum: f64,
    pub sgd_lr_factor: f64,
    pub scale_exponent: i32,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub lr_floor: f64,

    pub steps: u64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    /// Similarity benchmark TSV files for `rbar`.
    pub benchmarks: Vec<PathBuf>,
    pub probe_batches: usize,
    pub scale_grid: Vec<i32>,
    pub sgd_factor_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let o = OptimConfig::default();
        Self {
            corpus_path: None,
            zipf_types: 511,
            zipf_tokens: 200_000,
            zipf_exponent: 1.0,
            zipf_seed: 0,
            tokenizer: TokenizerMode::Word,
            vocab_cap: 512,
            context_length: 1,
            test_fraction: 0.1,
            hidden_dim: 32,
            hidden_layer: true,
            tie_weights: true,
            head_only_grad: false,
            init_std: 0.1,
            optimizer: OptimizerKind::Adam,
            lr: 1e-2,
            beta1: o.beta1,
            beta2: o.beta2,
            epsilon: o.epsilon,
            momentum: o.momentum,
            sgd_lr_factor: o.sgd_lr_factor,
            scale_exponent: o.scale_exponent,
            weight_decay: o.weight_decay,
            warmup_steps: 100,
            lr_floor: o.lr_floor,
            steps: 5000,
            batch_size: 32,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            benchmarks: Vec::new(),
            probe_batches: 50,
            scale_grid: (-5..=5).collect(),
            sgd_factor_grid: vec![100.0, 200.0, 300.0, 400.0, 500.0, 600.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.corpus_path.is_none() {
            if self.zipf_types < 1 || self.zipf_tokens < 2 {
                return fail(format!("zipf corpus needs types ≥ 1 and tokens ≥ 2, got {} and {}", self.zipf_types, self.zipf_tokens));
            }
            if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
                return fail(format!("zipf_exponent = {}", self.zipf_exponent));
            }
        }
        if self.vocab_cap < 2 {
            return fail(format!("vocab_cap = {}", self.vocab_cap));
        }
        if self.context_length < 1 {
            return fail("context_length must be at least 1".into());
        }
        if !(0.0..=0.5).contains(&self.test_fraction) {
            return fail(format!("test_fraction = {}", self.test_fraction));
        }
        if self.hidden_dim < 1 {
            return fail("hidden_dim must be at least 1".into());
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return fail(format!("init_std = {}", self.init_std));
        }
        self.optim_config().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail("seeds must be distinct".into());
        }
        if self.scale_grid.iter().any(|n| !(-5..=5).contains(n)) {
            return fail("scale_grid values must lie in [-5, 5]".into());
        }
        if self.sgd_factor_grid.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return fail("sgd_factor_grid values must be positive".into());
        }
        Ok(())
    }

    pub fn optim_config(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            momentum: self.momentum,
            sgd_lr_factor: self.sgd_lr_factor,
            scale_exponent: self.scale_exponent,
            weight_decay: self.weight_decay,
            warmup_steps: self.warmup_steps,
            lr_floor: self.lr_floor,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            hidden_dim: self.hidden_dim,
            hidden_layer: self.hidden_layer,
            tie_weights: self.tie_weights,
            head_only_grad: self.head_only_grad,
            init_std: self.init_std,
        }
    }

    /// SHA-256 of the compact JSON form with `out_dir` cleared, hex encoded.
    pub fn hash(&self) -> String {
        let keyed = Self { out_dir: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_string(&keyed).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Directory name of the variant this config trains.
    pub fn variant_name(&self) -> String {
        match self.optimizer {
            OptimizerKind::ScaledCoupled => format!("scaled-coupled-n{}", self.scale_exponent),
            OptimizerKind::Sgd => format!("sgd-f{}", self.sgd_lr_factor),
            k => k.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::from_json(r#"{"stepz": 3}"#).unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"steps": 7, "optimizer": "scaled-coupled", "scale_exponent": -2}"#).unwrap();
        assert_eq!(cfg.steps, 7);
        assert_eq!(cfg.variant_name(), "scaled-coupled-n-2");
        assert_eq!(cfg.hidden_dim, 32);
    }

    #[test]
    fn echo_round_trip() {
        let cfg = ExperimentConfig { lr: 0.1 + 0.2, seeds: vec![4, 9], ..Default::default() };
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn invalid_values() {
        for doc in [
            r#"{"seeds": []}"#,
            r#"{"seeds": [1, 1]}"#,
            r#"{"beta2": 1.0}"#,
            r#"{"scale_exponent": 9}"#,
            r#"{"batch_size": 0}"#,
            r#"{"optimizer": "lion"}"#,
            r#"{"tokenizer": "bpe"}"#,
            r#"{"scale_grid": [0, 6]}"#,
        ] {
            assert!(ExperimentConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { steps: 4999, ..Default::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = ExperimentConfig { out_dir: PathBuf::from("elsewhere"), ..Default::default() };
        assert_eq!(a.hash(), moved.hash());
    }
}
