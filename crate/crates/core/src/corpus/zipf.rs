use super::CorpusError;
use crate::rng::SplitMix64;

/// Synthetic corpus whose tokens are drawn i.i.d. from a Zipf law
/// `P(rank k) ∝ k^-s` over `types` word types named `w1`, `w2`, ...
#[derive(Debug, Clone)]
pub struct ZipfCorpus {
    cdf: Vec<f64>,
    seed: u64,
}

impl ZipfCorpus {
    pub fn new(types: usize, exponent: f64, seed: u64) -> Result<Self, CorpusError> {
        if types == 0 {
            return Err(CorpusError::BadZipf("need at least one type".into()));
        }
        if !exponent.is_finite() || exponent < 0.0 {
            return Err(CorpusError::BadZipf(format!("exponent {exponent} must be finite and non-negative")));
        }
        let weights: Vec<f64> = (1..=types).map(|k| (k as f64).powf(-exponent)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { cdf, seed })
    }

    pub fn types(&self) -> usize {
        self.cdf.len()
    }

    /// Exact rank probabilities.
    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    /// Zero-based ranks.
    pub fn sample_ids(&self, len: usize) -> Vec<usize> {
        let mut rng = SplitMix64::new(self.seed);
        (0..len)
            .map(|_| {
                let u = rng.next_f64();
                self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
            })
            .collect()
    }

    /// Space-separated words, 16 per line.
    pub fn generate_text(&self, len: usize) -> String {
        let mut out = String::with_capacity(len * 5);
        for (k, id) in self.sample_ids(len).into_iter().enumerate() {
            if k > 0 {
                out.push(if k % 16 == 0 { '\n' } else { ' ' });
            }
            out.push('w');
            out.push_str(&(id + 1).to_string());
        }
        out.push('\n');
        out
    }
}
