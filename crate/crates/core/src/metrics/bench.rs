use serde::Serialize;

use super::MetricsError;
use crate::corpus::Vocabulary;
use crate::linalg::{dot, norm2, pearson, Matrix};

/// Word pairs with gold similarity scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBenchmark {
    pub name: String,
    pub pairs: Vec<(String, String, f64)>,
}

impl SimilarityBenchmark {
    /// Parses `token_a<TAB>token_b<TAB>score` lines; blank lines are skipped.
    pub fn parse_tsv(name: &str, text: &str) -> Result<Self, MetricsError> {
        let bad = |line: usize, reason: String| MetricsError::Benchmark {
            name: name.to_string(),
            reason: format!("line {line}: {reason}"),
        };
        let mut pairs = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(k + 1, format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let score: f64 = fields[2].trim().parse().map_err(|_| bad(k + 1, format!("bad score {:?}", fields[2])))?;
            if !score.is_finite() {
                return Err(bad(k + 1, "non-finite score".into()));
            }
            pairs.push((fields[0].to_string(), fields[1].to_string(), score));
        }
        Ok(Self { name: name.to_string(), pairs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchScore {
    pub name: String,
    pub r: f64,
    pub used: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbarResult {
    pub rbar: f64,
    pub benches: Vec<BenchScore>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm2(a) * norm2(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Per benchmark, the Pearson correlation of embedding cosine similarity with
/// the gold score over resolvable pairs; `rbar` is their unweighted mean.
/// Pairs with a token missing from the vocabulary are skipped and counted.
pub fn rbar(e: &Matrix, vocab: &Vocabulary, benches: &[SimilarityBenchmark]) -> Result<RbarResult, MetricsError> {
    if e.rows() != vocab.len() {
        return Err(MetricsError::Length(format!("{} rows for a vocabulary of {}", e.rows(), vocab.len())));
    }
    if benches.is_empty() {
        return Err(MetricsError::Length("no benchmarks given".into()));
    }
    let mut scores = Vec::with_capacity(benches.len());
    for b in benches {
        let (mut sims, mut gold, mut skipped) = (Vec::new(), Vec::new(), 0);
        for (a, c, score) in &b.pairs {
            match (vocab.resolve(a), vocab.resolve(c)) {
                (Some(i), Some(j)) => {
                    sims.push(cosine(e.row(i), e.row(j)));
                    gold.push(*score);
                }
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("benchmark {}: skipped {skipped} unresolvable pairs", b.name);
        }
        if sims.len() < 2 {
            return Err(MetricsError::Benchmark {
                name: b.name.clone(),
                reason: format!("{} resolvable pairs, need at least 2", sims.len()),
            });
        }
        let r = pearson(&sims, &gold)?.r;
        scores.push(BenchScore { name: b.name.clone(), r, used: sims.len(), skipped });
    }
    let rbar = scores.iter().map(|s| s.r).sum::<f64>() / scores.len() as f64;
    Ok(RbarResult { rbar, benches: scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerMode;
    use crate::rng::SplitMix64;

    fn setup() -> (Matrix, Vocabulary) {
        let text = "a b c d e f g h i j k l";
        let vocab = Vocabulary::build(text, TokenizerMode::Word, 64).unwrap();
        let mut rng = SplitMix64::new(3);
        let e = Matrix::from_fn(vocab.len(), 4, |_, _| rng.normal());
        (e, vocab)
    }

    fn cos_of(e: &Matrix, vocab: &Vocabulary, a: &str, b: &str) -> f64 {
        cosine(e.row(vocab.get(a).unwrap()), e.row(vocab.get(b).unwrap()))
    }

    #[test]
    fn gold_equal_to_cosine_gives_one() {
        let (e, vocab) = setup();
        let words = ["a", "b", "c", "d", "e", "f"];
        let pairs: Vec<_> = words
            .windows(2)
            .map(|w| (w[0].to_string(), w[1].to_string(), cos_of(&e, &vocab, w[0], w[1])))
            .collect();
        let b = SimilarityBenchmark { name: "exact".into(), pairs };
        let r = rbar(&e, &vocab, &[b]).unwrap();
        assert!((r.rbar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_pair_rejected() {
        let (e, vocab) = setup();
        let b = SimilarityBenchmark { name: "one".into(), pairs: vec![("a".into(), "b".into(), 1.0)] };
        assert!(matches!(rbar(&e, &vocab, &[b]), Err(MetricsError::Benchmark { .. })));
    }

    #[test]
    fn ten_pairs_match_oracle() {
        let (e, vocab) = setup();
        let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k"];
        let mut rng = SplitMix64::new(9);
        let pairs: Vec<_> =
            words.windows(2).map(|w| (w[0].to_string(), w[1].to_string(), rng.next_f64() * 10.0)).collect();
        // independent pass: explicit formula with population moments
        let xs: Vec<f64> = pairs.iter().map(|(a, b, _)| cos_of(&e, &vocab, a, b)).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let n = xs.len() as f64;
        let ex = xs.iter().sum::<f64>() / n;
        let ey = ys.iter().sum::<f64>() / n;
        let exy = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / n;
        let exx = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let eyy = ys.iter().map(|y| y * y).sum::<f64>() / n;
        let oracle = (exy - ex * ey) / ((exx - ex * ex) * (eyy - ey * ey)).sqrt();
        let b = SimilarityBenchmark { name: "ten".into(), pairs };
        let got = rbar(&e, &vocab, &[b]).unwrap();
        assert_eq!(got.benches[0].used, 10);
        assert!((got.rbar - oracle).abs() < 1e-10);
    }

    #[test]
    fn unresolvable_pairs_counted_and_mean_taken() {
        let (e, vocab) = setup();
        let mk = |name: &str, scores: [f64; 3]| SimilarityBenchmark {
            name: name.into(),
            pairs: vec![
                ("a".into(), "b".into(), scores[0]),
                ("c".into(), "d".into(), scores[1]),
                ("e".into(), "zzz".into(), 0.0),
                ("f".into(), "g".into(), scores[2]),
            ],
        };
        let r = rbar(&e, &vocab, &[mk("x", [1.0, 2.0, 3.0]), mk("y", [3.0, 1.0, 2.0])]).unwrap();
        assert_eq!(r.benches[0].skipped, 1);
        assert_eq!(r.benches[0].used, 3);
        assert!((r.rbar - (r.benches[0].r + r.benches[1].r) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn parse_tsv() {
        let b = SimilarityBenchmark::parse_tsv("t", "a\tb\t1.5\n\nc\td\t-2\r\n").unwrap();
        assert_eq!(b.pairs, vec![("a".into(), "b".into(), 1.5), ("c".into(), "d".into(), -2.0)]);
        assert!(SimilarityBenchmark::parse_tsv("t", "a b 1").is_err());
        assert!(SimilarityBenchmark::parse_tsv("t", "a\tb\tx").is_err());
    }
}
