//! Multi-seed error analysis: sample mean and corrected standard deviation,
//! Gaussian error propagation for a difference of means, the one-sided
//! Student t test at 95% with two degrees of freedom, and the compact
//! `0.123 (4)` result notation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `t` for a one-sided 95% test with `ν = S − 1 = 2` degrees of freedom.
pub const T_95_NU2: f64 = 2.92;

/// Seeds per variant required for the t test.
pub const SEEDS_FOR_TEST: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("sample sizes differ: {0} vs {1}")]
    Mismatch(usize, usize),
    #[error("significance needs {SEEDS_FOR_TEST} seeds per variant (or 1 for a raw difference), got {0}")]
    UnsupportedSeedCount(usize),
    #[error("unknown metric direction {0:?}")]
    UnknownDirection(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::LowerBetter => "lower-better",
            Self::HigherBetter => "higher-better",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lower-better" => Ok(Self::LowerBetter),
            "higher-better" => Ok(Self::HigherBetter),
            _ => Err(StatsError::UnknownDirection(s.to_string())),
        }
    }
}

/// Preferred direction of the compared run metrics.
pub fn metric_direction(name: &str) -> Option<Direction> {
    match name {
        "loss" | "final_loss" | "mu_norm" | "mu_ratio" => Some(Direction::LowerBetter),
        "iso" | "rho" | "kappa" | "rbar" => Some(Direction::HigherBetter),
        _ => None,
    }
}

/// One metric measured once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSample {
    pub metric: String,
    pub direction: Direction,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    /// Corrected (`1/(S−1)`) standard deviation; `None` for a single seed.
    pub std: Option<f64>,
}

pub fn sample_stats(values: &[f64]) -> Result<SampleStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return Ok(SampleStats { n, mean: values[0], std: (n >= 2).then_some(0.0) });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Ok(SampleStats { n, mean, std })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// `d̄ = mean₁ − mean₀`.
    pub mean_diff: f64,
    /// `σ̂_d = √(σ̂₀² + σ̂₁²)`.
    pub sigma_d: Option<f64>,
    /// `t·σ̂_d/√S`.
    pub threshold: Option<f64>,
    /// Whether variant 1 is significantly better than variant 0.
    pub significant: Option<bool>,
    pub t_value_used: Option<f64>,
}

impl SignificanceResult {
    /// Variant (0 or 1) that is significantly better in either direction.
    pub fn winner(&self, direction: Direction) -> Option<usize> {
        let thr = self.threshold?;
        let d = match direction {
            Direction::LowerBetter => -self.mean_diff,
            Direction::HigherBetter => self.mean_diff,
        };
        if d > thr {
            Some(1)
        } else if d < -thr {
            Some(0)
        } else {
            None
        }
    }
}

/// One-sided test of "variant 1 improves on variant 0". Three seeds per
/// variant give the full test; a single seed gives only the raw difference.
pub fn significance(sample0: &[f64], sample1: &[f64], direction: Direction) -> Result<SignificanceResult, StatsError> {
    if sample0.len() != sample1.len() {
        return Err(StatsError::Mismatch(sample0.len(), sample1.len()));
    }
    let s0 = sample_stats(sample0)?;
    let s1 = sample_stats(sample1)?;
    let mean_diff = s1.mean - s0.mean;
    match sample0.len() {
        1 => Ok(SignificanceResult { mean_diff, sigma_d: None, threshold: None, significant: None, t_value_used: None }),
        SEEDS_FOR_TEST => {
            let (sd0, sd1) = (s0.std.unwrap_or(0.0), s1.std.unwrap_or(0.0));
            let sigma_d = (sd0 * sd0 + sd1 * sd1).sqrt();
            let threshold = T_95_NU2 * sigma_d / (SEEDS_FOR_TEST as f64).sqrt();
            let significant = match direction {
                Direction::LowerBetter => mean_diff < -threshold,
                Direction::HigherBetter => mean_diff > threshold,
            };
            Ok(SignificanceResult {
                mean_diff,
                sigma_d: Some(sigma_d),
                threshold: Some(threshold),
                significant: Some(significant),
                t_value_used: Some(T_95_NU2),
            })
        }
        n => Err(StatsError::UnsupportedSeedCount(n)),
    }
}

/// `mean (std)` with the standard deviation's leading significant digit in
/// the last shown decimal place of the mean, or its two leading digits when
/// the first one is 1. A zero or non-finite deviation prints the mean alone.
pub fn format_shorthand(mean: f64, std: f64) -> String {
    if !(std.is_finite() && std > 0.0) {
        return format!("{mean:?}");
    }
    let mut exp = std.log10().floor() as i32;
    let mut digits = (std / 10f64.powi(exp)).round();
    if digits >= 10.0 {
        exp += 1;
        digits = (std / 10f64.powi(exp)).round();
    }
    if digits == 1.0 {
        let two = (std / 10f64.powi(exp - 1)).round();
        if two < 20.0 {
            exp -= 1;
            digits = two;
        }
    }
    if exp <= 0 {
        let decimals = (-exp) as usize;
        format!("{mean:.decimals$} ({})", digits as u64)
    } else {
        let unit = 10f64.powi(exp);
        format!("{} ({})", (mean / unit).round() * unit, digits * unit)
    }
}

/// One row of a variant comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub direction: Direction,
    pub stats0: SampleStats,
    pub stats1: SampleStats,
    pub result: SignificanceResult,
}

impl ComparisonRow {
    pub fn new(sample0: &SeedSample, sample1: &SeedSample) -> Result<Self, StatsError> {
        Ok(Self {
            metric: sample0.metric.clone(),
            direction: sample0.direction,
            stats0: sample_stats(&sample0.values)?,
            stats1: sample_stats(&sample1.values)?,
            result: significance(&sample0.values, &sample1.values, sample0.direction)?,
        })
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{v:?}"))
}

/// CSV `metric,mean0,std0,mean1,std1,diff,threshold,significant`;
/// unavailable quantities are written as `n/a`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "mean0", "std0", "mean1", "std1", "diff", "threshold", "significant"])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            format!("{:?}", r.stats0.mean),
            opt_num(r.stats0.std),
            format!("{:?}", r.stats1.mean),
            opt_num(r.stats1.std),
            format!("{:?}", r.result.mean_diff),
            opt_num(r.result.threshold),
            r.result.significant.map_or_else(|| "n/a".to_string(), |s| s.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table in shorthand notation; the significantly better cell of
/// each row carries a trailing `*`.
pub fn format_table(rows: &[ComparisonRow], label0: &str, label1: &str) -> String {
    let cell = |s: &SampleStats| match s.std {
        Some(sd) => format_shorthand(s.mean, sd),
        None => format!("{:?}", s.mean),
    };
    let mut lines = vec![vec!["metric".to_string(), label0.to_string(), label1.to_string(), "diff".to_string()]];
    for r in rows {
        let winner = r.result.winner(r.direction);
        let mut c0 = cell(&r.stats0);
        let mut c1 = cell(&r.stats1);
        match winner {
            Some(0) => c0.push('*'),
            Some(1) => c1.push('*'),
            _ => {}
        }
        lines.push(vec![r.metric.clone(), c0, c1, format!("{:+.6}", r.result.mean_diff)]);
    }
    let widths: Vec<usize> = (0..4).map(|k| lines.iter().map(|l| l[k].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for l in &lines {
        let padded: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sample_stats_cases() {
        assert_eq!(sample_stats(&[1.0, 2.0, 3.0]).unwrap(), SampleStats { n: 3, mean: 2.0, std: Some(1.0) });
        assert_eq!(sample_stats(&[5.0]).unwrap(), SampleStats { n: 1, mean: 5.0, std: None });
        assert_eq!(sample_stats(&[0.7; 3]).unwrap().std, Some(0.0));
        assert_eq!(sample_stats(&[]), Err(StatsError::Empty));
        assert_eq!(sample_stats(&[f64::NAN]), Err(StatsError::NonFinite));
    }

    #[test]
    fn hand_evaluated_test() {
        let r = significance(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0], Direction::LowerBetter).unwrap();
        assert_eq!(r.mean_diff, -1.0);
        assert!((r.sigma_d.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((r.threshold.unwrap() - 2.92 * 2f64.sqrt() / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.significant, Some(false));
        assert_eq!(r.t_value_used, Some(2.92));
    }

    #[test]
    fn zero_spread_is_significant() {
        let r = significance(&[1.0; 3], &[0.99; 3], Direction::LowerBetter).unwrap();
        assert_eq!(r.threshold, Some(0.0));
        assert_eq!(r.significant, Some(true));
        assert_eq!(r.winner(Direction::LowerBetter), Some(1));
        let r = significance(&[1.0; 3], &[0.99; 3], Direction::HigherBetter).unwrap();
        assert_eq!(r.significant, Some(false));
        assert_eq!(r.winner(Direction::HigherBetter), Some(0));
    }

    #[test]
    fn single_seed_raw_difference() {
        let r = significance(&[2.0], &[2.5], Direction::HigherBetter).unwrap();
        assert_eq!(r.mean_diff, 0.5);
        assert_eq!((r.threshold, r.significant), (None, None));
        assert_eq!(r.winner(Direction::HigherBetter), None);
    }

    #[test]
    fn seed_count_errors() {
        assert_eq!(significance(&[1.0; 3], &[1.0; 2], Direction::LowerBetter), Err(StatsError::Mismatch(3, 2)));
        assert_eq!(significance(&[1.0; 2], &[1.0; 2], Direction::LowerBetter), Err(StatsError::UnsupportedSeedCount(2)));
    }

    #[test]
    fn shorthand_cases() {
        assert_eq!(format_shorthand(0.123, 0.004), "0.123 (4)");
        assert_eq!(format_shorthand(2.0, 0.0), "2.0");
        assert_eq!(format_shorthand(1.2345, 0.0123), "1.234 (12)");
        assert_eq!(format_shorthand(0.85, 0.07), "0.85 (7)");
        assert_eq!(format_shorthand(3.5, 0.0096), "3.500 (10)");
        assert_eq!(format_shorthand(12.34, 0.96), "12.3 (10)");
        assert_eq!(format_shorthand(12.34, 0.5), "12.3 (5)");
        assert_eq!(format_shorthand(1234.0, 56.0), "1230 (60)");
    }

    #[test]
    fn directions() {
        assert_eq!(metric_direction("iso"), Some(Direction::HigherBetter));
        assert_eq!(metric_direction("mu_ratio"), Some(Direction::LowerBetter));
        assert_eq!(metric_direction("mean_row_norm"), None);
        for d in [Direction::LowerBetter, Direction::HigherBetter] {
            assert_eq!(d.as_str().parse::<Direction>().unwrap(), d);
        }
    }

    #[test]
    fn csv_and_table() {
        let s0 = SeedSample { metric: "iso".into(), direction: Direction::HigherBetter, values: vec![0.1, 0.11, 0.12] };
        let s1 = SeedSample { metric: "iso".into(), direction: Direction::HigherBetter, values: vec![0.5, 0.51, 0.52] };
        let row = ComparisonRow::new(&s0, &s1).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(std::slice::from_ref(&row), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("metric,mean0,std0,mean1,std1,diff,threshold,significant\niso,"));
        assert!(text.trim_end().ends_with(",true"));
        let table = format_table(&[row], "adam", "coupled");
        assert!(table.contains("0.510 (10)*"), "{table}");

        let one = |v: f64| SeedSample { metric: "kappa".into(), direction: Direction::HigherBetter, values: vec![v] };
        let row = ComparisonRow::new(&one(1.0), &one(2.0)).unwrap();
        let mut buf = Vec::new();
        write_comparison_csv(&[row], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("kappa,1.0,n/a,2.0,n/a,1.0,n/a,n/a"));
    }

    fn three() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-100.0f64..100.0, 3)
    }

    proptest! {
        #[test]
        fn swap_negates_difference(a in three(), b in three()) {
            let ab = significance(&a, &b, Direction::LowerBetter).unwrap();
            let ba = significance(&b, &a, Direction::LowerBetter).unwrap();
            prop_assert_eq!(ab.mean_diff, -ba.mean_diff);
            prop_assert_eq!(ab.threshold, ba.threshold);
        }

        #[test]
        fn translation_and_scale(a in three(), b in three(), shift in -50.0f64..50.0, c in 0.1f64..10.0) {
            for dir in [Direction::LowerBetter, Direction::HigherBetter] {
                let base = significance(&a, &b, dir).unwrap();
                let sa: Vec<f64> = a.iter().map(|x| x + shift).collect();
                let sb: Vec<f64> = b.iter().map(|x| x + shift).collect();
                let moved = significance(&sa, &sb, dir).unwrap();
                prop_assert!((moved.mean_diff - base.mean_diff).abs() <= 1e-9 * (1.0 + base.mean_diff.abs()));
                prop_assert!((moved.threshold.unwrap() - base.threshold.unwrap()).abs() <= 1e-9 * (1.0 + base.threshold.unwrap()));
                let ca: Vec<f64> = a.iter().map(|x| x * c).collect();
                let cb: Vec<f64> = b.iter().map(|x| x * c).collect();
                let scaled = significance(&ca, &cb, dir).unwrap();
                prop_assert!((scaled.mean_diff - c * base.mean_diff).abs() <= 1e-9 * (1.0 + (c * base.mean_diff).abs()));
                prop_assert!((scaled.threshold.unwrap() - c * base.threshold.unwrap()).abs() <= 1e-9 * (1.0 + c * base.threshold.unwrap()));
                // verdicts agree away from the decision boundary
                let margin = (base.mean_diff.abs() - base.threshold.unwrap()).abs();
                if margin > 1e-6 * (1.0 + base.threshold.unwrap()) {
                    prop_assert_eq!(moved.significant, base.significant);
                    prop_assert_eq!(scaled.significant, base.significant);
                }
            }
        }
    }
}
