//! Geometry of an embedding table: isotropy, mean-embedding norms,
//! length–frequency correlation, condition number and similarity-benchmark
//! correlation.
//!
//! Tables are V×H with one row per token, so the H×H matrix whose
//! eigenvectors define the isotropy probe directions is `EᵀE` here.

mod bench;

pub use bench::{rbar, BenchScore, RbarResult, SimilarityBenchmark};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm2, pearson, singular_values, sym_eigen, LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("embedding table is {rows}×{cols}, need at least {need_rows} rows and one column")]
    TooSmall { rows: usize, cols: usize, need_rows: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("benchmark {name}: {reason}")]
    Benchmark { name: String, reason: String },
}

fn check_dims(e: &Matrix, need_rows: usize) -> Result<(), MetricsError> {
    if e.rows() < need_rows || e.cols() < 1 {
        return Err(MetricsError::TooSmall { rows: e.rows(), cols: e.cols(), need_rows });
    }
    e.check_finite()?;
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Isotropy {
    pub iso: f64,
    /// Set for an all-zero table, where every direction is equivalent.
    pub degenerate: bool,
}

/// `min Z(c) / max Z(c)` with `Z(c) = Σᵢ exp(c·eᵢ)`, over `c` ranging over
/// both signs of every eigenvector of `EᵀE`. Evaluated in log space.
pub fn isotropy(e: &Matrix) -> Result<Isotropy, MetricsError> {
    check_dims(e, 2)?;
    if e.max_abs() == 0.0 {
        log::warn!("isotropy of an all-zero table is reported as 1");
        return Ok(Isotropy { iso: 1.0, degenerate: true });
    }
    let eig = sym_eigen(&e.gram_cols())?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..e.cols() {
        let c = eig.eigenvector(k);
        let proj: Vec<f64> = e.row_iter().map(|row| dot(&c, row)).collect();
        for sign in [1.0, -1.0] {
            let log_z = log_sum_exp(proj.iter().map(|p| sign * p));
            lo = lo.min(log_z);
            hi = hi.max(log_z);
        }
    }
    Ok(Isotropy { iso: (lo - hi).exp(), degenerate: false })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStats {
    /// `‖μ‖` with `μ = (1/V)Σᵢ eᵢ`.
    pub mu_norm: f64,
    /// `(1/V)Σᵢ ‖eᵢ‖`.
    pub mean_row_norm: f64,
    /// `‖μ‖ / mean_row_norm`, 0 when every row is zero.
    pub mu_ratio: f64,
}

pub fn mean_embedding(e: &Matrix) -> Vec<f64> {
    let mut mu = vec![0.0; e.cols()];
    for row in e.row_iter() {
        for (m, x) in mu.iter_mut().zip(row) {
            *m += x;
        }
    }
    let v = e.rows() as f64;
    mu.iter_mut().for_each(|m| *m /= v);
    mu
}

pub fn mean_embedding_stats(e: &Matrix) -> Result<MeanStats, MetricsError> {
    check_dims(e, 1)?;
    let mu_norm = norm2(&mean_embedding(e));
    let mean_row_norm = e.row_iter().map(norm2).sum::<f64>() / e.rows() as f64;
    let mu_ratio = if mean_row_norm > 0.0 { mu_norm / mean_row_norm } else { 0.0 };
    Ok(MeanStats { mu_norm, mean_row_norm, mu_ratio })
}

/// `100 · pearson(‖eᵢ‖, p̃ᵢ)`.
pub fn rho(e: &Matrix, probs: &[f64]) -> Result<f64, MetricsError> {
    check_dims(e, 2)?;
    if probs.len() != e.rows() {
        return Err(MetricsError::Length(format!("{} probabilities for {} rows", probs.len(), e.rows())));
    }
    let norms: Vec<f64> = e.row_iter().map(norm2).collect();
    Ok(100.0 * pearson(&norms, probs)?.r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub kappa: f64,
    pub degenerate: bool,
}

/// `100 · σ_min / σ_max`.
pub fn kappa(e: &Matrix) -> Result<Kappa, MetricsError> {
    check_dims(e, 1)?;
    let s = singular_values(e)?;
    let (max, min) = (s[0], s[s.len() - 1]);
    if max == 0.0 {
        log::warn!("condition number of an all-zero table is reported as 0");
        return Ok(Kappa { kappa: 0.0, degenerate: true });
    }
    Ok(Kappa { kappa: 100.0 * min / max, degenerate: false })
}

/// The full panel for one embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iso: f64,
    pub mu_norm: f64,
    pub mean_row_norm: f64,
    pub mu_ratio: f64,
    pub rho: f64,
    pub kappa: f64,
    pub rbar: Option<f64>,
}

impl MetricsReport {
    pub const FIELDS: [&'static str; 7] = ["iso", "mu_norm", "mean_row_norm", "mu_ratio", "rho", "kappa", "rbar"];

    pub fn compute(e: &Matrix, probs: &[f64], rbar: Option<f64>) -> Result<Self, MetricsError> {
        let mean = mean_embedding_stats(e)?;
        Ok(Self {
            iso: isotropy(e)?.iso,
            mu_norm: mean.mu_norm,
            mean_row_norm: mean.mean_row_norm,
            mu_ratio: mean.mu_ratio,
            rho: rho(e, probs)?,
            kappa: kappa(e)?.kappa,
            rbar,
        })
    }

    /// Named values in [`Self::FIELDS`] order; `rbar` is omitted when absent.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            ("iso", self.iso),
            ("mu_norm", self.mu_norm),
            ("mean_row_norm", self.mean_row_norm),
            ("mu_ratio", self.mu_ratio),
            ("rho", self.rho),
            ("kappa", self.kappa),
        ];
        if let Some(r) = self.rbar {
            out.push(("rbar", r));
        }
        out
    }

    /// Header plus one data row; an absent `rbar` is an empty field.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::FIELDS)?;
        let mut row: Vec<String> = self.values().iter().take(6).map(|(_, v)| format!("{v:?}")).collect();
        row.push(self.rbar.map(|r| format!("{r:?}")).unwrap_or_default());
        w.write_record(&row)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    fn to_na(e: &Matrix) -> DMatrix<f64> {
        DMatrix::from_row_slice(e.rows(), e.cols(), e.as_slice())
    }

    /// Eigenvectors from nalgebra, Z by direct summation of exponentials.
    fn iso_oracle(e: &Matrix) -> f64 {
        let m = to_na(e);
        let eig = (m.transpose() * &m).symmetric_eigen();
        let mut zs = Vec::new();
        for k in 0..e.cols() {
            let c = eig.eigenvectors.column(k);
            for sign in [1.0, -1.0] {
                let z: f64 = (0..e.rows()).map(|i| (sign * m.row(i).transpose().dot(&c)).exp()).sum();
                zs.push(z);
            }
        }
        zs.iter().copied().fold(f64::INFINITY, f64::min) / zs.iter().copied().fold(0.0, f64::max)
    }

    #[test]
    fn equal_rows_give_e_minus_two() {
        let e = Matrix::from_fn(5, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let iso = isotropy(&e).unwrap();
        assert!((iso.iso - (-2.0f64).exp()).abs() < 1e-10);
        assert!(!iso.degenerate);
    }

    #[test]
    fn symmetric_cross_is_isotropic() {
        let s = 0.6f64.sqrt();
        let t = 0.4f64.sqrt();
        // u = (s, t), w = (-t, s)
        let e = Matrix::from_rows(&[vec![s, t], vec![-s, -t], vec![-t, s], vec![t, -s]]).unwrap();
        assert!((isotropy(&e).unwrap().iso - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_table_is_degenerate() {
        let iso = isotropy(&Matrix::zeros(4, 3)).unwrap();
        assert_eq!(iso, Isotropy { iso: 1.0, degenerate: true });
        assert_eq!(kappa(&Matrix::zeros(4, 3)).unwrap(), Kappa { kappa: 0.0, degenerate: true });
    }

    #[test]
    fn isotropy_matches_oracle() {
        for seed in 0..10 {
            let e = random(32, 8, seed);
            let got = isotropy(&e).unwrap().iso;
            assert!((got - iso_oracle(&e)).abs() < 1e-8, "seed {seed}");
        }
    }

    #[test]
    fn isotropy_survives_large_norms() {
        let mut e = random(16, 4, 3);
        e.as_mut_slice().iter_mut().for_each(|x| *x *= 150.0);
        let iso = isotropy(&e).unwrap().iso;
        assert!(iso.is_finite() && (0.0..=1.0).contains(&iso));
    }

    #[test]
    fn mean_stats_cases() {
        let e = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap();
        let s = mean_embedding_stats(&e).unwrap();
        assert_eq!((s.mu_norm, s.mu_ratio), (0.0, 0.0));
        let e = Matrix::from_fn(3, 2, |_, j| [3.0, 4.0][j]);
        let s = mean_embedding_stats(&e).unwrap();
        assert_eq!((s.mu_norm, s.mean_row_norm, s.mu_ratio), (5.0, 5.0, 1.0));
    }

    #[test]
    fn mean_stats_match_naive() {
        let e = random(20, 5, 8);
        let s = mean_embedding_stats(&e).unwrap();
        let m = to_na(&e);
        let mu = m.row_mean();
        let mean_norm = (0..20).map(|i| m.row(i).norm()).sum::<f64>() / 20.0;
        assert!((s.mu_norm - mu.norm()).abs() < 1e-12);
        assert!((s.mean_row_norm - mean_norm).abs() < 1e-12);
    }

    #[test]
    fn rho_cases() {
        let p = [0.1, 0.3, 0.6];
        let e = Matrix::from_fn(3, 1, |i, _| p[i] * 7.0);
        assert!((rho(&e, &p).unwrap() - 100.0).abs() < 1e-10);
        let e = Matrix::from_fn(3, 1, |i, _| 1.0 - p[i]);
        assert!((rho(&e, &p).unwrap() + 100.0).abs() < 1e-10);
        assert!(matches!(rho(&e, &[0.5, 0.5]), Err(MetricsError::Length(_))));
    }

    #[test]
    fn kappa_cases() {
        assert!((kappa(&Matrix::identity(4)).unwrap().kappa - 100.0).abs() < 1e-12);
        let e = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        assert!(kappa(&e).unwrap().kappa.abs() < 1e-6);
        let e = random(16, 8, 2);
        let sv = to_na(&e).singular_values();
        let (hi, lo) = (sv.max(), sv.min());
        assert!((kappa(&e).unwrap().kappa - 100.0 * lo / hi).abs() < 1e-8);
    }

    #[test]
    fn report_csv_and_json() {
        let e = random(6, 3, 1);
        let p = [0.3, 0.2, 0.2, 0.1, 0.1, 0.1];
        let r = MetricsReport::compute(&e, &p, None).unwrap();
        let json: serde_json::Value = serde_json::to_value(r).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut expect = MetricsReport::FIELDS.to_vec();
        expect.sort_unstable();
        let mut keys = keys;
        keys.sort_unstable();
        assert_eq!(keys, expect);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iso,mu_norm,mean_row_norm,mu_ratio,rho,kappa,rbar");
        assert!(lines[1].ends_with(','));
        let back: MetricsReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    fn orthogonal(n: usize, seed: u64) -> Matrix {
        let a = random(n, n, seed);
        let s = Matrix::from_fn(n, n, |i, j| a[(i, j)] + a[(j, i)]);
        sym_eigen(&s).unwrap().eigenvectors
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn iso_in_unit_interval_and_rotation_invariant(v in 2usize..24, h in 1usize..6, seed in any::<u64>()) {
            let e = random(v, h, seed);
            let iso = isotropy(&e).unwrap().iso;
            prop_assert!((0.0..=1.0).contains(&iso));
            let q = orthogonal(h, seed ^ 1);
            let rotated = e.matmul(&q).unwrap();
            prop_assert!((isotropy(&rotated).unwrap().iso - iso).abs() <= 1e-8);
        }

        #[test]
        fn kappa_transpose_and_scale_invariant(v in 1usize..12, h in 1usize..8, seed in any::<u64>(), c in 0.1f64..10.0) {
            let e = random(v, h, seed);
            let k = kappa(&e).unwrap().kappa;
            prop_assert!((kappa(&e.transpose()).unwrap().kappa - k).abs() <= 1e-10 * 100.0);
            let mut scaled = e.clone();
            scaled.as_mut_slice().iter_mut().for_each(|x| *x *= -c);
            prop_assert!((kappa(&scaled).unwrap().kappa - k).abs() <= 1e-10 * 100.0);
        }

        #[test]
        fn rho_scale_invariant(v in 3usize..20, seed in any::<u64>(), c in 0.01f64..100.0) {
            let e = random(v, 3, seed);
            let mut rng = SplitMix64::new(seed ^ 7);
            let p: Vec<f64> = (0..v).map(|_| rng.next_f64()).collect();
            let mut scaled = e.clone();
            scaled.as_mut_slice().iter_mut().for_each(|x| *x *= c);
            prop_assert!((rho(&scaled, &p).unwrap() - rho(&e, &p).unwrap()).abs() <= 1e-10);
        }
    }
}
