use super::{LinalgError, Matrix};

const MAX_DIM: usize = 4096;
const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-12;

/// Spectral decomposition of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// One unit eigenvector per column, ordered like `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl EigenResult {
    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let n = self.eigenvectors.rows();
        (0..n).map(|r| self.eigenvectors[(r, k)]).collect()
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Sweeps visit pivots `(p, q)` in row-major order of the upper triangle, so
/// the output is bit-reproducible for identical input. Each eigenvector is
/// signed so that its largest-magnitude component (first one on ties) is
/// positive.
pub fn sym_eigen(a: &Matrix) -> Result<EigenResult, LinalgError> {
    let (rows, cols) = a.shape();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    if rows > MAX_DIM {
        return Err(LinalgError::TooLarge(rows));
    }
    a.check_finite()?;
    check_symmetric(a)?;

    let n = rows;
    let mut m = a.as_slice().to_vec();
    let mut v = Matrix::identity(n);
    let vs = v.as_mut_slice();
    let scale = a.frobenius();

    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off.sqrt() <= f64::EPSILON * scale * 1e-3 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[p * n + q] = 0.0;
                    m[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = vs[k * n + p];
                    let vkq = vs[k * n + q];
                    vs[k * n + p] = c * vkp - s * vkq;
                    vs[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep their pivot order
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));

    let eigenvalues = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut lead = 0;
        for r in 0..n {
            if v[(r, src)].abs() > v[(lead, src)].abs() {
                lead = r;
            }
        }
        let sign = if v[(lead, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            eigenvectors[(r, dst)] = sign * v[(r, src)];
        }
    }
    Ok(EigenResult { eigenvalues, eigenvectors })
}

fn check_symmetric(a: &Matrix) -> Result<(), LinalgError> {
    let n = a.rows();
    let tol = SYMMETRY_TOL * a.max_abs();
    let mut worst = (0, 0, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let d = (a[(i, j)] - a[(j, i)]).abs();
            if d > worst.2 {
                worst = (i, j, d);
            }
        }
    }
    if worst.2 > tol {
        let (i, j, diff) = worst;
        return Err(LinalgError::NotSymmetric { i, j, diff, tol });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn random_symmetric(n: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.normal();
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
        }
        m
    }

    #[test]
    fn identity() {
        let r = sym_eigen(&Matrix::identity(2)).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0, 1.0]);
        assert_eq!(r.eigenvectors, Matrix::identity(2));
    }

    #[test]
    fn diagonal() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let r = sym_eigen(&m).unwrap();
        assert_eq!(r.eigenvalues, vec![4.0, 1.0]);
        assert_eq!(r.eigenvector(0), vec![0.0, 1.0]);
        assert_eq!(r.eigenvector(1), vec![1.0, 0.0]);
    }

    #[test]
    fn reconstruction_5x5() {
        let a = random_symmetric(5, 3);
        let r = sym_eigen(&a).unwrap();
        let q = &r.eigenvectors;
        let lambda = Matrix::from_fn(5, 5, |i, j| if i == j { r.eigenvalues[i] } else { 0.0 });
        let rec = q.matmul(&lambda).unwrap().matmul(&q.transpose()).unwrap();
        let err: f64 = rec.as_slice().iter().zip(a.as_slice()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(err.sqrt() < 1e-10, "{}", err.sqrt());
    }

    #[test]
    fn rejects_asymmetric_naming_worst_pair() {
        let mut m = random_symmetric(4, 1);
        m[(1, 3)] += 1e-3;
        m[(0, 2)] += 1e-6;
        match sym_eigen(&m) {
            Err(LinalgError::NotSymmetric { i: 1, j: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_non_square() {
        assert!(matches!(sym_eigen(&Matrix::zeros(2, 3)), Err(LinalgError::NotSquare { .. })));
    }

    #[test]
    fn deterministic() {
        let a = random_symmetric(12, 42);
        assert_eq!(sym_eigen(&a).unwrap(), sym_eigen(&a).unwrap());
    }

    #[test]
    fn sign_convention() {
        let a = random_symmetric(7, 8);
        let r = sym_eigen(&a).unwrap();
        for k in 0..7 {
            let v = r.eigenvector(k);
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(lead > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn residual_and_orthonormality(n in 1usize..=64, seed in any::<u64>()) {
            let a = random_symmetric(n, seed);
            let r = sym_eigen(&a).unwrap();
            let scale = a.max_abs();
            for k in 0..n {
                let v = r.eigenvector(k);
                for i in 0..n {
                    let av: f64 = (0..n).map(|j| a[(i, j)] * v[j]).sum();
                    prop_assert!((av - r.eigenvalues[k] * v[i]).abs() <= 1e-10 * scale);
                }
                for l in k..n {
                    let w = r.eigenvector(l);
                    let d: f64 = v.iter().zip(&w).map(|(x, y)| x * y).sum();
                    let expect = if k == l { 1.0 } else { 0.0 };
                    prop_assert!((d - expect).abs() <= 1e-10);
                }
            }
            for w in r.eigenvalues.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
        }
    }
}
