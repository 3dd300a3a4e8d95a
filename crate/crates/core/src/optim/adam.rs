//! Adam and the coupled variants for embedding tables.
//!
//! All variants share the moment recursion
//!
//! ```text
//! m ← β₁m + (1−β₁)g          m̂ = m / (1−β₁^τ)
//! v ← β₂v + (1−β₂)g²         v̂ = v / (1−β₂^τ)
//! ```
//!
//! and differ only in the denominator of the update `u = −η·m̂ / (√· + ε)`:
//! Adam uses each element's own `v̂`, Coupled Adam uses the vocabulary mean
//! `ν̂ⱼ = (1/V)·Σᵢ v̂ᵢⱼ` for every row, and the scaled variant uses `2⁻ⁿ·ν̂ⱼ`.
//! The mean is taken over raw `v` and bias-corrected once, which is the same
//! quantity because the correction is a common scalar factor.

use serde::{Deserialize, Serialize};

use super::OptimError;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moments plus the step counter `τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    fn advance(&mut self, hp: &AdamHyper) -> Result<(f64, f64), OptimError> {
        self.step = self.step.checked_add(1).ok_or(OptimError::StepOverflow)?;
        let tau = self.step as f64;
        Ok((1.0 - hp.beta1.powf(tau), 1.0 - hp.beta2.powf(tau)))
    }

    fn update_moments(&mut self, grad: &[f64], hp: &AdamHyper) {
        for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(grad) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        }
    }

    /// Bias-corrected second moment, `None` before the first step.
    pub fn v_hat(&self, beta2: f64) -> Option<Vec<f64>> {
        if self.step == 0 {
            return None;
        }
        let bc2 = 1.0 - beta2.powf(self.step as f64);
        Some(self.v.iter().map(|v| v / bc2).collect())
    }
}

fn check_shapes(param: usize, grad: usize, state: usize) -> Result<(), OptimError> {
    if param != grad || param != state {
        return Err(OptimError::ShapeMismatch { param, grad, state });
    }
    Ok(())
}

/// One Adam step. When `update_sum` is given (length H, with `param` laid out
/// row-major with H columns) each update `uₖ` is added to `update_sum[k % H]`.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    hp: &AdamHyper,
    lr: f64,
    mut update_sum: Option<&mut [f64]>,
) -> Result<(), OptimError> {
    check_shapes(param.len(), grad.len(), state.len())?;
    let (bc1, bc2) = state.advance(hp)?;
    state.update_moments(grad, hp);
    for (k, ((p, m), v)) in param.iter_mut().zip(&state.m).zip(&state.v).enumerate() {
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        let denom = v_hat.sqrt() + hp.epsilon;
        let u = -(lr * m_hat / denom);
        *p += u;
        if let Some(sum) = update_sum.as_deref_mut() {
            let h = sum.len();
            sum[k % h] += u;
        }
    }
    Ok(())
}

/// `ν̂ⱼ` for every column, scaled by `2⁻ⁿ`.
fn coupled_second_moment(state: &AdamState, rows: usize, cols: usize, bc2: f64, scale_exponent: i32) -> Vec<f64> {
    let scale = 2f64.powi(-scale_exponent);
    let mut nu = vec![0.0; cols];
    for i in 0..rows {
        for (n, v) in nu.iter_mut().zip(&state.v[i * cols..(i + 1) * cols]) {
            *n += v;
        }
    }
    nu.iter().map(|n| scale * ((n / rows as f64) / bc2)).collect()
}

/// Scaled Coupled Adam on a V×H embedding table; `scale_exponent = 0` is
/// Coupled Adam.
pub fn scaled_coupled_adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    hp: &AdamHyper,
    lr: f64,
    scale_exponent: i32,
    mut update_sum: Option<&mut [f64]>,
) -> Result<(), OptimError> {
    let (rows, cols) = param.shape();
    if rows < 1 {
        return Err(OptimError::EmptyEmbedding);
    }
    if grad.shape() != (rows, cols) {
        return Err(OptimError::ShapeMismatch { param: rows * cols, grad: grad.rows() * grad.cols(), state: state.len() });
    }
    check_shapes(rows * cols, grad.as_slice().len(), state.len())?;
    let (bc1, bc2) = state.advance(hp)?;
    state.update_moments(grad.as_slice(), hp);
    let nu_hat = coupled_second_moment(state, rows, cols, bc2, scale_exponent);
    let denom: Vec<f64> = nu_hat.iter().map(|n| n.sqrt() + hp.epsilon).collect();
    for i in 0..rows {
        let row = param.row_mut(i);
        for (j, (p, m)) in row.iter_mut().zip(&state.m[i * cols..(i + 1) * cols]).enumerate() {
            let m_hat = m / bc1;
            let u = -(lr * m_hat / denom[j]);
            *p += u;
            if let Some(sum) = update_sum.as_deref_mut() {
                sum[j] += u;
            }
        }
    }
    Ok(())
}

pub fn coupled_adam_step(
    param: &mut Matrix,
    grad: &Matrix,
    state: &mut AdamState,
    hp: &AdamHyper,
    lr: f64,
    update_sum: Option<&mut [f64]>,
) -> Result<(), OptimError> {
    scaled_coupled_adam_step(param, grad, state, hp, lr, 0, update_sum)
}

/// Per-element effective learning rate `η / (√v̂ + ε)` under plain Adam.
pub fn adam_effective_lr(state: &AdamState, rows: usize, cols: usize, hp: &AdamHyper, lr: f64) -> Option<Matrix> {
    let v_hat = state.v_hat(hp.beta2)?;
    let data = v_hat.iter().map(|v| lr / (v.sqrt() + hp.epsilon)).collect();
    Matrix::from_vec(rows, cols, data).ok()
}

/// Effective learning rates under (scaled) coupling; every row is the same
/// H-vector.
pub fn coupled_effective_lr(
    state: &AdamState,
    rows: usize,
    cols: usize,
    hp: &AdamHyper,
    lr: f64,
    scale_exponent: i32,
) -> Option<Matrix> {
    if state.step == 0 {
        return None;
    }
    let bc2 = 1.0 - hp.beta2.powf(state.step as f64);
    let shared: Vec<f64> = coupled_second_moment(state, rows, cols, bc2, scale_exponent)
        .iter()
        .map(|n| lr / (n.sqrt() + hp.epsilon))
        .collect();
    Some(Matrix::from_fn(rows, cols, |_, j| shared[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    const HP: AdamHyper = AdamHyper { beta1: 0.9, beta2: 0.95, epsilon: 1e-8 };

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    /// Head-only style gradient: rows sum to zero per column.
    fn balanced_grad(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut g = random(rows, cols, seed);
        for j in 0..cols {
            let mean = (0..rows).map(|i| g[(i, j)]).sum::<f64>() / rows as f64;
            for i in 0..rows {
                g[(i, j)] -= mean;
            }
        }
        g
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        // m̂ = g, v̂ = g² on the first step, so |u| = η|g|/(|g| + ε) → η
        let hp = AdamHyper { epsilon: 0.0, ..HP };
        for g in [1e-3, -0.5, 7.0] {
            let mut p = [0.0];
            let mut s = AdamState::new(1);
            adam_step(&mut p, &[g], &mut s, &hp, 0.01, None).unwrap();
            assert!((p[0].abs() - 0.01).abs() < 1e-15, "{g}: {}", p[0]);
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn zero_gradient_zero_update() {
        let mut p = [1.5, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &HP, 0.1, None).unwrap();
        assert_eq!(p, [1.5, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(matches!(adam_step(&mut [0.0; 2], &[0.0; 3], &mut s, &HP, 0.1, None), Err(OptimError::ShapeMismatch { .. })));
    }

    #[test]
    fn step_overflow() {
        let mut s = AdamState::new(1);
        s.step = u64::MAX;
        assert_eq!(adam_step(&mut [0.0], &[1.0], &mut s, &HP, 0.1, None), Err(OptimError::StepOverflow));
    }

    #[test]
    fn coupled_mean_of_two_rows() {
        let mut s = AdamState::new(4);
        s.v = vec![0.2, 0.6, 1.0, 0.4];
        s.step = 3;
        let bc2 = 1.0 - 0.95f64.powf(3.0);
        let nu = coupled_second_moment(&s, 2, 2, bc2, 0);
        assert!((nu[0] - (0.2 / bc2 + 1.0 / bc2) / 2.0).abs() < 1e-15);
        assert!((nu[1] - (0.6 / bc2 + 0.4 / bc2) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn coupled_conserves_row_sum() {
        let mut p = random(9, 4, 1);
        let mut s = AdamState::new(36);
        for step in 0..50 {
            let g = balanced_grad(9, 4, 100 + step);
            let mut sum = vec![0.0; 4];
            coupled_adam_step(&mut p, &g, &mut s, &HP, 0.01, Some(&mut sum)).unwrap();
            let scale = 0.01 * 9.0;
            for x in sum {
                assert!(x.abs() <= 1e-10 * scale, "{x}");
            }
        }
    }

    #[test]
    fn adam_does_not_conserve_row_sum() {
        let mut p = random(9, 4, 1);
        let mut s = AdamState::new(36);
        let mut total = 0.0f64;
        for step in 0..5 {
            let mut g = balanced_grad(9, 4, 100 + step);
            // skew: row 0 gets most of the mass
            for j in 0..4 {
                g[(0, j)] *= 50.0;
                let mean = (0..9).map(|i| g[(i, j)]).sum::<f64>() / 9.0;
                for i in 0..9 {
                    g[(i, j)] -= mean;
                }
            }
            let mut sum = vec![0.0; 4];
            adam_step(p.as_mut_slice(), g.as_slice(), &mut s, &HP, 0.01, Some(&mut sum)).unwrap();
            total = total.max(sum.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }
        assert!(total > 1e-4, "{total}");
    }

    #[test]
    fn scaled_zero_is_coupled_bitwise() {
        let mut a = random(5, 3, 2);
        let mut b = a.clone();
        let mut sa = AdamState::new(15);
        let mut sb = AdamState::new(15);
        for step in 0..20 {
            let g = random(5, 3, 50 + step);
            coupled_adam_step(&mut a, &g, &mut sa, &HP, 0.003, None).unwrap();
            scaled_coupled_adam_step(&mut b, &g, &mut sb, &HP, 0.003, 0, None).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn single_row_coupled_equals_adam_bitwise() {
        let mut a = random(1, 6, 3);
        let mut b = a.clone();
        let mut sa = AdamState::new(6);
        let mut sb = AdamState::new(6);
        for step in 0..30 {
            let g = random(1, 6, 70 + step);
            coupled_adam_step(&mut a, &g, &mut sa, &HP, 0.01, None).unwrap();
            adam_step(b.as_mut_slice(), g.as_slice(), &mut sb, &HP, 0.01, None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn scaling_ratio_with_zero_epsilon() {
        let hp = AdamHyper { epsilon: 0.0, ..HP };
        let p0 = random(6, 3, 4);
        let g = random(6, 3, 5);
        let run = |n: i32| {
            let mut p = p0.clone();
            let mut s = AdamState::new(18);
            scaled_coupled_adam_step(&mut p, &g, &mut s, &hp, 0.01, n, None).unwrap();
            let du: Vec<f64> = p.as_slice().iter().zip(p0.as_slice()).map(|(a, b)| a - b).collect();
            du
        };
        let base = run(0);
        let two = run(2);
        for (a, b) in base.iter().zip(&two) {
            assert!((b / a - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coupled_effective_lr_rows_identical() {
        let mut p = random(7, 3, 1);
        let mut s = AdamState::new(21);
        assert!(coupled_effective_lr(&s, 7, 3, &HP, 0.1, 0).is_none());
        coupled_adam_step(&mut p, &random(7, 3, 2), &mut s, &HP, 0.1, None).unwrap();
        let eff = coupled_effective_lr(&s, 7, 3, &HP, 0.1, 0).unwrap();
        for i in 1..7 {
            assert_eq!(eff.row(i), eff.row(0));
        }
        let adam = adam_effective_lr(&s, 7, 3, &HP, 0.1).unwrap();
        assert_ne!(adam.row(1), adam.row(0));
    }

    #[test]
    fn empty_embedding_rejected() {
        let mut p = Matrix::zeros(0, 3);
        let g = Matrix::zeros(0, 3);
        let mut s = AdamState::new(0);
        assert_eq!(coupled_adam_step(&mut p, &g, &mut s, &HP, 0.1, None), Err(OptimError::EmptyEmbedding));
    }
}
