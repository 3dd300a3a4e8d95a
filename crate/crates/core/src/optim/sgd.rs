use serde::{Deserialize, Serialize};

use super::OptimError;

/// Momentum buffer for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        Self { velocity: vec![0.0; len] }
    }
}

/// `velocity ← γ·velocity + g; param ← param − lr·velocity`. The caller
/// passes `lr = η·f` for embedding groups. `update_sum` works as in
/// [`super::adam_step`].
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
    mut update_sum: Option<&mut [f64]>,
) -> Result<(), OptimError> {
    if param.len() != grad.len() || param.len() != state.velocity.len() {
        return Err(OptimError::ShapeMismatch { param: param.len(), grad: grad.len(), state: state.velocity.len() });
    }
    for (k, ((p, v), g)) in param.iter_mut().zip(state.velocity.iter_mut()).zip(grad).enumerate() {
        *v = momentum * *v + g;
        let u = -(lr * *v);
        *p += u;
        if let Some(sum) = update_sum.as_deref_mut() {
            let h = sum.len();
            sum[k % h] += u;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut p = [0.0];
        let mut s = SgdState::new(1);
        sgd_step(&mut p, &[1.0], &mut s, 0.1, 0.0, None).unwrap();
        assert_eq!(p[0], -0.1);
    }

    #[test]
    fn momentum_two_steps() {
        let mut p = [0.0];
        let mut s = SgdState::new(1);
        sgd_step(&mut p, &[1.0], &mut s, 1.0, 0.9, None).unwrap();
        assert_eq!(p[0], -1.0);
        sgd_step(&mut p, &[1.0], &mut s, 1.0, 0.9, None).unwrap();
        assert!((p[0] - (-1.0 - 1.9)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = SgdState::new(2);
        assert!(sgd_step(&mut [0.0; 2], &[0.0], &mut s, 0.1, 0.0, None).is_err());
    }

    #[test]
    fn balanced_gradient_conserves_sum() {
        // two rows, H = 2, gradients sum to zero per column
        let mut p = [0.3, -0.2, 0.5, 0.1];
        let mut s = SgdState::new(4);
        for k in 0..10 {
            let a = (k as f64).sin();
            let b = (k as f64).cos();
            let mut sum = [0.0; 2];
            sgd_step(&mut p, &[a, b, -a, -b], &mut s, 0.7, 0.9, Some(&mut sum)).unwrap();
            assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
        }
    }
}
